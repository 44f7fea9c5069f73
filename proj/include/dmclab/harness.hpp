#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmclab/bounds.hpp"
#include "dmclab/engine.hpp"
#include "dmclab/stability.hpp"

namespace dmclab::harness {

// A fully resolved experiment document: every key explicit, defaults filled
// in, so the fingerprint covers the whole configuration.
struct ExperimentConfig {
  nlohmann::json doc;

  problems::DatasetSpec dataset() const;
  problems::LossSpec loss() const;
  problems::MinimaxLossSpec minimax() const;
  topology::GossipMatrix gossip() const;
  chain::TransitionMatrix data_chain() const;
  engine::Schedule schedule() const;
  engine::RunConfig run_config() const;  // assembles all of the above
  stability::StabilityConfig stability_config() const;
  stability::PerturbationPlan plan() const;
  bounds::BoundInputs bound_inputs() const;

  std::string task() const;  // "stability" | "run" | "consensus" | "mixing"
  std::uint64_t master_seed() const;
  int jobs() const;
  long budget() const;
};

// Normalizes a raw document: fills defaults, rejects unknown sections, and
// checks cross-references (chain size vs shard size, gossip size vs workers).
ExperimentConfig resolve_config(const nlohmann::json& raw);
ExperimentConfig load_config(const std::filesystem::path& path);

// Built-in, fully resolved experiment presets.
std::vector<std::string> preset_names();
ExperimentConfig preset_experiment(const std::string& name);

// FNV-1a over the canonical dump of the resolved document.
std::uint64_t fingerprint(const ExperimentConfig& config);
std::string fingerprint_hex(const ExperimentConfig& config);

// Full-precision decimal float formatting used by every CSV writer.
std::string csv_double(double value);

// Subcommand entry points; each writes deterministic artifacts under out_dir
// and returns a process exit status.
int cmd_validate(const ExperimentConfig& config);
int cmd_run(const ExperimentConfig& config, const std::filesystem::path& out_dir);
int cmd_stability(const ExperimentConfig& config, const std::filesystem::path& out_dir);
int cmd_bounds(const ExperimentConfig& config, const std::filesystem::path& out_dir,
               const std::string& format);
int cmd_sweep(const ExperimentConfig& config, const std::filesystem::path& out_dir);
int cmd_report(const std::vector<std::filesystem::path>& inputs,
               const std::filesystem::path& out_dir);

// CLI front end (parses argv, dispatches subcommands).
int run_cli(int argc, char** argv);

}  // namespace dmclab::harness
