#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "dmclab/chain.hpp"
#include "dmclab/problems.hpp"
#include "dmclab/topology.hpp"

namespace dmclab::engine {

enum class UpdateOrder { ConsensusThenGradient, GradientThenConsensus };
enum class Mode { Sgd, Sgda };

UpdateOrder order_from_tag(std::string_view tag);  // "ctg" / "gtc"
std::string_view order_tag(UpdateOrder order);

struct Schedule {
  enum class Kind { Constant, Decreasing, Explicit };
  Kind kind = Kind::Constant;
  double eta = 0.0;
  std::vector<double> values;

  static Schedule constant(double eta);
  static Schedule decreasing();  // eta_t = 1/(t+1)
  static Schedule explicit_list(std::vector<double> values);

  // eta_1 .. eta_T; throws ConfigError on negative entries or size mismatch.
  std::vector<double> resolve(int horizon) const;
};

struct RecordFlags {
  bool per_node = false;         // keep final per-node states
  bool consensus = true;         // record per-step consensus error
  bool grad_norm = false;        // record |subgradient of empirical risk| at the node mean
  bool sampled_indices = true;   // keep the index paths
};

struct RunConfig {
  Mode mode = Mode::Sgd;
  UpdateOrder order = UpdateOrder::ConsensusThenGradient;
  problems::LossSpec loss;            // sgd mode
  problems::MinimaxLossSpec minimax;  // sgda mode
  topology::GossipMatrix gossip;
  chain::TransitionMatrix chain;
  Schedule schedule;
  int horizon = 0;  // T
  Eigen::VectorXd init_w;  // empty = zeros
  Eigen::VectorXd init_v;
  std::uint64_t seed = 0;
  RecordFlags record;
  // Diagnostic: every worker replays worker 0's index path on worker 0's
  // shard, so all nodes see identical gradients.
  bool lockstep_diagnostic = false;
};

struct Trajectory {
  Eigen::MatrixXd node_mean_w;  // (T+1) x d, row t = average iterate after step t
  Eigen::MatrixXd node_mean_v;  // sgda only
  Eigen::VectorXd avg_w;        // stepsize-weighted average over t = 1..T
  Eigen::VectorXd avg_v;
  std::vector<double> consensus_error;  // size T+1 when recorded
  Eigen::MatrixXi indices;              // T x m sampled index paths
  std::vector<double> grad_norm;        // size T when recorded
  std::vector<double> etas;             // resolved schedule
  Eigen::MatrixXd final_w;              // m x d when per_node recorded
  Eigen::MatrixXd final_v;

  Eigen::VectorXd final_mean_w() const {
    return node_mean_w.row(node_mean_w.rows() - 1).transpose();
  }
  Eigen::VectorXd final_mean_v() const {
    return node_mean_v.row(node_mean_v.rows() - 1).transpose();
  }
};

// Per-worker index paths: one chain per worker over its own shard, initial
// state uniform, advanced one state per iteration. T x m.
Eigen::MatrixXi sample_index_paths(const RunConfig& config, int per_worker);

// Validates the configuration (throws ConfigError before any step) and
// simulates the decentralized trajectory. Deterministic given config + seed.
Trajectory run(const RunConfig& config, const problems::Dataset& data);
Trajectory run(const RunConfig& config, const problems::Dataset& data,
               const Eigen::MatrixXi& preset_indices);

// Dispersion of per-node iterates around their average at step t; requires
// consensus recording.
double consensus_error(const Trajectory& trajectory, int t);

}  // namespace dmclab::engine
