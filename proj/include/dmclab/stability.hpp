#pragma once

#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "dmclab/engine.hpp"
#include "dmclab/problems.hpp"

namespace dmclab::stability {

struct Pair {
  int worker = 0;
  int index = 0;
};

struct PerturbationPlan {
  // Empty means every (worker, index) position.
  std::vector<Pair> pairs;
  int replications = 1;
  // When set, each replication samples this many positions instead of
  // enumerating the plan (the replication spread then also carries the
  // pair-sampling error).
  std::optional<int> subsample;
};

enum class OutputKind { Final, Averaged };

// A stability experiment: dataset law + run template. Per replication the
// dataset, the replacement dataset and the index paths are drawn from seeds
// derived from run.seed, and the perturbed runs reuse the exact same paths.
struct StabilityConfig {
  problems::DatasetSpec data;
  engine::RunConfig run;
  OutputKind output = OutputKind::Averaged;
  std::optional<double> bound;  // paired analytic bound value
  int jobs = 1;
  // Diagnostic: use the original dataset as its own replacement source, so
  // every perturbed run is identical to the baseline.
  bool alias_replacement = false;
};

struct StabilityReport {
  double epsilon_hat = 0.0;
  double stderr_ = 0.0;
  Eigen::MatrixXd per_pair;  // workers x per_worker mean distances
  int replications = 0;
  double bound_value = std::numeric_limits<double>::quiet_NaN();
  bool dominated = false;  // epsilon_hat - 2 stderr <= bound_value
};

StabilityReport estimate_stability(const StabilityConfig& config, const PerturbationPlan& plan);

struct GapEstimate {
  double gap = 0.0;
  double stderr_ = 0.0;
  int replications = 0;
};

// Monte Carlo estimate of population risk minus empirical risk at the
// algorithm output over fresh (dataset, seed) replications.
GapEstimate estimate_generalization_gap(const StabilityConfig& config, int replications);

struct ExcessDecomposition {
  double generalization = 0.0;
  double optimization = 0.0;
  double test = 0.0;
  double excess = 0.0;
  double stderr_ = 0.0;  // replication spread of the excess term
  int replications = 0;
};

ExcessDecomposition estimate_excess_decomposition(const StabilityConfig& config,
                                                  int replications);

struct WeakPdGaps {
  double population = 0.0;
  double empirical = 0.0;
  double gen = 0.0;
  int replications = 0;
};

// Weak primal-dual risks of the averaged output pair, with the inner
// optimizations evaluated in closed form on the feasible balls.
WeakPdGaps estimate_weak_pd_gap(const StabilityConfig& config, int replications);

struct PrimalRisks {
  double gen = 0.0;
  double excess = 0.0;
  int replications = 0;
};

PrimalRisks estimate_primal_risk(const StabilityConfig& config, int replications);

}  // namespace dmclab::stability
