#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "dmclab/rng.hpp"

namespace dmclab::problems {

struct Sample {
  Eigen::VectorXd x;
  double y = 0.0;
};

enum class Distribution { LinearRegression, LogisticLabels };

Distribution distribution_from_tag(std::string_view tag);
std::string_view distribution_tag(Distribution dist);

struct DatasetSpec {
  Distribution dist = Distribution::LinearRegression;
  int workers = 1;     // m
  int per_worker = 1;  // n
  int dim = 1;         // d
  double feature_radius = 1.0;  // features drawn uniformly from this ball
  double planted_norm = 0.5;    // norm of the planted parameter
  double noise = 0.0;           // uniform label noise half-width (regression only)
  std::uint64_t seed = 0;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<std::vector<Sample>> shards;  // workers x per_worker
  Eigen::VectorXd planted;
  double feature_bound = 0.0;
  double label_bound = 0.0;

  int workers() const { return spec.workers; }
  int per_worker() const { return spec.per_worker; }
  int dim() const { return spec.dim; }
  const Sample& at(int worker, int index) const { return shards[worker][index]; }
  Sample& at(int worker, int index) { return shards[worker][index]; }
  long total() const { return static_cast<long>(spec.workers) * spec.per_worker; }
};

Dataset synth_dataset(const DatasetSpec& spec);
Sample draw_sample(const DatasetSpec& spec, const Eigen::VectorXd& planted, Rng& rng);

enum class LossKind { Zero, LeastSquares, Logistic, Hinge };

LossKind loss_from_tag(std::string_view tag);
std::string_view loss_tag(LossKind kind);

// Loss family with constants certified analytically from the feature bound,
// label bound and projection radius.
struct LossSpec {
  LossKind kind = LossKind::LeastSquares;
  double lipschitz = 0.0;
  std::optional<double> smoothness;  // absent for hinge
  double radius = 1.0;

  static LossSpec certify(LossKind kind, double feature_bound, double label_bound,
                          double radius);
};

double value(const LossSpec& loss, const Eigen::VectorXd& w, const Sample& z);
Eigen::VectorXd grad(const LossSpec& loss, const Eigen::VectorXd& w, const Sample& z);

// Euclidean ball projection; idempotent and non-expansive.
Eigen::VectorXd project(const Eigen::VectorXd& x, double radius);

double empirical_risk(const LossSpec& loss, const Eigen::VectorXd& w, const Dataset& data);
Eigen::VectorXd empirical_risk_subgrad(const LossSpec& loss, const Eigen::VectorXd& w,
                                       const Dataset& data);

struct RiskEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
  long draws = 0;  // 0 means closed form
};

// Closed form for noiseless least squares on the planted regression
// distribution; Monte Carlo with reported standard error otherwise.
RiskEstimate population_risk(const LossSpec& loss, const Eigen::VectorXd& w,
                             const Dataset& data, long mc_draws = 1000000,
                             std::uint64_t mc_seed = 0x5DEECE66DULL);

// Population risk minimizer: the planted parameter for least squares,
// a large-sample ERM proxy otherwise (draw count reported by the caller).
Eigen::VectorXd population_minimizer(const LossSpec& loss, const Dataset& data,
                                     long proxy_samples = 32768,
                                     std::uint64_t proxy_seed = 0x2545F4914F6CDD1DULL);

// Deterministic empirical risk minimizer reference.
Eigen::VectorXd erm_reference(const LossSpec& loss, const Dataset& data, double radius);

// ---------------------------------------------------------------------------
// Minimax losses: f(w,v;z) = w'A v + b(z)'w - c(z)'v + rho/2 (|w|^2 - |v|^2)
// with A fixed, b(z) = b_scale * y * x and c(z) = c_scale * y * x. Negating
// the objective and exchanging the blocks maps the family onto itself
// (A -> -A', b_scale <-> c_scale, radii swapped), which the tests exploit.
// ---------------------------------------------------------------------------

struct MinimaxLossSpec {
  Eigen::MatrixXd coupling;       // A
  double b_scale = 0.0;
  double c_scale = 0.0;
  double strong_convexity = 0.0;  // rho; 0 = plain bilinear saddle
  double radius_w = 1.0;
  double radius_v = 1.0;
  double lipschitz = 0.0;         // certified joint gradient bound
  double smoothness = 0.0;        // certified joint smoothness

  static MinimaxLossSpec certify(Eigen::MatrixXd coupling, double b_scale, double c_scale,
                                 double rho, double feature_bound, double label_bound,
                                 double radius_w, double radius_v);
};

struct MinimaxGrad {
  Eigen::VectorXd gw;
  Eigen::VectorXd gv;
};

double minimax_value(const MinimaxLossSpec& loss, const Eigen::VectorXd& w,
                     const Eigen::VectorXd& v, const Sample& z);
MinimaxGrad grad_minimax(const MinimaxLossSpec& loss, const Eigen::VectorXd& w,
                         const Eigen::VectorXd& v, const Sample& z);

// Aggregated linear coefficients of the saddle objective over a dataset
// (empirical) or the generating distribution (population; closed form for
// the regression distribution only).
struct SaddleCoeffs {
  Eigen::VectorXd b;
  Eigen::VectorXd c;
};

SaddleCoeffs empirical_saddle_coeffs(const MinimaxLossSpec& loss, const Dataset& data);
SaddleCoeffs population_saddle_coeffs(const MinimaxLossSpec& loss, const Dataset& data);

double saddle_risk(const MinimaxLossSpec& loss, const SaddleCoeffs& coeffs,
                   const Eigen::VectorXd& w, const Eigen::VectorXd& v);

// max over |v| <= radius of g'v - rho/2 |v|^2 (closed form).
double max_linear_minus_quad(const Eigen::VectorXd& g, double rho, double radius);

// Inner optimizations of the saddle risk on the feasible balls.
double max_over_dual(const MinimaxLossSpec& loss, const SaddleCoeffs& coeffs,
                     const Eigen::VectorXd& w);
double min_over_primal(const MinimaxLossSpec& loss, const SaddleCoeffs& coeffs,
                       const Eigen::VectorXd& v);

// argmin over the primal ball of the inner-maximized objective.
Eigen::VectorXd primal_risk_minimizer(const MinimaxLossSpec& loss, const SaddleCoeffs& coeffs);

}  // namespace dmclab::problems
