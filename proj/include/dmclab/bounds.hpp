#pragma once

#include <optional>
#include <vector>

namespace dmclab::bounds {

// Problem constants consumed by the analytic bound evaluators.
struct BoundInputs {
  std::vector<double> etas;      // eta_1 .. eta_T
  double consensus_rate = 0.0;   // gossip lambda, in [0, 1)
  double lipschitz = 0.0;        // L
  double smoothness = 0.0;       // beta (0 when absent)
  double strong_convexity = 0.0; // rho
  int workers = 1;               // m
  int per_worker = 1;            // n
  double mixing_rate = 0.5;      // data-chain mixing parameter, in [1/2, 1)
  int mixing_cutoff = 0;         // 0 for reversible chains
  double mixing_coeff = 0.0;     // n^{3/2} for reversible chains
  double erm_norm = 0.0;         // norm of the empirical risk minimizer
  double sup_loss_at_zero = 0.0; // sup over samples of f(0, Z)
  double diam_w = 0.0;
  double diam_v = 0.0;
  // Empirical trajectory diameter; overrides the analytic formula when set
  // (diagnostic only, clearly non-analytic).
  std::optional<double> diameter_override;

  int horizon() const { return static_cast<int>(etas.size()); }
  double spectral_gap() const { return 1.0 - consensus_rate; }
  double eta_sum() const;
  double eta_sq_sum() const;
  // Requires a constant schedule; returns its stepsize.
  double constant_eta() const;
};

enum class SumConvention { Inclusive, Lagged };
enum class ScheduleKind { Constant, Decreasing };
enum class NonsmoothVariant { SqrtGap, FullGap };

// (1/(lambda log(1/lambda))) (8/(e^2 log(1/lambda)) + 2), for lambda in (0,1).
double c_lambda(double lambda);

// Per-step geometric consensus weights. Inclusive sums eta_q lambda^{t-q}
// over q = 1..t; Lagged stops one step earlier: eta_q lambda^{t-q-1} over
// q = 1..t-1.
std::vector<double> consensus_weight_sums(const std::vector<double>& etas, double lambda,
                                          SumConvention convention);

// Final-iterate on-average stability of the consensus-then-gradient order.
double stability_bound_sgd(const BoundInputs& inputs, bool smooth,
                           SumConvention convention = SumConvention::Inclusive);

// Closed-form specializations for constant and 1/(t+1) schedules. The
// non-smooth network term comes in a sqrt-gap and a looser full-gap variant.
double closed_form_stability_bound(const BoundInputs& inputs, bool smooth, ScheduleKind schedule,
                       NonsmoothVariant variant = NonsmoothVariant::SqrtGap);

// Generalization of the stepsize-weighted averaged iterate (constant schedule).
double generalization_bound_avg(const BoundInputs& inputs, bool smooth);

// 2 sqrt(m) L sum of geometric consensus weights at step t.
double consensus_bound(const BoundInputs& inputs, int t,
                       SumConvention convention = SumConvention::Inclusive);

// Gradient-then-consensus stability; no consensus term.
double gtc_stability_bound(const BoundInputs& inputs);

// Joint primal-dual stability. The non-smooth form is order-level: evaluated
// with unit leading constants.
double sgda_stability_bound(const BoundInputs& inputs, bool smooth);

struct SgdaGenBounds {
  double weak_pd = 0.0;
  double primal = 0.0;
};
SgdaGenBounds sgda_generalization_bounds(const BoundInputs& inputs, bool smooth);

// Analytic trajectory diameter used by the optimization bound.
double trajectory_diameter(const BoundInputs& inputs);

// Lookback horizon of the Markov optimization-error analysis at step t.
int truncation_window(int t, const BoundInputs& inputs);

struct OptimizationBound {
  double drift = 0.0;         // truncation-window drift term
  double init = 0.0;          // initialization + pre-cutoff term
  double consensus = 0.0;     // network disagreement term
  double mixing_tail = 0.0;   // geometric mixing tail
  double stepsize_quad = 0.0; // quadratic stepsize term
  double total = 0.0;
};

// Empirical-risk suboptimality bound of the averaged iterate for convex
// losses; per-term breakdown plus total.
OptimizationBound optimization_bound_convex(const BoundInputs& inputs, bool smooth);

}  // namespace dmclab::bounds
