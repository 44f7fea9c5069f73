#include "dmclab/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dmclab/errors.hpp"

namespace dmclab::bounds {

namespace {
constexpr double kAssertTol = 1e-12;
constexpr double kSqrt2 = 1.4142135623730950488;

void check_common(const BoundInputs& in) {
  if (!(in.consensus_rate >= 0.0 && in.consensus_rate < 1.0))
    throw ParameterError("consensus rate must lie in [0, 1)");
  if (in.workers < 1 || in.per_worker < 1)
    throw ParameterError("worker and shard counts must be positive");
  if (in.lipschitz < 0.0) throw ParameterError("Lipschitz constant must be nonnegative");
  for (double e : in.etas)
    if (e < 0.0) throw ParameterError("stepsizes must be nonnegative");
}

void check_smooth_stepsize(const BoundInputs& in) {
  if (in.smoothness <= 0.0) throw ConfigError("smooth bound requires a smoothness constant");
  const double cap = 2.0 / in.smoothness;
  for (double e : in.etas)
    if (e > cap + kAssertTol) throw ConfigError("smooth-mode stepsize exceeds 2/beta");
}

double fraction_term(double numerator, double mn) { return numerator / mn; }
}  // namespace

double BoundInputs::eta_sum() const { return std::accumulate(etas.begin(), etas.end(), 0.0); }

double BoundInputs::eta_sq_sum() const {
  double s = 0.0;
  for (double e : etas) s += e * e;
  return s;
}

double BoundInputs::constant_eta() const {
  if (etas.empty()) throw ConfigError("empty stepsize schedule");
  for (double e : etas)
    if (std::abs(e - etas.front()) > kAssertTol)
      throw ConfigError("operation requires a constant stepsize schedule");
  return etas.front();
}

double c_lambda(double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0))
    throw ParameterError("c_lambda is defined for lambda in (0, 1)");
  const double log_inv = std::log(1.0 / lambda);
  return (1.0 / (lambda * log_inv)) * (8.0 / (std::exp(2.0) * log_inv) + 2.0);
}

std::vector<double> consensus_weight_sums(const std::vector<double>& etas, double lambda,
                                          SumConvention convention) {
  // Inclusive: S_t = lambda S_{t-1} + eta_t. Lagged: A_t = lambda A_{t-1} + eta_{t-1}.
  // Both recurrences reproduce the direct sums exactly and stay stable as
  // lambda approaches 1.
  const int horizon = static_cast<int>(etas.size());
  std::vector<double> sums(static_cast<std::size_t>(horizon), 0.0);
  double acc = 0.0;
  for (int t = 1; t <= horizon; ++t) {
    if (convention == SumConvention::Inclusive) {
      acc = lambda * acc + etas[static_cast<std::size_t>(t - 1)];
    } else {
      acc = t == 1 ? 0.0 : lambda * acc + etas[static_cast<std::size_t>(t - 2)];
    }
    sums[static_cast<std::size_t>(t - 1)] = acc;
  }
  return sums;
}

double stability_bound_sgd(const BoundInputs& in, bool smooth, SumConvention convention) {
  check_common(in);
  const double mn = static_cast<double>(in.workers) * in.per_worker;
  const auto weights = consensus_weight_sums(in.etas, in.consensus_rate, convention);
  double coupled = 0.0;
  for (int t = 0; t < in.horizon(); ++t)
    coupled += in.etas[static_cast<std::size_t>(t)] * weights[static_cast<std::size_t>(t)];
  if (smooth) {
    check_smooth_stepsize(in);
    return 4.0 * in.smoothness * in.lipschitz * coupled +
           fraction_term(2.0 * in.lipschitz * in.eta_sum(), mn);
  }
  return 2.0 * in.lipschitz * std::sqrt(in.eta_sq_sum()) +
         4.0 * in.lipschitz * std::sqrt(coupled) +
         fraction_term(4.0 * in.lipschitz * in.eta_sum(), mn);
}

double closed_form_stability_bound(const BoundInputs& in, bool smooth, ScheduleKind schedule,
                       NonsmoothVariant variant) {
  check_common(in);
  const double mn = static_cast<double>(in.workers) * in.per_worker;
  const double big_t = static_cast<double>(in.horizon());
  const double lam = in.consensus_rate;
  const double lips = in.lipschitz;

  if (schedule == ScheduleKind::Constant) {
    const double eta = in.constant_eta();
    if (smooth) {
      check_smooth_stepsize(in);
      return 4.0 * eta * eta * in.smoothness * lips * big_t / (1.0 - lam) +
             2.0 * eta * lips * big_t / mn;
    }
    const double network = variant == NonsmoothVariant::SqrtGap
                               ? 4.0 * eta * lips * std::sqrt(big_t) / std::sqrt(1.0 - lam)
                               : 4.0 * eta * lips * std::sqrt(big_t) / (1.0 - lam);
    return 2.0 * lips * eta * std::sqrt(big_t) + network + 4.0 * eta * lips * big_t / mn;
  }

  // Decreasing schedule eta_t = 1/(t+1).
  for (int t = 1; t <= in.horizon(); ++t)
    if (std::abs(in.etas[static_cast<std::size_t>(t - 1)] - 1.0 / (t + 1)) > kAssertTol)
      throw ConfigError("decreasing closed form requires the 1/(t+1) schedule");
  const double clam = c_lambda(lam);
  if (smooth) {
    check_smooth_stepsize(in);
    return 4.0 * in.smoothness * lips * clam * big_t / (big_t + 1.0) +
           2.0 * lips * std::log(big_t + 1.0) / mn;
  }
  return 2.0 * lips + 4.0 * lips * std::sqrt(clam) + 2.0 * lips * std::log(big_t) / mn;
}

double generalization_bound_avg(const BoundInputs& in, bool smooth) {
  check_common(in);
  const double mn = static_cast<double>(in.workers) * in.per_worker;
  const double big_t = static_cast<double>(in.horizon());
  const double eta = in.constant_eta();
  if (smooth) {
    check_smooth_stepsize(in);
    return 2.0 * eta * eta * in.smoothness * in.lipschitz * big_t / (1.0 - in.consensus_rate) +
           eta * in.lipschitz * big_t / mn;
  }
  return 2.0 * in.lipschitz * eta * std::sqrt(big_t) +
         4.0 * eta * in.lipschitz * std::sqrt(big_t) / std::sqrt(1.0 - in.consensus_rate) +
         4.0 * eta * in.lipschitz * big_t / mn;
}

double consensus_bound(const BoundInputs& in, int t, SumConvention convention) {
  check_common(in);
  if (t < 0 || t > in.horizon()) throw ParameterError("step outside the schedule horizon");
  if (t == 0) return 0.0;
  const auto weights = consensus_weight_sums(in.etas, in.consensus_rate, convention);
  return 2.0 * std::sqrt(static_cast<double>(in.workers)) * in.lipschitz *
         weights[static_cast<std::size_t>(t - 1)];
}

double gtc_stability_bound(const BoundInputs& in) {
  check_common(in);
  const double mn = static_cast<double>(in.workers) * in.per_worker;
  return 2.0 * in.lipschitz * in.eta_sum() / mn;
}

double sgda_stability_bound(const BoundInputs& in, bool smooth) {
  check_common(in);
  const double mn = static_cast<double>(in.workers) * in.per_worker;
  const auto weights = consensus_weight_sums(in.etas, in.consensus_rate, SumConvention::Lagged);
  double coupled = 0.0;
  for (int t = 0; t < in.horizon(); ++t)
    coupled += in.etas[static_cast<std::size_t>(t)] * weights[static_cast<std::size_t>(t)];
  if (smooth) {
    if (in.smoothness <= 0.0) throw ConfigError("smooth bound requires a smoothness constant");
    if (in.eta_sum() > 1.0 / (2.0 * in.smoothness) + kAssertTol)
      throw ConfigError("sgda stepsize sum exceeds 1/(2 beta)");
    return 8.0 * kSqrt2 * in.smoothness * in.lipschitz * coupled +
           4.0 * kSqrt2 * in.lipschitz * in.eta_sum() / mn;
  }
  // Order-level form with unit leading constants.
  return std::sqrt(in.eta_sq_sum()) + std::sqrt(coupled) + in.eta_sum() / mn;
}

SgdaGenBounds sgda_generalization_bounds(const BoundInputs& in, bool smooth) {
  check_common(in);
  const double mn = static_cast<double>(in.workers) * in.per_worker;
  const double big_t = static_cast<double>(in.horizon());
  const double eta = in.constant_eta();
  const double lips2 = in.lipschitz * in.lipschitz;
  SgdaGenBounds out;
  if (smooth) {
    if (in.smoothness <= 0.0) throw ConfigError("smooth bound requires a smoothness constant");
    out.weak_pd = 4.0 * kSqrt2 * eta * eta * in.smoothness * lips2 * big_t /
                      (1.0 - in.consensus_rate) +
                  2.0 * kSqrt2 * eta * lips2 * big_t / mn;
    if (in.strong_convexity <= 0.0) {
      out.primal = std::numeric_limits<double>::quiet_NaN();
    } else {
      out.primal = 2.0 * kSqrt2 * lips2 * (1.0 + in.smoothness / in.strong_convexity) *
                   (2.0 * eta * eta * in.smoothness * big_t / (1.0 - in.consensus_rate) +
                    eta * big_t / mn);
    }
    return out;
  }
  out.weak_pd = 2.0 * kSqrt2 * lips2 * eta * std::sqrt(big_t) +
                4.0 * eta * lips2 * std::sqrt(big_t) / std::sqrt(1.0 - in.consensus_rate) +
                4.0 * kSqrt2 * eta * lips2 * big_t / mn;
  if (in.strong_convexity <= 0.0) {
    out.primal = std::numeric_limits<double>::quiet_NaN();
  } else {
    out.primal = 2.0 * kSqrt2 * lips2 * (1.0 + in.smoothness / in.strong_convexity) *
                 (eta * std::sqrt(big_t) +
                  eta * std::sqrt(2.0 * big_t / (1.0 - in.consensus_rate)) +
                  2.0 * eta * big_t / mn);
  }
  return out;
}

double trajectory_diameter(const BoundInputs& in) {
  check_common(in);
  if (in.diameter_override) return *in.diameter_override;
  const auto weights = consensus_weight_sums(in.etas, in.consensus_rate, SumConvention::Lagged);
  const double lips2 = in.lipschitz * in.lipschitz;
  double acc = 0.0;
  for (int s = 1; s <= in.horizon(); ++s)
    acc += in.etas[static_cast<std::size_t>(s - 1)] *
           (lips2 + 2.0 * lips2 * weights[static_cast<std::size_t>(s - 1)] +
            2.0 * in.sup_loss_at_zero);
  return std::sqrt(acc) + in.erm_norm;
}

int truncation_window(int t, const BoundInputs& in) {
  if (!(in.mixing_rate >= 0.5 && in.mixing_rate < 1.0))
    throw ParameterError("mixing rate must lie in [1/2, 1)");
  if (t < 0) throw ParameterError("step must be nonnegative");
  const double diameter = trajectory_diameter(in);
  const double arg = 2.0 * in.mixing_coeff * diameter * in.per_worker * t;
  long raw = in.mixing_cutoff;
  if (arg > 1.0) {
    const double window = std::ceil(std::log(arg) / std::log(1.0 / in.mixing_rate));
    raw = std::max<long>(static_cast<long>(window), in.mixing_cutoff);
  }
  return static_cast<int>(std::min<long>(raw, t));
}

OptimizationBound optimization_bound_convex(const BoundInputs& in, bool smooth) {
  check_common(in);
  const double denom = in.eta_sum();
  if (denom <= 0.0)
    throw UnsupportedError("optimization bound is undefined for an all-zero schedule");
  if (smooth) {
    check_smooth_stepsize(in);
  } else {
    for (double e : in.etas)
      if (in.lipschitz > 0.0 && e > 2.0 / in.lipschitz + kAssertTol)
        throw ConfigError("non-smooth optimization bound requires stepsizes at most 2/L");
  }

  const int horizon = in.horizon();
  const double lips = in.lipschitz;
  const double lips2 = lips * lips;
  const double diameter = trajectory_diameter(in);

  std::vector<double> prefix(static_cast<std::size_t>(horizon) + 1, 0.0);
  for (int t = 1; t <= horizon; ++t)
    prefix[static_cast<std::size_t>(t)] =
        prefix[static_cast<std::size_t>(t - 1)] + in.etas[static_cast<std::size_t>(t - 1)];
  auto eta_range = [&prefix](int lo, int hi) {  // sum of eta_q for q in [lo, hi]
    if (hi < lo) return 0.0;
    const int a = std::max(lo, 1);
    return prefix[static_cast<std::size_t>(hi)] - prefix[static_cast<std::size_t>(a - 1)];
  };

  OptimizationBound out;
  double drift = 0.0;
  for (int t = 1; t <= horizon; ++t) {
    const int window = truncation_window(t, in);
    drift += in.etas[static_cast<std::size_t>(t - 1)] *
             (eta_range(t - window + 1, t) + eta_range(t - window + 1, t - 1));
  }
  out.drift = lips2 * drift / denom;

  out.init = (in.erm_norm * in.erm_norm +
              4.0 * lips * diameter * eta_range(1, in.mixing_cutoff - 1)) /
             (2.0 * denom);

  if (smooth) {
    const auto weights =
        consensus_weight_sums(in.etas, in.consensus_rate, SumConvention::Lagged);
    double coupled = 0.0;
    for (int t = 0; t < horizon; ++t)
      coupled += in.etas[static_cast<std::size_t>(t)] * weights[static_cast<std::size_t>(t)];
    out.consensus = 2.0 * diameter * in.smoothness * lips * coupled / denom;
  } else {
    out.consensus = 2.0 * diameter * lips * denom / denom;  // 2DL sum eta_t / sum eta_t
  }

  double tail = 0.0;
  for (int t = std::max(in.mixing_cutoff, 1); t <= horizon; ++t)
    tail += lips * in.etas[static_cast<std::size_t>(t - 1)] / (2.0 * t);
  out.mixing_tail = tail / denom;

  out.stepsize_quad = lips2 * in.eta_sq_sum() / (2.0 * denom);

  out.total = out.drift + out.init + out.consensus + out.mixing_tail + out.stepsize_quad;
  return out;
}

}  // namespace dmclab::bounds
