#include <doctest.h>

#include <cmath>
#include <vector>

#include "dmclab/bounds.hpp"
#include "dmclab/errors.hpp"

using namespace dmclab;
using namespace dmclab::bounds;

namespace {

BoundInputs inputs_of(std::vector<double> etas, double lambda, double lips, double beta, int m,
                      int n) {
  BoundInputs in;
  in.etas = std::move(etas);
  in.consensus_rate = lambda;
  in.lipschitz = lips;
  in.smoothness = beta;
  in.workers = m;
  in.per_worker = n;
  return in;
}

std::vector<double> constant(double eta, int horizon) {
  return std::vector<double>(static_cast<std::size_t>(horizon), eta);
}

std::vector<double> decreasing(int horizon) {
  std::vector<double> etas;
  for (int t = 1; t <= horizon; ++t) etas.push_back(1.0 / (t + 1));
  return etas;
}

// Direct double-loop oracle for sum_t eta_t sum_q eta_q lambda^{power}.
double coupled_sum_oracle(const std::vector<double>& etas, double lambda, bool lagged) {
  const int horizon = static_cast<int>(etas.size());
  double total = 0.0;
  for (int t = 1; t <= horizon; ++t) {
    double inner = 0.0;
    const int hi = lagged ? t - 1 : t;
    for (int q = 1; q <= hi; ++q)
      inner += etas[q - 1] * std::pow(lambda, lagged ? t - q - 1 : t - q);
    total += etas[t - 1] * inner;
  }
  return total;
}

}  // namespace

TEST_CASE("c_lambda closed form") {
  // Frozen from the defining formula (1/(l log(1/l)))(8/(e^2 log(1/l)) + 2).
  CHECK(c_lambda(0.5) == doctest::Approx(10.277702732584556).epsilon(1e-14));
  CHECK(c_lambda(1.0 / 3) == doctest::Approx(8.152557273890638).epsilon(1e-12));
  CHECK_THROWS_AS(c_lambda(0.0), ParameterError);
  CHECK_THROWS_AS(c_lambda(1.0), ParameterError);
}

TEST_CASE("geometric tail bound holds on the test grid") {
  for (double lambda : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    const double cap = c_lambda(lambda);
    double acc = 0.0;  // sum over q <= t-1 of lambda^{t-1-q} / (q+1)
    for (int t = 1; t <= 2000; ++t) {
      if (t >= 2) acc = lambda * acc + 1.0 / t;
      CHECK(acc <= cap / t + 1e-15);
    }
  }
}

TEST_CASE("consensus weight sums match the direct double loop") {
  const std::vector<double> etas = decreasing(40);
  for (double lambda : {0.0, 0.4, 0.95}) {
    for (const auto conv : {SumConvention::Inclusive, SumConvention::Lagged}) {
      const auto sums = consensus_weight_sums(etas, lambda, conv);
      double total = 0.0;
      for (int t = 1; t <= 40; ++t) total += etas[t - 1] * sums[t - 1];
      CHECK(total == doctest::Approx(coupled_sum_oracle(etas, lambda,
                                                        conv == SumConvention::Lagged))
                         .epsilon(1e-12));
    }
  }
}

TEST_CASE("final-iterate stability bound, smooth case") {
  BoundInputs zero = inputs_of(constant(0.0, 10), 0.5, 1.0, 1.0, 4, 25);
  CHECK(stability_bound_sgd(zero, true) == 0.0);

  BoundInputs in = inputs_of(constant(0.01, 100), 0.5, 1.0, 1.0, 4, 25);
  // Exact value from the double-loop oracle; the closed form 0.10
  // must dominate it.
  const double oracle =
      4.0 * coupled_sum_oracle(in.etas, 0.5, false) + 2.0 / 100.0 * 0.01 * 100;
  CHECK(stability_bound_sgd(in, true) == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(stability_bound_sgd(in, true) == doctest::Approx(0.0992).epsilon(1e-10));
  CHECK(closed_form_stability_bound(in, true, ScheduleKind::Constant) == doctest::Approx(0.10).epsilon(1e-14));
  CHECK(stability_bound_sgd(in, true) <= closed_form_stability_bound(in, true, ScheduleKind::Constant));

  // Complete graph: the consensus sum collapses to eta per step.
  BoundInputs flat = inputs_of(constant(0.01, 100), 0.0, 1.0, 1.0, 4, 25);
  const double expected = 4.0 * 1.0 * 1.0 * 0.01 * 0.01 * 100 + 2.0 * 0.01 * 100 / 100.0;
  CHECK(stability_bound_sgd(flat, true) == doctest::Approx(expected).epsilon(1e-14));

  BoundInputs hot = inputs_of(constant(3.0, 10), 0.5, 1.0, 1.0, 4, 25);
  CHECK_THROWS_AS(stability_bound_sgd(hot, true), ConfigError);
}

TEST_CASE("final-iterate stability bound, non-smooth case") {
  BoundInputs in = inputs_of(constant(0.01, 100), 0.5, 2.0, 0.0, 4, 25);
  const double coupled = coupled_sum_oracle(in.etas, 0.5, false);
  const double oracle = 2.0 * 2.0 * std::sqrt(100 * 0.0001) + 4.0 * 2.0 * std::sqrt(coupled) +
                        4.0 * 2.0 * 0.01 * 100 / 100.0;
  CHECK(stability_bound_sgd(in, false) == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("closed forms per schedule") {
  BoundInputs dec = inputs_of(decreasing(100), 0.5, 1.0, 1.0, 4, 25);
  const double smooth_dec = 4.0 * c_lambda(0.5) * 100.0 / 101.0 + 2.0 * std::log(101.0) / 100.0;
  CHECK(closed_form_stability_bound(dec, true, ScheduleKind::Decreasing) ==
        doctest::Approx(smooth_dec).epsilon(1e-13));
  const double nonsmooth_dec = 2.0 + 4.0 * std::sqrt(c_lambda(0.5)) + 2.0 * std::log(100.0) / 100.0;
  CHECK(closed_form_stability_bound(dec, false, ScheduleKind::Decreasing) ==
        doctest::Approx(nonsmooth_dec).epsilon(1e-13));

  // Schedule/kind mismatches are rejected.
  CHECK_THROWS_AS(closed_form_stability_bound(dec, true, ScheduleKind::Constant), ConfigError);
  BoundInputs con = inputs_of(constant(0.01, 100), 0.5, 1.0, 1.0, 4, 25);
  CHECK_THROWS_AS(closed_form_stability_bound(con, true, ScheduleKind::Decreasing), ConfigError);

  // Non-smooth constant: the sqrt-gap variant sits below the full-gap one.
  BoundInputs hinge = inputs_of(constant(0.01, 100), 0.5, 1.0, 0.0, 4, 25);
  const double tight_variant = closed_form_stability_bound(hinge, false, ScheduleKind::Constant);
  const double loose_variant =
      closed_form_stability_bound(hinge, false, ScheduleKind::Constant, NonsmoothVariant::FullGap);
  const double expected_main = 2.0 * 0.01 * 10.0 + 4.0 * 0.01 * 10.0 / std::sqrt(0.5) +
                               4.0 * 0.01 * 100.0 / 100.0;
  CHECK(tight_variant == doctest::Approx(expected_main).epsilon(1e-13));
  CHECK(tight_variant < loose_variant);
}

TEST_CASE("smooth decreasing closed form approaches its horizon limit from below") {
  const double limit = 4.0 * c_lambda(0.5);  // beta = L = 1
  BoundInputs dec = inputs_of(decreasing(1000000), 0.5, 1.0, 1.0, 1000, 1000);
  const double first_term = closed_form_stability_bound(dec, true, ScheduleKind::Decreasing) -
                            2.0 * std::log(1000001.0) / 1000000.0;
  CHECK(first_term <= limit);
  CHECK(limit - first_term <= 1e-4 * limit);
}

TEST_CASE("averaged-iterate generalization bound") {
  BoundInputs zero = inputs_of(constant(0.0, 10), 0.5, 1.0, 1.0, 4, 25);
  CHECK(generalization_bound_avg(zero, true) == 0.0);

  BoundInputs in = inputs_of(constant(0.01, 100), 0.5, 1.0, 1.0, 4, 25);
  CHECK(generalization_bound_avg(in, true) == doctest::Approx(0.05).epsilon(1e-14));

  BoundInputs hinge = inputs_of(constant(0.01, 100), 0.0, 1.0, 0.0, 4, 25);
  const double expected = 6.0 * 0.01 * 10.0 + 4.0 * 0.01 * 100.0 / 100.0;
  CHECK(generalization_bound_avg(hinge, false) == doctest::Approx(expected).epsilon(1e-13));

  BoundInputs dec = inputs_of(decreasing(10), 0.5, 1.0, 1.0, 4, 25);
  CHECK_THROWS_AS(generalization_bound_avg(dec, true), ConfigError);
}

TEST_CASE("consensus bound values") {
  BoundInputs in = inputs_of(constant(0.1, 5), 0.5, 1.0, 1.0, 4, 8);
  CHECK(consensus_bound(in, 0) == 0.0);
  CHECK(consensus_bound(in, 3) == doctest::Approx(0.7).epsilon(1e-14));
  BoundInputs flat = inputs_of(constant(0.1, 5), 0.0, 1.0, 1.0, 4, 8);
  CHECK(consensus_bound(flat, 3) == doctest::Approx(2.0 * 2.0 * 0.1).epsilon(1e-14));
  CHECK_THROWS_AS(consensus_bound(in, 6), ParameterError);
}

TEST_CASE("gradient-then-consensus stability bound") {
  BoundInputs zero = inputs_of(constant(0.0, 10), 0.5, 1.0, 1.0, 4, 8);
  CHECK(gtc_stability_bound(zero) == 0.0);
  BoundInputs in = inputs_of(constant(0.01, 100), 0.5, 1.0, 1.0, 4, 8);
  CHECK(gtc_stability_bound(in) == doctest::Approx(0.0625).epsilon(1e-14));
  BoundInputs doubled = inputs_of(constant(0.01, 100), 0.5, 1.0, 1.0, 4, 16);
  CHECK(gtc_stability_bound(doubled) == doctest::Approx(0.03125).epsilon(1e-14));
}

TEST_CASE("sgda stability bound") {
  BoundInputs zero = inputs_of(constant(0.0, 10), 0.5, 1.0, 1.0, 4, 8);
  CHECK(sgda_stability_bound(zero, true) == 0.0);

  BoundInputs in = inputs_of(constant(0.001, 100), 0.5, 1.0, 1.0, 4, 8);
  // Frozen from the exact double-loop evaluation of the printed formula.
  CHECK(sgda_stability_bound(in, true) == doctest::Approx(0.0198951563954647).epsilon(1e-12));
  const double oracle = 8.0 * std::sqrt(2.0) * coupled_sum_oracle(in.etas, 0.5, true) +
                        4.0 * std::sqrt(2.0) / 32.0 * 0.1;
  CHECK(sgda_stability_bound(in, true) == doctest::Approx(oracle).epsilon(1e-12));

  // Complete graph: only the q = t-1 term of the inner sum survives, so the
  // consensus part carries T - 1 terms.
  BoundInputs flat = inputs_of(constant(0.001, 100), 0.0, 1.0, 1.0, 4, 8);
  const double first = 8.0 * std::sqrt(2.0) * 1.0 * 1.0 * 0.001 * 0.001 * 99.0;
  CHECK(sgda_stability_bound(flat, true) ==
        doctest::Approx(first + 4.0 * std::sqrt(2.0) / 32.0 * 0.1).epsilon(1e-12));

  BoundInputs hot = inputs_of(constant(0.01, 100), 0.5, 1.0, 1.0, 4, 8);
  CHECK_THROWS_AS(sgda_stability_bound(hot, true), ConfigError);  // sum 1.0 > 1/(2 beta)
  CHECK(sgda_stability_bound(hot, false) > 0.0);  // order-level form has no sum condition
}

TEST_CASE("sgda generalization bounds") {
  BoundInputs in = inputs_of(constant(0.001, 100), 0.5, 1.0, 1.0, 4, 8);
  in.strong_convexity = 2.0;
  const SgdaGenBounds g = sgda_generalization_bounds(in, true);
  CHECK(g.weak_pd == doctest::Approx(0.009970205614730322).epsilon(1e-12));
  const double no_ratio = 2.0 * std::sqrt(2.0) * (2.0 * 1e-6 * 100.0 / 0.5 + 0.001 * 100.0 / 32.0);
  CHECK(g.primal == doctest::Approx((1.0 + 1.0 / 2.0) * no_ratio).epsilon(1e-12));

  // The strong-concavity amplification vanishes as rho grows.
  in.strong_convexity = 1e12;
  CHECK(sgda_generalization_bounds(in, true).primal == doctest::Approx(no_ratio).epsilon(1e-9));

  in.strong_convexity = 0.0;
  CHECK(std::isnan(sgda_generalization_bounds(in, true).primal));

  const SgdaGenBounds ns = sgda_generalization_bounds(in, false);
  const double expected_weak = 2.0 * std::sqrt(2.0) * 0.001 * 10.0 +
                               4.0 * 0.001 * 10.0 / std::sqrt(0.5) +
                               4.0 * std::sqrt(2.0) * 0.001 * 100.0 / 32.0;
  CHECK(ns.weak_pd == doctest::Approx(expected_weak).epsilon(1e-12));
}

TEST_CASE("truncation window") {
  BoundInputs in = inputs_of(constant(0.01, 20), 0.5, 1.0, 1.0, 1, 4);
  in.mixing_rate = 0.5;
  in.mixing_cutoff = 0;
  in.mixing_coeff = 8.0;  // 4^{3/2}
  in.diameter_override = 1.0;
  CHECK(truncation_window(10, in) == 10);  // ceil(log2(640)) = 10, clipped at t
  CHECK(truncation_window(20, in) == 11);  // ceil(log2(1280)) = 11

  // Near-degenerate mixing: the raw window explodes and t clips it.
  BoundInputs slow = in;
  slow.mixing_rate = 0.999;
  CHECK(truncation_window(1, slow) == 1);

  // Argument of the logarithm at most one: clipped to the cutoff.
  BoundInputs tiny = in;
  tiny.diameter_override = 1e-9;
  CHECK(truncation_window(1, tiny) == 0);

  BoundInputs bad = in;
  bad.mixing_rate = 1.0;
  CHECK_THROWS_AS(truncation_window(1, bad), ParameterError);
}

TEST_CASE("trajectory diameter") {
  BoundInputs idle = inputs_of(constant(0.0, 5), 0.5, 1.0, 1.0, 2, 4);
  idle.erm_norm = 0.7;
  CHECK(trajectory_diameter(idle) == doctest::Approx(0.7));

  BoundInputs in = inputs_of(constant(0.1, 3), 0.5, 2.0, 1.0, 2, 4);
  in.erm_norm = 0.5;
  in.sup_loss_at_zero = 0.3;
  // Direct evaluation of sum_s eta (L^2 + 2 L^2 A_s + 2 sup) with
  // A_1 = 0, A_2 = 0.1, A_3 = 0.15.
  const double inner = 0.1 * (4.0 + 0.6) + 0.1 * (4.0 + 8.0 * 0.1 + 0.6) +
                       0.1 * (4.0 + 8.0 * 0.15 + 0.6);
  CHECK(trajectory_diameter(in) == doctest::Approx(std::sqrt(inner) + 0.5).epsilon(1e-13));
}

TEST_CASE("optimization bound: hand evaluation at horizon one") {
  BoundInputs in = inputs_of(constant(0.1, 1), 0.5, 1.0, 1.0, 2, 4);
  in.mixing_rate = 0.5;
  in.mixing_cutoff = 0;
  in.mixing_coeff = 8.0;
  in.erm_norm = 0.4;
  in.sup_loss_at_zero = 0.2;
  const OptimizationBound out = optimization_bound_convex(in, true);
  // D = sqrt(eta (L^2 + 2 sup)) + D0.
  const double diameter = std::sqrt(0.1 * (1.0 + 0.4)) + 0.4;
  // T_1 = min(max(ceil(log(2 C D n)/log 2), 0), 1); argument 2*8*D*4 > 1.
  CHECK(truncation_window(1, in) == 1);
  const double denom = 0.1;
  CHECK(out.drift == doctest::Approx((0.1 * 0.1) / denom).epsilon(1e-13));
  CHECK(out.init == doctest::Approx(0.4 * 0.4 / (2.0 * denom)).epsilon(1e-13));
  CHECK(out.consensus == doctest::Approx(0.0).epsilon(1e-15));  // empty appendix sum at T=1
  CHECK(out.mixing_tail == doctest::Approx((0.1 / 2.0) / denom).epsilon(1e-13));
  CHECK(out.stepsize_quad == doctest::Approx(0.01 / (2.0 * denom)).epsilon(1e-13));
  CHECK(out.total ==
        doctest::Approx(out.drift + out.init + out.consensus + out.mixing_tail +
                        out.stepsize_quad));
  (void)diameter;

  CHECK_THROWS_AS(optimization_bound_convex(inputs_of(constant(0.0, 3), 0.5, 1.0, 1.0, 2, 4), true),
                  UnsupportedError);
}

TEST_CASE("optimization bound: complete graph drops the smooth consensus sum to its floor") {
  BoundInputs in = inputs_of(constant(0.05, 6), 0.0, 1.0, 1.0, 2, 4);
  in.mixing_rate = 0.5;
  in.mixing_coeff = 8.0;
  in.erm_norm = 0.2;
  in.sup_loss_at_zero = 0.1;
  const OptimizationBound out = optimization_bound_convex(in, true);
  const double diameter = trajectory_diameter(in);
  // Lagged-convention sum at lambda = 0 keeps only q = t - 1.
  const double expected = 2.0 * diameter * 0.05 * 0.05 * 5.0 / (0.05 * 6.0);
  CHECK(out.consensus == doctest::Approx(expected).epsilon(1e-12));

  const OptimizationBound rough = optimization_bound_convex(in, false);
  CHECK(rough.consensus == doctest::Approx(2.0 * diameter).epsilon(1e-12));
}

TEST_CASE("bound monotonicity across problem sizes") {
  auto smooth_closed_form = [](int horizon, int m, int n, double lambda) {
    BoundInputs in = inputs_of(constant(0.01, horizon), lambda, 1.0, 1.0, m, n);
    return closed_form_stability_bound(in, true, ScheduleKind::Constant);
  };
  CHECK(smooth_closed_form(50, 4, 8, 0.5) <= smooth_closed_form(100, 4, 8, 0.5));
  CHECK(smooth_closed_form(100, 4, 16, 0.5) <= smooth_closed_form(100, 4, 8, 0.5));
  CHECK(smooth_closed_form(100, 8, 8, 0.5) <= smooth_closed_form(100, 4, 8, 0.5));
  CHECK(smooth_closed_form(100, 4, 8, 0.3) <= smooth_closed_form(100, 4, 8, 0.7));

  for (bool smooth : {true, false}) {
    for (double lambda : {0.1, 0.5, 0.9}) {
      for (int horizon : {10, 50}) {
        BoundInputs a = inputs_of(constant(0.01, horizon), lambda, 1.0, 1.0, 4, 8);
        CHECK(stability_bound_sgd(a, smooth, SumConvention::Lagged) <=
              stability_bound_sgd(a, smooth, SumConvention::Inclusive) + 1e-15);
        BoundInputs d = inputs_of(decreasing(horizon), lambda, 1.0, 1.0, 4, 8);
        CHECK(stability_bound_sgd(d, smooth, SumConvention::Lagged) <=
              stability_bound_sgd(d, smooth, SumConvention::Inclusive) + 1e-15);
      }
    }
  }
}
