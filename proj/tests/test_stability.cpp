#include <doctest.h>

#include <cmath>

#include "dmclab/bounds.hpp"
#include "dmclab/errors.hpp"
#include "dmclab/stability.hpp"

using namespace dmclab;
using namespace dmclab::stability;

namespace {

problems::DatasetSpec spec_of(int m, int n, int d, std::uint64_t seed, double noise = 0.0) {
  problems::DatasetSpec spec;
  spec.dist = problems::Distribution::LinearRegression;
  spec.workers = m;
  spec.per_worker = n;
  spec.dim = d;
  spec.noise = noise;
  spec.seed = seed;
  return spec;
}

StabilityConfig sgd_config(int m, int n, int d, double eta, int horizon,
                           problems::LossKind kind = problems::LossKind::LeastSquares,
                           double radius = 1.0, double noise = 0.0) {
  StabilityConfig config;
  config.data = spec_of(m, n, d, 7000, noise);
  const problems::Dataset probe = problems::synth_dataset(config.data);
  config.run.loss = problems::LossSpec::certify(kind, probe.feature_bound, probe.label_bound, radius);
  config.run.gossip = m >= 3 ? topology::build(topology::Kind::Ring, m)
                             : topology::build(topology::Kind::Complete, m);
  config.run.chain = chain::build(chain::Family::Uniform, n);
  config.run.schedule = engine::Schedule::constant(eta);
  config.run.horizon = horizon;
  config.run.seed = 90210;
  return config;
}

StabilityConfig sgda_config(int m, int n, int d, double coupling, double rho, double eta,
                            int horizon) {
  StabilityConfig config;
  config.data = spec_of(m, n, d, 7100, 0.1);
  const problems::Dataset probe = problems::synth_dataset(config.data);
  config.run.mode = engine::Mode::Sgda;
  config.run.minimax = problems::MinimaxLossSpec::certify(
      coupling * Eigen::MatrixXd::Identity(d, d), 1.0, 1.0, rho, probe.feature_bound,
      probe.label_bound, 1.0, 1.0);
  config.run.gossip = m >= 3 ? topology::build(topology::Kind::Ring, m)
                             : topology::build(topology::Kind::Complete, m);
  config.run.chain = chain::build(chain::Family::Uniform, n);
  config.run.schedule = engine::Schedule::constant(eta);
  config.run.horizon = horizon;
  config.run.seed = 90211;
  return config;
}

}  // namespace

TEST_CASE("zero loss is perfectly stable") {
  StabilityConfig config = sgd_config(2, 2, 1, 0.1, 5, problems::LossKind::Zero);
  PerturbationPlan plan;
  plan.replications = 3;
  const StabilityReport report = estimate_stability(config, plan);
  CHECK(report.epsilon_hat == 0.0);
  CHECK(report.stderr_ == 0.0);
  CHECK(report.per_pair.maxCoeff() == 0.0);
}

TEST_CASE("aliasing the replacement source yields exact zeros") {
  StabilityConfig config = sgd_config(3, 4, 2, 0.05, 20);
  config.alias_replacement = true;
  PerturbationPlan plan;
  plan.replications = 2;
  const StabilityReport report = estimate_stability(config, plan);
  CHECK(report.epsilon_hat == 0.0);
}

TEST_CASE("replication count must be positive") {
  StabilityConfig config = sgd_config(2, 2, 1, 0.1, 2);
  PerturbationPlan plan;
  plan.replications = 0;
  CHECK_THROWS_AS(estimate_stability(config, plan), ParameterError);
}

TEST_CASE("one-step estimate matches the transition enumeration oracle") {
  // m = 1, n = 2, T = 1: the only randomness is the first sampled index,
  // uniform over the two states for the uniform chain. The expected distance
  // for the pair (0, k) is eta |grad(w0; z_k) - grad(w0; z~_k)| / 2, and the
  // estimate averages the two pairs.
  StabilityConfig config = sgd_config(1, 2, 1, 0.1, 1, problems::LossKind::LeastSquares, 5.0);
  config.output = OutputKind::Final;
  PerturbationPlan plan;
  plan.replications = 4000;

  const StabilityReport report = estimate_stability(config, plan);

  // Oracle: enumerate the index distribution replication by replication.
  double expected = 0.0;
  for (int rep = 0; rep < plan.replications; ++rep) {
    const std::uint64_t rep_seed =
        derive_seed(config.run.seed, 0xA11CE, static_cast<std::uint64_t>(rep));
    problems::DatasetSpec base_spec = config.data;
    base_spec.seed = derive_seed(rep_seed, 301);
    problems::DatasetSpec tilde_spec = config.data;
    tilde_spec.seed = derive_seed(rep_seed, 302);
    const problems::Dataset base = problems::synth_dataset(base_spec);
    const problems::Dataset tilde = problems::synth_dataset(tilde_spec);
    const Eigen::VectorXd w0 = Eigen::VectorXd::Zero(1);
    double rep_total = 0.0;
    for (int k = 0; k < 2; ++k) {
      const double dist = 0.1 * (problems::grad(config.run.loss, w0, base.at(0, k)) -
                                 problems::grad(config.run.loss, w0, tilde.at(0, k)))
                                    .norm();
      rep_total += 0.5 * dist;  // first index hits k with probability 1/2
    }
    expected += rep_total / 2.0;  // average over the two pairs
  }
  expected /= plan.replications;
  CHECK(std::abs(report.epsilon_hat - expected) <= 4.0 * report.stderr_ + 1e-9);
}

TEST_CASE("estimates are deterministic and bound pairing works") {
  StabilityConfig config = sgd_config(4, 4, 2, 0.01, 30, problems::LossKind::Logistic);
  bounds::BoundInputs inputs;
  inputs.etas = config.run.schedule.resolve(30);
  inputs.consensus_rate = config.run.gossip.consensus_rate;
  inputs.lipschitz = config.run.loss.lipschitz;
  inputs.smoothness = config.run.loss.smoothness.value();
  inputs.workers = 4;
  inputs.per_worker = 4;
  config.bound = bounds::closed_form_stability_bound(inputs, true, bounds::ScheduleKind::Constant);
  PerturbationPlan plan;
  plan.replications = 4;
  const StabilityReport a = estimate_stability(config, plan);
  const StabilityReport b = estimate_stability(config, plan);
  CHECK(a.epsilon_hat == b.epsilon_hat);
  CHECK(a.stderr_ == b.stderr_);
  CHECK(a.per_pair == b.per_pair);
  CHECK(a.bound_value == config.bound.value());
  CHECK(a.epsilon_hat > 0.0);
  CHECK(a.dominated);

  config.jobs = 4;
  const StabilityReport parallel = estimate_stability(config, plan);
  CHECK(parallel.epsilon_hat == a.epsilon_hat);
}

TEST_CASE("subsampled plans estimate the same quantity") {
  StabilityConfig config = sgd_config(3, 4, 2, 0.02, 20);
  PerturbationPlan full;
  full.replications = 6;
  PerturbationPlan sub;
  sub.replications = 6;
  sub.subsample = 5;
  const StabilityReport a = estimate_stability(config, full);
  const StabilityReport b = estimate_stability(config, sub);
  CHECK(std::abs(a.epsilon_hat - b.epsilon_hat) <= 3.0 * (a.stderr_ + b.stderr_) + 1e-6);
}

TEST_CASE("perturbed runs consume the exact same index paths") {
  StabilityConfig config = sgd_config(3, 4, 2, 0.05, 25);
  const problems::Dataset base = problems::synth_dataset(config.data);
  problems::DatasetSpec tilde_spec = config.data;
  tilde_spec.seed = config.data.seed + 1;
  const problems::Dataset tilde = problems::synth_dataset(tilde_spec);
  const Eigen::MatrixXi paths = engine::sample_index_paths(config.run, 4);
  const engine::Trajectory a = engine::run(config.run, base, paths);
  problems::Dataset perturbed = base;
  perturbed.at(1, 2) = tilde.at(1, 2);
  const engine::Trajectory b = engine::run(config.run, perturbed, paths);
  CHECK(a.indices == paths);
  CHECK(b.indices == paths);
  // Identical up to the first visit of the replaced position.
  CHECK((a.node_mean_w.row(0) - b.node_mean_w.row(0)).norm() == 0.0);
}

TEST_CASE("generalization gap of the zero loss vanishes") {
  StabilityConfig config = sgd_config(2, 2, 1, 0.1, 5, problems::LossKind::Zero);
  const GapEstimate gap = estimate_generalization_gap(config, 4);
  CHECK(gap.gap == 0.0);
}

TEST_CASE("interpolating least squares generalizes from above") {
  // Radius covers the planted optimum; with a long horizon the output sits
  // near the empirical minimizer, so population risk dominates empirical.
  StabilityConfig config = sgd_config(2, 16, 2, 0.05, 400);
  const GapEstimate gap = estimate_generalization_gap(config, 12);
  CHECK(gap.gap >= -3.0 * gap.stderr_);
}

TEST_CASE("the gap band tightens as the local sample count grows") {
  StabilityConfig small = sgd_config(1, 8, 2, 0.05, 20);
  StabilityConfig large = sgd_config(1, 512, 2, 0.05, 20);
  large.run.chain = chain::build(chain::Family::Uniform, 512);
  const GapEstimate narrow = estimate_generalization_gap(large, 8);
  const GapEstimate wide = estimate_generalization_gap(small, 8);
  CHECK(std::abs(narrow.gap) <= 3.0 * narrow.stderr_ + 5e-3);
  CHECK(std::abs(narrow.gap) <= std::abs(wide.gap) + 3.0 * (narrow.stderr_ + wide.stderr_));
}

TEST_CASE("excess risk decomposition sums exactly and the test term is non-positive") {
  StabilityConfig config = sgd_config(2, 4, 1, 0.05, 50);
  const ExcessDecomposition decomposition = estimate_excess_decomposition(config, 6);
  CHECK(decomposition.generalization + decomposition.optimization + decomposition.test ==
        doctest::Approx(decomposition.excess).epsilon(1e-12));
  CHECK(decomposition.test <= 1e-10);
  CHECK(decomposition.optimization >= -1e-10);
}

TEST_CASE("forcing the output to the empirical minimizer zeroes the optimization term") {
  const problems::Dataset data = problems::synth_dataset(spec_of(2, 4, 1, 123));
  const problems::LossSpec loss = problems::LossSpec::certify(
      problems::LossKind::LeastSquares, data.feature_bound, data.label_bound, 1.0);
  const Eigen::VectorXd erm = problems::erm_reference(loss, data, 1.0);
  const double opt =
      problems::empirical_risk(loss, erm, data) - problems::empirical_risk(loss, erm, data);
  CHECK(opt == 0.0);
}

TEST_CASE("weak primal-dual gaps vanish for the zero instance") {
  StabilityConfig config = sgda_config(2, 3, 2, 0.0, 0.5, 0.0, 5);
  config.run.minimax =
      problems::MinimaxLossSpec::certify(Eigen::MatrixXd::Zero(2, 2), 0.0, 0.0, 0.5, 1.0, 1.0,
                                         1.0, 1.0);
  const WeakPdGaps gaps = estimate_weak_pd_gap(config, 3);
  CHECK(gaps.population == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(gaps.empirical == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(gaps.gen == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("weak primal-dual estimates are finite and deterministic on a live instance") {
  StabilityConfig config = sgda_config(4, 4, 2, 0.4, 0.6, 0.002, 50);
  const WeakPdGaps a = estimate_weak_pd_gap(config, 5);
  const WeakPdGaps b = estimate_weak_pd_gap(config, 5);
  CHECK(a.population == b.population);
  CHECK(a.empirical == b.empirical);
  CHECK(a.population >= 0.0);  // sup minus inf of the same objective
  CHECK(std::isfinite(a.gen));
}

TEST_CASE("primal risks need a strongly concave dual") {
  StabilityConfig bilinear = sgda_config(2, 3, 2, 0.4, 0.0, 0.002, 10);
  CHECK_THROWS_AS(estimate_primal_risk(bilinear, 2), UnsupportedError);

  StabilityConfig strong = sgda_config(3, 4, 2, 0.4, 0.6, 0.002, 50);
  const PrimalRisks risks = estimate_primal_risk(strong, 5);
  CHECK(std::isfinite(risks.gen));
  CHECK(risks.excess >= -1e-9);  // output cannot beat the primal minimizer
}

TEST_CASE("block mirror symmetry leaves the joint estimate invariant") {
  // Negating the objective and exchanging blocks maps the family onto
  // itself; with identical seeds the coupled trajectories mirror exactly.
  const double coupling = 0.4, rho = 0.5;
  StabilityConfig config = sgda_config(3, 4, 2, coupling, rho, 0.002, 60);
  StabilityConfig mirrored = config;
  {
    const problems::Dataset probe = problems::synth_dataset(config.data);
    mirrored.run.minimax = problems::MinimaxLossSpec::certify(
        -coupling * Eigen::MatrixXd::Identity(2, 2), config.run.minimax.c_scale,
        config.run.minimax.b_scale, rho, probe.feature_bound, probe.label_bound,
        config.run.minimax.radius_v, config.run.minimax.radius_w);
  }
  PerturbationPlan plan;
  plan.replications = 4;
  const StabilityReport a = estimate_stability(config, plan);
  const StabilityReport b = estimate_stability(mirrored, plan);
  CHECK(a.epsilon_hat == b.epsilon_hat);
  CHECK(a.stderr_ == b.stderr_);
}
