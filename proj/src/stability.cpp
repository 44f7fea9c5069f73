#include "dmclab/stability.hpp"

#include <cmath>

#include "dmclab/errors.hpp"
#include "dmclab/parallel.hpp"
#include "dmclab/rng.hpp"

namespace dmclab::stability {

namespace {
constexpr std::uint64_t kDataStream = 301;
constexpr std::uint64_t kTildeStream = 302;
constexpr std::uint64_t kPathStream = 303;
constexpr std::uint64_t kSubsampleStream = 304;

struct MeanStd {
  double mean = 0.0;
  double stderr_ = 0.0;
};

MeanStd mean_stderr(const std::vector<double>& values) {
  MeanStd out;
  const auto count = static_cast<double>(values.size());
  for (double v : values) out.mean += v;
  out.mean /= count;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.stderr_ = std::sqrt(ss / (count - 1.0) / count);
  }
  return out;
}

std::vector<Pair> resolve_pairs(const PerturbationPlan& plan, const problems::DatasetSpec& spec,
                                std::uint64_t rep_seed) {
  std::vector<Pair> pairs = plan.pairs;
  if (pairs.empty()) {
    pairs.reserve(static_cast<std::size_t>(spec.workers) * spec.per_worker);
    for (int r = 0; r < spec.workers; ++r)
      for (int k = 0; k < spec.per_worker; ++k) pairs.push_back({r, k});
  }
  for (const Pair& p : pairs)
    if (p.worker < 0 || p.worker >= spec.workers || p.index < 0 || p.index >= spec.per_worker)
      throw ParameterError("perturbation pair outside the dataset");
  if (plan.subsample && *plan.subsample > 0 &&
      *plan.subsample < static_cast<int>(pairs.size())) {
    Rng rng(derive_seed(rep_seed, kSubsampleStream));
    std::vector<Pair> chosen;
    chosen.reserve(static_cast<std::size_t>(*plan.subsample));
    for (int i = 0; i < *plan.subsample; ++i)
      chosen.push_back(pairs[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pairs.size())))]);
    return chosen;
  }
  return pairs;
}

struct RepRun {
  problems::Dataset data;
  engine::Trajectory trajectory;
  engine::RunConfig config;
  Eigen::MatrixXi paths;
};

// One baseline run per replication: fresh dataset and fresh index paths, all
// derived from the replication seed.
RepRun baseline_run(const StabilityConfig& config, int rep) {
  RepRun out;
  const std::uint64_t rep_seed = derive_seed(config.run.seed, 0xA11CE, static_cast<std::uint64_t>(rep));
  problems::DatasetSpec spec = config.data;
  spec.seed = derive_seed(rep_seed, kDataStream);
  out.data = problems::synth_dataset(spec);
  out.config = config.run;
  out.config.seed = derive_seed(rep_seed, kPathStream);
  out.paths = engine::sample_index_paths(out.config, spec.per_worker);
  out.trajectory = engine::run(out.config, out.data, out.paths);
  return out;
}

Eigen::VectorXd output_w(const StabilityConfig& config, const engine::Trajectory& t) {
  return config.output == OutputKind::Final ? t.final_mean_w() : t.avg_w;
}

Eigen::VectorXd output_v(const StabilityConfig& config, const engine::Trajectory& t) {
  return config.output == OutputKind::Final ? t.final_mean_v() : t.avg_v;
}

}  // namespace

StabilityReport estimate_stability(const StabilityConfig& config, const PerturbationPlan& plan) {
  if (plan.replications < 1) throw ParameterError("replication count must be positive");
  const bool sgda = config.run.mode == engine::Mode::Sgda;
  const int workers = config.data.workers;
  const int per_worker = config.data.per_worker;

  std::vector<double> rep_means(static_cast<std::size_t>(plan.replications), 0.0);
  Eigen::MatrixXd pair_totals = Eigen::MatrixXd::Zero(workers, per_worker);
  Eigen::MatrixXd pair_counts = Eigen::MatrixXd::Zero(workers, per_worker);
  std::vector<Eigen::MatrixXd> rep_pair_totals(static_cast<std::size_t>(plan.replications));
  std::vector<Eigen::MatrixXd> rep_pair_counts(static_cast<std::size_t>(plan.replications));

  parallel_for(plan.replications, config.jobs, [&](int rep) {
    const std::uint64_t rep_seed =
        derive_seed(config.run.seed, 0xA11CE, static_cast<std::uint64_t>(rep));
    RepRun base = baseline_run(config, rep);

    problems::Dataset tilde;
    if (config.alias_replacement) {
      tilde = base.data;
    } else {
      problems::DatasetSpec tilde_spec = config.data;
      tilde_spec.seed = derive_seed(rep_seed, kTildeStream);
      tilde = problems::synth_dataset(tilde_spec);
    }

    const Eigen::VectorXd base_w = output_w(config, base.trajectory);
    const Eigen::VectorXd base_v = sgda ? output_v(config, base.trajectory) : Eigen::VectorXd();

    const std::vector<Pair> pairs = resolve_pairs(plan, config.data, rep_seed);
    Eigen::MatrixXd totals = Eigen::MatrixXd::Zero(workers, per_worker);
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(workers, per_worker);
    double sum = 0.0;
    for (const Pair& pair : pairs) {
      problems::Dataset perturbed = base.data;
      perturbed.at(pair.worker, pair.index) = tilde.at(pair.worker, pair.index);
      // Same chain paths and initialization: the only difference is the
      // replaced sample.
      const engine::Trajectory alt = engine::run(base.config, perturbed, base.paths);
      double dist = (output_w(config, alt) - base_w).norm();
      if (sgda) dist += (output_v(config, alt) - base_v).norm();
      sum += dist;
      totals(pair.worker, pair.index) += dist;
      counts(pair.worker, pair.index) += 1.0;
    }
    rep_means[static_cast<std::size_t>(rep)] = sum / static_cast<double>(pairs.size());
    rep_pair_totals[static_cast<std::size_t>(rep)] = totals;
    rep_pair_counts[static_cast<std::size_t>(rep)] = counts;
  });

  for (int rep = 0; rep < plan.replications; ++rep) {
    pair_totals += rep_pair_totals[static_cast<std::size_t>(rep)];
    pair_counts += rep_pair_counts[static_cast<std::size_t>(rep)];
  }

  StabilityReport report;
  const MeanStd agg = mean_stderr(rep_means);
  report.epsilon_hat = agg.mean;
  report.stderr_ = agg.stderr_;
  report.replications = plan.replications;
  report.per_pair = Eigen::MatrixXd::Zero(workers, per_worker);
  for (int r = 0; r < workers; ++r)
    for (int k = 0; k < per_worker; ++k)
      if (pair_counts(r, k) > 0.0) report.per_pair(r, k) = pair_totals(r, k) / pair_counts(r, k);
  if (config.bound) {
    report.bound_value = *config.bound;
    report.dominated = report.epsilon_hat - 2.0 * report.stderr_ <= report.bound_value;
  }
  return report;
}

GapEstimate estimate_generalization_gap(const StabilityConfig& config, int replications) {
  if (replications < 1) throw ParameterError("replication count must be positive");
  std::vector<double> gaps(static_cast<std::size_t>(replications), 0.0);
  parallel_for(replications, config.jobs, [&](int rep) {
    RepRun base = baseline_run(config, rep);
    const Eigen::VectorXd out = output_w(config, base.trajectory);
    const problems::RiskEstimate pop =
        problems::population_risk(config.run.loss, out, base.data);
    const double emp = problems::empirical_risk(config.run.loss, out, base.data);
    gaps[static_cast<std::size_t>(rep)] = pop.value - emp;
  });
  const MeanStd agg = mean_stderr(gaps);
  return {agg.mean, agg.stderr_, replications};
}

ExcessDecomposition estimate_excess_decomposition(const StabilityConfig& config,
                                                  int replications) {
  if (replications < 1) throw ParameterError("replication count must be positive");
  std::vector<double> gen(static_cast<std::size_t>(replications), 0.0);
  std::vector<double> opt(static_cast<std::size_t>(replications), 0.0);
  std::vector<double> test(static_cast<std::size_t>(replications), 0.0);
  std::vector<double> excess(static_cast<std::size_t>(replications), 0.0);
  parallel_for(replications, config.jobs, [&](int rep) {
    RepRun base = baseline_run(config, rep);
    const Eigen::VectorXd out = output_w(config, base.trajectory);
    const problems::LossSpec& loss = config.run.loss;
    const Eigen::VectorXd erm = problems::erm_reference(loss, base.data, loss.radius);
    const Eigen::VectorXd pop_min = problems::population_minimizer(loss, base.data);

    const double pop_out = problems::population_risk(loss, out, base.data).value;
    const double emp_out = problems::empirical_risk(loss, out, base.data);
    const double emp_erm = problems::empirical_risk(loss, erm, base.data);
    const double pop_min_value = problems::population_risk(loss, pop_min, base.data).value;

    const auto i = static_cast<std::size_t>(rep);
    gen[i] = pop_out - emp_out;
    opt[i] = emp_out - emp_erm;
    test[i] = emp_erm - pop_min_value;
    excess[i] = gen[i] + opt[i] + test[i];
  });
  ExcessDecomposition out;
  out.generalization = mean_stderr(gen).mean;
  out.optimization = mean_stderr(opt).mean;
  out.test = mean_stderr(test).mean;
  const MeanStd ex = mean_stderr(excess);
  out.excess = ex.mean;
  out.stderr_ = ex.stderr_;
  out.replications = replications;
  return out;
}

WeakPdGaps estimate_weak_pd_gap(const StabilityConfig& config, int replications) {
  if (replications < 1) throw ParameterError("replication count must be positive");
  if (config.run.mode != engine::Mode::Sgda)
    throw ConfigError("weak primal-dual gaps require sgda mode");
  const problems::MinimaxLossSpec& loss = config.run.minimax;
  const int dim = config.data.dim;

  // Aggregated curvature-free coefficients of the replication average: both
  // inner optimizations of an average of saddle objectives stay closed form.
  Eigen::VectorXd mean_w = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd mean_v = Eigen::VectorXd::Zero(dim);
  double mean_w_sq = 0.0, mean_v_sq = 0.0;
  Eigen::VectorXd dual_gain_emp = Eigen::VectorXd::Zero(dim);   // mean of A'w - c_S
  Eigen::VectorXd primal_gain_emp = Eigen::VectorXd::Zero(dim); // mean of A v + b_S
  double cross_bw_emp = 0.0;  // mean of b_S . w
  double cross_cv_emp = 0.0;  // mean of c_S . v
  Eigen::VectorXd pop_b, pop_c;

  std::vector<Eigen::VectorXd> outs_w(static_cast<std::size_t>(replications));
  std::vector<Eigen::VectorXd> outs_v(static_cast<std::size_t>(replications));
  std::vector<problems::SaddleCoeffs> emp_coeffs(static_cast<std::size_t>(replications));

  parallel_for(replications, config.jobs, [&](int rep) {
    RepRun base = baseline_run(config, rep);
    outs_w[static_cast<std::size_t>(rep)] = output_w(config, base.trajectory);
    outs_v[static_cast<std::size_t>(rep)] = output_v(config, base.trajectory);
    emp_coeffs[static_cast<std::size_t>(rep)] = problems::empirical_saddle_coeffs(loss, base.data);
    if (rep == 0) pop_b = problems::population_saddle_coeffs(loss, base.data).b;
  });
  pop_c = Eigen::VectorXd::Zero(dim);

  const double inv = 1.0 / static_cast<double>(replications);
  for (int rep = 0; rep < replications; ++rep) {
    const auto i = static_cast<std::size_t>(rep);
    mean_w += inv * outs_w[i];
    mean_v += inv * outs_v[i];
    mean_w_sq += inv * outs_w[i].squaredNorm();
    mean_v_sq += inv * outs_v[i].squaredNorm();
    dual_gain_emp += inv * (loss.coupling.transpose() * outs_w[i] - emp_coeffs[i].c);
    primal_gain_emp += inv * (loss.coupling * outs_v[i] + emp_coeffs[i].b);
    cross_bw_emp += inv * emp_coeffs[i].b.dot(outs_w[i]);
    cross_cv_emp += inv * emp_coeffs[i].c.dot(outs_v[i]);
  }

  const double rho = loss.strong_convexity;
  WeakPdGaps out;
  out.replications = replications;
  // Empirical weak PD risk of the averaged algorithm law.
  const double emp_sup =
      problems::max_linear_minus_quad(dual_gain_emp, rho, loss.radius_v) + cross_bw_emp +
      0.5 * rho * mean_w_sq;
  const double emp_inf =
      -problems::max_linear_minus_quad(primal_gain_emp, rho, loss.radius_w) - cross_cv_emp -
      0.5 * rho * mean_v_sq;
  out.empirical = emp_sup - emp_inf;
  // Population version: closed-form coefficients of the generating law.
  const Eigen::VectorXd dual_gain_pop = loss.coupling.transpose() * mean_w - pop_c;
  const Eigen::VectorXd primal_gain_pop = loss.coupling * mean_v + pop_b;
  const double pop_sup = problems::max_linear_minus_quad(dual_gain_pop, rho, loss.radius_v) +
                         pop_b.dot(mean_w) + 0.5 * rho * mean_w_sq;
  const double pop_inf =
      -problems::max_linear_minus_quad(primal_gain_pop, rho, loss.radius_w) -
      pop_c.dot(mean_v) - 0.5 * rho * mean_v_sq;
  out.population = pop_sup - pop_inf;
  out.gen = out.population - out.empirical;
  return out;
}

PrimalRisks estimate_primal_risk(const StabilityConfig& config, int replications) {
  if (replications < 1) throw ParameterError("replication count must be positive");
  if (config.run.mode != engine::Mode::Sgda)
    throw ConfigError("primal risks require sgda mode");
  const problems::MinimaxLossSpec& loss = config.run.minimax;
  if (loss.strong_convexity <= 0.0)
    throw UnsupportedError("primal risk needs a strongly concave dual block");

  std::vector<double> gens(static_cast<std::size_t>(replications), 0.0);
  std::vector<double> pops(static_cast<std::size_t>(replications), 0.0);
  problems::SaddleCoeffs pop_coeffs;
  parallel_for(replications, config.jobs, [&](int rep) {
    RepRun base = baseline_run(config, rep);
    const Eigen::VectorXd w = output_w(config, base.trajectory);
    const problems::SaddleCoeffs emp = problems::empirical_saddle_coeffs(loss, base.data);
    const problems::SaddleCoeffs pop = problems::population_saddle_coeffs(loss, base.data);
    const double primal_pop = problems::max_over_dual(loss, pop, w);
    const double primal_emp = problems::max_over_dual(loss, emp, w);
    gens[static_cast<std::size_t>(rep)] = primal_pop - primal_emp;
    pops[static_cast<std::size_t>(rep)] = primal_pop;
    if (rep == 0) pop_coeffs = pop;
  });

  PrimalRisks out;
  out.replications = replications;
  out.gen = mean_stderr(gens).mean;
  const Eigen::VectorXd minimizer = problems::primal_risk_minimizer(loss, pop_coeffs);
  const double best = problems::max_over_dual(loss, pop_coeffs, minimizer);
  out.excess = mean_stderr(pops).mean - best;
  return out;
}

}  // namespace dmclab::stability
