#include "dmclab/problems.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "dmclab/errors.hpp"

namespace dmclab::problems {

namespace {
constexpr double kDomainTol = 1e-9;
constexpr std::uint64_t kPlantedStream = 101;
constexpr std::uint64_t kShardStream = 102;

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double log1p_exp(double t) {
  // log(1 + e^t), stable for both tails.
  if (t > 0.0) return t + std::log1p(std::exp(-t));
  return std::log1p(std::exp(t));
}

void check_domain(const Eigen::VectorXd& w, double radius, const char* what) {
  if (w.norm() > radius + kDomainTol)
    throw ParameterError(std::string(what) + " lies outside the projection ball");
}
}  // namespace

Distribution distribution_from_tag(std::string_view tag) {
  if (tag == "linear-regression") return Distribution::LinearRegression;
  if (tag == "logistic-labels") return Distribution::LogisticLabels;
  throw ParameterError("unknown distribution: " + std::string(tag));
}

std::string_view distribution_tag(Distribution dist) {
  return dist == Distribution::LinearRegression ? "linear-regression" : "logistic-labels";
}

LossKind loss_from_tag(std::string_view tag) {
  if (tag == "zero") return LossKind::Zero;
  if (tag == "least_squares_ball" || tag == "least-squares") return LossKind::LeastSquares;
  if (tag == "logistic") return LossKind::Logistic;
  if (tag == "hinge") return LossKind::Hinge;
  throw ParameterError("unknown loss kind: " + std::string(tag));
}

std::string_view loss_tag(LossKind kind) {
  switch (kind) {
    case LossKind::Zero: return "zero";
    case LossKind::LeastSquares: return "least_squares_ball";
    case LossKind::Logistic: return "logistic";
    case LossKind::Hinge: return "hinge";
  }
  throw ParameterError("unknown loss enum");
}

Sample draw_sample(const DatasetSpec& spec, const Eigen::VectorXd& planted, Rng& rng) {
  Sample z;
  z.x = rng.ball(spec.dim, spec.feature_radius);
  switch (spec.dist) {
    case Distribution::LinearRegression:
      z.y = planted.dot(z.x) + (spec.noise > 0.0 ? rng.uniform(-spec.noise, spec.noise) : 0.0);
      break;
    case Distribution::LogisticLabels:
      z.y = planted.dot(z.x) >= 0.0 ? 1.0 : -1.0;
      break;
  }
  return z;
}

Dataset synth_dataset(const DatasetSpec& spec) {
  if (spec.workers < 1 || spec.per_worker < 1 || spec.dim < 1)
    throw ParameterError("dataset needs positive worker count, shard size and dimension");
  if (spec.feature_radius <= 0.0) throw ParameterError("feature radius must be positive");

  Dataset data;
  data.spec = spec;

  Rng planted_rng(derive_seed(spec.seed, kPlantedStream));
  data.planted = planted_rng.sphere(spec.dim) * spec.planted_norm;

  data.shards.resize(static_cast<std::size_t>(spec.workers));
  for (int r = 0; r < spec.workers; ++r) {
    Rng shard_rng(derive_seed(spec.seed, kShardStream, static_cast<std::uint64_t>(r)));
    auto& shard = data.shards[static_cast<std::size_t>(r)];
    shard.reserve(static_cast<std::size_t>(spec.per_worker));
    for (int k = 0; k < spec.per_worker; ++k)
      shard.push_back(draw_sample(spec, data.planted, shard_rng));
  }

  data.feature_bound = spec.feature_radius;
  data.label_bound = spec.dist == Distribution::LinearRegression
                         ? spec.feature_radius * spec.planted_norm + spec.noise
                         : 1.0;
  return data;
}

LossSpec LossSpec::certify(LossKind kind, double feature_bound, double label_bound,
                           double radius) {
  if (radius <= 0.0) throw ParameterError("projection radius must be positive");
  if (feature_bound < 0.0 || label_bound < 0.0)
    throw ParameterError("bounds must be nonnegative");
  LossSpec spec;
  spec.kind = kind;
  spec.radius = radius;
  const double b = feature_bound;
  switch (kind) {
    case LossKind::Zero:
      spec.lipschitz = 0.0;
      spec.smoothness = 0.0;
      break;
    case LossKind::LeastSquares:
      spec.lipschitz = b * (b * radius + label_bound);
      spec.smoothness = b * b;
      break;
    case LossKind::Logistic:
      spec.lipschitz = b;
      spec.smoothness = b * b / 4.0;
      break;
    case LossKind::Hinge:
      spec.lipschitz = b;
      spec.smoothness.reset();
      break;
  }
  return spec;
}

double value(const LossSpec& loss, const Eigen::VectorXd& w, const Sample& z) {
  check_domain(w, loss.radius, "iterate");
  switch (loss.kind) {
    case LossKind::Zero: return 0.0;
    case LossKind::LeastSquares: {
      const double r = w.dot(z.x) - z.y;
      return 0.5 * r * r;
    }
    case LossKind::Logistic: return log1p_exp(-z.y * w.dot(z.x));
    case LossKind::Hinge: return std::max(0.0, 1.0 - z.y * w.dot(z.x));
  }
  throw ParameterError("unknown loss enum");
}

Eigen::VectorXd grad(const LossSpec& loss, const Eigen::VectorXd& w, const Sample& z) {
  check_domain(w, loss.radius, "iterate");
  switch (loss.kind) {
    case LossKind::Zero: return Eigen::VectorXd::Zero(w.size());
    case LossKind::LeastSquares: return (w.dot(z.x) - z.y) * z.x;
    case LossKind::Logistic: return (-z.y * sigmoid(-z.y * w.dot(z.x))) * z.x;
    case LossKind::Hinge:
      // Subgradient 0 at the kink (margin exactly 1).
      if (z.y * w.dot(z.x) < 1.0) return -z.y * z.x;
      return Eigen::VectorXd::Zero(w.size());
  }
  throw ParameterError("unknown loss enum");
}

Eigen::VectorXd project(const Eigen::VectorXd& x, double radius) {
  if (radius <= 0.0) throw ParameterError("projection radius must be positive");
  const double norm = x.norm();
  if (norm <= radius) return x;
  return x * (radius / norm);
}

double empirical_risk(const LossSpec& loss, const Eigen::VectorXd& w, const Dataset& data) {
  double total = 0.0;
  for (int r = 0; r < data.workers(); ++r)
    for (int k = 0; k < data.per_worker(); ++k) total += value(loss, w, data.at(r, k));
  return total / static_cast<double>(data.total());
}

Eigen::VectorXd empirical_risk_subgrad(const LossSpec& loss, const Eigen::VectorXd& w,
                                       const Dataset& data) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(data.dim());
  for (int r = 0; r < data.workers(); ++r)
    for (int k = 0; k < data.per_worker(); ++k) g += grad(loss, w, data.at(r, k));
  return g / static_cast<double>(data.total());
}

RiskEstimate population_risk(const LossSpec& loss, const Eigen::VectorXd& w,
                             const Dataset& data, long mc_draws, std::uint64_t mc_seed) {
  RiskEstimate est;
  if (loss.kind == LossKind::Zero) return est;
  const DatasetSpec& spec = data.spec;
  if (loss.kind == LossKind::LeastSquares && spec.dist == Distribution::LinearRegression &&
      spec.noise == 0.0) {
    // E[x x'] = B^2/(d+2) I for features uniform on the radius-B ball.
    const double second_moment = spec.feature_radius * spec.feature_radius / (spec.dim + 2);
    est.value = 0.5 * second_moment * (w - data.planted).squaredNorm();
    return est;
  }
  if (mc_draws <= 1) throw ParameterError("Monte Carlo risk needs at least 2 draws");
  Rng rng(derive_seed(spec.seed ^ mc_seed, 103));
  double sum = 0.0, sum_sq = 0.0;
  for (long i = 0; i < mc_draws; ++i) {
    const Sample z = draw_sample(spec, data.planted, rng);
    const double v = value(loss, w, z);
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / static_cast<double>(mc_draws);
  const double var =
      std::max(0.0, (sum_sq - mc_draws * mean * mean) / static_cast<double>(mc_draws - 1));
  est.value = mean;
  est.stderr_ = std::sqrt(var / static_cast<double>(mc_draws));
  est.draws = mc_draws;
  return est;
}

namespace {

// Projected gradient descent with a gradient-mapping stopping rule.
Eigen::VectorXd projected_descent(const LossSpec& loss, const Dataset& data, double radius,
                                  double step, double tol, long cap) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(data.dim());
  double residual = std::numeric_limits<double>::infinity();
  for (long it = 0; it < cap; ++it) {
    const Eigen::VectorXd g = empirical_risk_subgrad(loss, w, data);
    const Eigen::VectorXd next = project(w - step * g, radius);
    residual = (w - next).norm() / step;
    w = next;
    if (residual <= tol) return w;
  }
  throw ConvergenceError("projected gradient descent did not reach tolerance", residual);
}

// Hinge is handled by a best-iterate subgradient method: an optimistic
// zero-target Polyak phase (exact on separable data) followed by a
// diminishing-step polish.
Eigen::VectorXd hinge_erm(const LossSpec& loss, const Dataset& data, double radius) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(data.dim());
  Eigen::VectorXd best = w;
  double best_risk = empirical_risk(loss, w, data);
  const long polyak_iters = 2000;
  for (long it = 0; it < polyak_iters && best_risk > 1e-14; ++it) {
    const Eigen::VectorXd g = empirical_risk_subgrad(loss, w, data);
    const double gn2 = g.squaredNorm();
    if (gn2 < 1e-18) break;
    const double risk = empirical_risk(loss, w, data);
    w = project(w - (risk / gn2) * g, radius);
    const double r = empirical_risk(loss, w, data);
    if (r < best_risk) {
      best_risk = r;
      best = w;
    }
  }
  const long polish_iters = 200000;
  const double c = radius / std::max(loss.lipschitz, 1e-12);
  w = best;
  for (long it = 1; it <= polish_iters && best_risk > 1e-14; ++it) {
    const Eigen::VectorXd g = empirical_risk_subgrad(loss, w, data);
    if (g.squaredNorm() < 1e-18) break;
    w = project(w - (c / std::sqrt(static_cast<double>(it))) * g, radius);
    const double r = empirical_risk(loss, w, data);
    if (r < best_risk) {
      best_risk = r;
      best = w;
    }
  }
  return best;
}

}  // namespace

Eigen::VectorXd erm_reference(const LossSpec& loss, const Dataset& data, double radius) {
  if (radius <= 0.0) throw ParameterError("projection radius must be positive");
  const int d = data.dim();
  switch (loss.kind) {
    case LossKind::Zero: return Eigen::VectorXd::Zero(d);
    case LossKind::LeastSquares: {
      Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
      Eigen::VectorXd moment = Eigen::VectorXd::Zero(d);
      for (int r = 0; r < data.workers(); ++r) {
        for (int k = 0; k < data.per_worker(); ++k) {
          const Sample& z = data.at(r, k);
          gram.noalias() += z.x * z.x.transpose();
          moment += z.y * z.x;
        }
      }
      const Eigen::VectorXd normal = gram.ldlt().solve(moment);
      if (normal.allFinite() && normal.norm() <= radius &&
          (gram * normal - moment).norm() <= 1e-8 * std::max(1.0, moment.norm()))
        return normal;
      // Constrained or rank-deficient case: refine on the ball.
      const double beta_emp =
          std::max(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram / data.total())
                       .eigenvalues()
                       .maxCoeff(),
                   1e-12);
      return projected_descent(loss, data, radius, 1.0 / beta_emp, 1e-10, 2000000);
    }
    case LossKind::Logistic: {
      const double beta = loss.smoothness.value();
      return projected_descent(loss, data, radius, 1.0 / std::max(beta, 1e-12), 1e-8, 2000000);
    }
    case LossKind::Hinge: return hinge_erm(loss, data, radius);
  }
  throw ParameterError("unknown loss enum");
}

Eigen::VectorXd population_minimizer(const LossSpec& loss, const Dataset& data,
                                     long proxy_samples, std::uint64_t proxy_seed) {
  if (loss.kind == LossKind::Zero) return Eigen::VectorXd::Zero(data.dim());
  if (loss.kind == LossKind::LeastSquares && data.spec.dist == Distribution::LinearRegression)
    return project(data.planted, loss.radius);
  // Monte Carlo proxy: ERM over one large fresh dataset from the same law.
  DatasetSpec proxy = data.spec;
  proxy.workers = 1;
  proxy.per_worker = static_cast<int>(proxy_samples);
  proxy.seed = derive_seed(data.spec.seed ^ proxy_seed, 104);
  const Dataset big = synth_dataset(proxy);
  return erm_reference(loss, big, loss.radius);
}

// ---------------------------------------------------------------------------
// Minimax
// ---------------------------------------------------------------------------

MinimaxLossSpec MinimaxLossSpec::certify(Eigen::MatrixXd coupling, double b_scale,
                                         double c_scale, double rho, double feature_bound,
                                         double label_bound, double radius_w,
                                         double radius_v) {
  if (radius_w <= 0.0 || radius_v <= 0.0)
    throw ParameterError("projection radii must be positive");
  if (rho < 0.0) throw ParameterError("strong convexity modulus must be nonnegative");
  if (coupling.rows() != coupling.cols())
    throw ParameterError("coupling matrix must be square");
  MinimaxLossSpec spec;
  const double sigma =
      coupling.size() == 0
          ? 0.0
          : Eigen::JacobiSVD<Eigen::MatrixXd>(coupling).singularValues().maxCoeff();
  spec.coupling = std::move(coupling);
  spec.b_scale = b_scale;
  spec.c_scale = c_scale;
  spec.strong_convexity = rho;
  spec.radius_w = radius_w;
  spec.radius_v = radius_v;
  const double b_bound = std::abs(b_scale) * label_bound * feature_bound;
  const double c_bound = std::abs(c_scale) * label_bound * feature_bound;
  spec.lipschitz = std::max(sigma * radius_v + b_bound + rho * radius_w,
                            sigma * radius_w + c_bound + rho * radius_v);
  spec.smoothness = std::hypot(rho, sigma);
  return spec;
}

namespace {
void check_minimax_domain(const MinimaxLossSpec& loss, const Eigen::VectorXd& w,
                          const Eigen::VectorXd& v) {
  check_domain(w, loss.radius_w, "primal iterate");
  check_domain(v, loss.radius_v, "dual iterate");
}
}  // namespace

double minimax_value(const MinimaxLossSpec& loss, const Eigen::VectorXd& w,
                     const Eigen::VectorXd& v, const Sample& z) {
  check_minimax_domain(loss, w, v);
  const double rho = loss.strong_convexity;
  return w.dot(loss.coupling * v) + loss.b_scale * z.y * z.x.dot(w) -
         loss.c_scale * z.y * z.x.dot(v) + 0.5 * rho * (w.squaredNorm() - v.squaredNorm());
}

MinimaxGrad grad_minimax(const MinimaxLossSpec& loss, const Eigen::VectorXd& w,
                         const Eigen::VectorXd& v, const Sample& z) {
  check_minimax_domain(loss, w, v);
  const double rho = loss.strong_convexity;
  MinimaxGrad g;
  g.gw = loss.coupling * v + loss.b_scale * z.y * z.x + rho * w;
  g.gv = loss.coupling.transpose() * w - loss.c_scale * z.y * z.x - rho * v;
  return g;
}

SaddleCoeffs empirical_saddle_coeffs(const MinimaxLossSpec& loss, const Dataset& data) {
  SaddleCoeffs coeffs;
  coeffs.b = Eigen::VectorXd::Zero(data.dim());
  coeffs.c = Eigen::VectorXd::Zero(data.dim());
  for (int r = 0; r < data.workers(); ++r) {
    for (int k = 0; k < data.per_worker(); ++k) {
      const Sample& z = data.at(r, k);
      coeffs.b += loss.b_scale * z.y * z.x;
      coeffs.c += loss.c_scale * z.y * z.x;
    }
  }
  coeffs.b /= static_cast<double>(data.total());
  coeffs.c /= static_cast<double>(data.total());
  return coeffs;
}

SaddleCoeffs population_saddle_coeffs(const MinimaxLossSpec& loss, const Dataset& data) {
  const DatasetSpec& spec = data.spec;
  if (spec.dist != Distribution::LinearRegression)
    throw UnsupportedError("population saddle coefficients are closed-form only for the regression distribution");
  // E[yx] = E[xx'] planted = B^2/(d+2) planted (noise is mean zero).
  SaddleCoeffs coeffs;
  const double second_moment = spec.feature_radius * spec.feature_radius / (spec.dim + 2);
  coeffs.b = loss.b_scale * second_moment * data.planted;
  coeffs.c = loss.c_scale * second_moment * data.planted;
  return coeffs;
}

double saddle_risk(const MinimaxLossSpec& loss, const SaddleCoeffs& coeffs,
                   const Eigen::VectorXd& w, const Eigen::VectorXd& v) {
  const double rho = loss.strong_convexity;
  return w.dot(loss.coupling * v) + coeffs.b.dot(w) - coeffs.c.dot(v) +
         0.5 * rho * (w.squaredNorm() - v.squaredNorm());
}

double max_linear_minus_quad(const Eigen::VectorXd& g, double rho, double radius) {
  if (radius <= 0.0) throw ParameterError("radius must be positive");
  const double gnorm = g.norm();
  if (rho <= 0.0) return radius * gnorm;
  if (gnorm <= rho * radius) return gnorm * gnorm / (2.0 * rho);
  return radius * gnorm - 0.5 * rho * radius * radius;
}

double max_over_dual(const MinimaxLossSpec& loss, const SaddleCoeffs& coeffs,
                     const Eigen::VectorXd& w) {
  const double rho = loss.strong_convexity;
  const Eigen::VectorXd g = loss.coupling.transpose() * w - coeffs.c;
  return max_linear_minus_quad(g, rho, loss.radius_v) + coeffs.b.dot(w) +
         0.5 * rho * w.squaredNorm();
}

double min_over_primal(const MinimaxLossSpec& loss, const SaddleCoeffs& coeffs,
                       const Eigen::VectorXd& v) {
  const double rho = loss.strong_convexity;
  const Eigen::VectorXd g = loss.coupling * v + coeffs.b;
  return -max_linear_minus_quad(g, rho, loss.radius_w) - coeffs.c.dot(v) -
         0.5 * rho * v.squaredNorm();
}

Eigen::VectorXd primal_risk_minimizer(const MinimaxLossSpec& loss, const SaddleCoeffs& coeffs) {
  const double rho = loss.strong_convexity;
  const int d = static_cast<int>(loss.coupling.rows());
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  // Danskin subgradient of w -> max_v saddle_risk(w, v) on the dual ball.
  auto inner_argmax = [&](const Eigen::VectorXd& point) {
    const Eigen::VectorXd g = loss.coupling.transpose() * point - coeffs.c;
    if (rho > 0.0) return project(g / rho, loss.radius_v);
    const double gnorm = g.norm();
    if (gnorm < 1e-15) return Eigen::VectorXd::Zero(d).eval();
    return (loss.radius_v / gnorm * g).eval();
  };
  const double curvature = std::max(loss.smoothness, 1e-9);
  double residual = std::numeric_limits<double>::infinity();
  const double step = 1.0 / curvature;
  for (long it = 0; it < 2000000; ++it) {
    const Eigen::VectorXd vstar = inner_argmax(w);
    const Eigen::VectorXd g = loss.coupling * vstar + coeffs.b + rho * w;
    const Eigen::VectorXd next = project(w - step * g, loss.radius_w);
    residual = (w - next).norm() / step;
    w = next;
    if (residual <= 1e-10) return w;
  }
  throw ConvergenceError("primal risk minimization did not reach tolerance", residual);
}

}  // namespace dmclab::problems
