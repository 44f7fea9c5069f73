#include "dmclab/chain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "dmclab/errors.hpp"

namespace dmclab::chain {

Family family_from_tag(std::string_view tag) {
  if (tag == "uniform") return Family::Uniform;
  if (tag == "lazy-cycle") return Family::LazyCycle;
  if (tag == "two-state") return Family::TwoState;
  throw ParameterError("unknown chain family: " + std::string(tag));
}

std::string_view family_tag(Family family) {
  switch (family) {
    case Family::Uniform: return "uniform";
    case Family::LazyCycle: return "lazy-cycle";
    case Family::TwoState: return "two-state";
  }
  throw ParameterError("unknown chain family enum");
}

TransitionMatrix build(Family family, int n, const Params& params) {
  if (n < 1) throw ParameterError("chain size must be at least 1");
  TransitionMatrix out;
  switch (family) {
    case Family::Uniform:
      out.rows = Eigen::MatrixXd::Constant(n, n, 1.0 / n);
      break;
    case Family::LazyCycle: {
      if (!(params.hold > 0.0 && params.hold < 1.0))
        throw ParameterError("lazy-cycle hold probability must lie in (0,1)");
      out.rows = Eigen::MatrixXd::Zero(n, n);
      const double side = (1.0 - params.hold) / 2.0;
      for (int i = 0; i < n; ++i) {
        out.rows(i, i) += params.hold;
        out.rows(i, (i + 1) % n) += side;
        out.rows(i, (i + n - 1) % n) += side;
      }
      break;
    }
    case Family::TwoState: {
      if (n != 2) throw ParameterError("two-state chain requires n = 2");
      if (!(params.flip > 0.0 && params.flip <= 0.5))
        throw ParameterError("two-state flip probability must lie in (0, 1/2]");
      out.rows.resize(2, 2);
      out.rows << 1.0 - params.flip, params.flip, params.flip, 1.0 - params.flip;
      break;
    }
  }
  return out;
}

namespace {

void check_stochastic(const Eigen::MatrixXd& rows) {
  const int n = static_cast<int>(rows.rows());
  if (n < 1 || rows.cols() != n) throw ValidationError("transition matrix must be square and non-empty");
  for (int i = 0; i < n; ++i) {
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      const double p = rows(i, j);
      if (p < -kStochasticTol || p > 1.0 + kStochasticTol)
        throw ValidationError("transition entry outside [0,1] at row " + std::to_string(i));
      sum += p;
    }
    if (std::abs(sum - 1.0) > n * kStochasticTol)
      throw ValidationError("row " + std::to_string(i) + " does not sum to 1");
  }
}

std::vector<int> bfs_dist(const Eigen::MatrixXd& rows, bool reverse) {
  const int n = static_cast<int>(rows.rows());
  std::vector<int> dist(n, -1);
  std::queue<int> q;
  dist[0] = 0;
  q.push(0);
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (int v = 0; v < n; ++v) {
      const double p = reverse ? rows(v, u) : rows(u, v);
      if (p > 0.0 && dist[v] < 0) {
        dist[v] = dist[u] + 1;
        q.push(v);
      }
    }
  }
  return dist;
}

bool strongly_connected(const Eigen::MatrixXd& rows) {
  const auto fwd = bfs_dist(rows, false);
  if (std::any_of(fwd.begin(), fwd.end(), [](int d) { return d < 0; })) return false;
  const auto bwd = bfs_dist(rows, true);
  return std::all_of(bwd.begin(), bwd.end(), [](int d) { return d >= 0; });
}

// Period of an irreducible chain: gcd of (dist[u] + 1 - dist[v]) over all
// support edges u -> v, with dist taken from any BFS tree.
int chain_period(const Eigen::MatrixXd& rows) {
  const int n = static_cast<int>(rows.rows());
  const auto dist = bfs_dist(rows, false);
  int g = 0;
  for (int u = 0; u < n; ++u)
    for (int v = 0; v < n; ++v)
      if (rows(u, v) > 0.0) g = std::gcd(g, std::abs(dist[u] + 1 - dist[v]));
  return g == 0 ? 1 : g;
}

Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& rows) {
  const int n = static_cast<int>(rows.rows());
  // Left eigenvector of eigenvalue 1: solve (H^T - I) pi = 0 with the first
  // equation replaced by the normalization constraint.
  Eigen::MatrixXd a = rows.transpose() - Eigen::MatrixXd::Identity(n, n);
  a.row(0).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs[0] = 1.0;
  Eigen::VectorXd pi = a.colPivHouseholderQr().solve(rhs);
  const double total = pi.sum();
  if (!(total > 0.0)) throw ValidationError("stationary distribution solve failed");
  return pi / total;
}

}  // namespace

SpectralReport validate(const TransitionMatrix& chain) {
  check_stochastic(chain.rows);
  const int n = chain.size();

  SpectralReport report;
  report.irreducible = strongly_connected(chain.rows);
  if (!report.irreducible)
    throw ValidationError("chain is not irreducible: some state is unreachable");
  report.aperiodic = chain_period(chain.rows) == 1;
  if (!report.aperiodic)
    throw ValidationError("chain is periodic: cycle lengths share a common divisor > 1");

  report.stationary = stationary_distribution(chain.rows);
  report.reversible = (chain.rows - chain.rows.transpose()).cwiseAbs().maxCoeff() <= kStochasticTol;

  // Deterministic spectral contract: eigenvalues of the symmetrized matrix,
  // sorted descending.
  if (n >= 2) {
    const Eigen::MatrixXd sym = 0.5 * (chain.rows + chain.rows.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
    Eigen::VectorXd ev = solver.eigenvalues();
    std::sort(ev.data(), ev.data() + n, std::greater<double>());
    report.second_eigenvalue = ev[1];
    report.smallest_eigenvalue = ev[n - 1];
  }
  report.mixing_rate =
      (std::max(std::abs(report.second_eigenvalue), std::abs(report.smallest_eigenvalue)) + 1.0) /
      2.0;

  if (report.reversible) {
    report.mixing_cutoff = 0;
    report.mixing_coeff = std::pow(static_cast<double>(n), 1.5);
  } else {
    report.note = "non-reversible: analytic envelopes unavailable";
  }
  return report;
}

std::vector<int> sample_path(const TransitionMatrix& chain, int start, int steps, Rng& rng) {
  const int n = chain.size();
  if (start < 0 || start >= n) throw ParameterError("start state outside [0, n)");
  if (steps < 0) throw ParameterError("step count must be nonnegative");
  std::vector<int> path(static_cast<std::size_t>(steps));
  int state = start;
  for (int t = 0; t < steps; ++t) {
    const double u = rng.uniform01();
    double acc = 0.0;
    int next = -1;
    for (int j = 0; j < n; ++j) {
      const double p = chain.rows(state, j);
      if (p <= 0.0) continue;
      acc += p;
      next = j;
      if (u < acc) break;
    }
    if (next < 0)
      throw ValidationError("row " + std::to_string(state) + " has no positive transition");
    state = next;
    path[static_cast<std::size_t>(t)] = state;
  }
  return path;
}

double mixing_gap(const TransitionMatrix& chain, int t) {
  if (t < 0) throw ParameterError("step count must be nonnegative");
  const SpectralReport report = validate(chain);
  const int n = chain.size();
  Eigen::MatrixXd limit(n, n);
  for (int i = 0; i < n; ++i) limit.row(i) = report.stationary.transpose();
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(n, n);
  for (int k = 0; k < t; ++k) power = power * chain.rows;
  return (limit - power).cwiseAbs().rowwise().sum().maxCoeff();
}

double mixing_envelope(int n, double mixing_rate, int t) {
  if (n < 1) throw ParameterError("state count must be at least 1");
  if (t < 0) throw ParameterError("step count must be nonnegative");
  if (!(mixing_rate >= 0.5 && mixing_rate < 1.0))
    throw ParameterError("mixing rate must lie in [1/2, 1)");
  return std::pow(static_cast<double>(n), 1.5) * std::pow(mixing_rate, t);
}

}  // namespace dmclab::chain
