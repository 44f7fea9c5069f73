#include "dmclab/topology.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "dmclab/errors.hpp"

namespace dmclab::topology {

Kind kind_from_tag(std::string_view tag) {
  if (tag == "complete") return Kind::Complete;
  if (tag == "ring") return Kind::Ring;
  if (tag == "grid") return Kind::Grid;
  if (tag == "star") return Kind::Star;
  throw ParameterError("unknown topology: " + std::string(tag));
}

std::string_view kind_tag(Kind kind) {
  switch (kind) {
    case Kind::Complete: return "complete";
    case Kind::Ring: return "ring";
    case Kind::Grid: return "grid";
    case Kind::Star: return "star";
  }
  throw ParameterError("unknown topology enum");
}

namespace {

double consensus_rate_of(const Eigen::MatrixXd& weights) {
  const int m = static_cast<int>(weights.rows());
  if (m < 2) return 0.0;  // single node: no second eigenvalue
  const Eigen::MatrixXd sym = 0.5 * (weights + weights.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  Eigen::VectorXd ev = solver.eigenvalues();
  std::sort(ev.data(), ev.data() + m, std::greater<double>());
  return std::max(std::abs(ev[1]), std::abs(ev[m - 1]));
}

Eigen::MatrixXd metropolis(const Eigen::MatrixXi& adjacency) {
  const int m = static_cast<int>(adjacency.rows());
  Eigen::VectorXi degree = adjacency.rowwise().sum();
  Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    double off = 0.0;
    for (int j = 0; j < m; ++j) {
      if (i == j || adjacency(i, j) == 0) continue;
      weights(i, j) = 1.0 / (1.0 + std::max(degree[i], degree[j]));
      off += weights(i, j);
    }
    weights(i, i) = 1.0 - off;
  }
  return weights;
}

}  // namespace

GossipMatrix build(Kind kind, int m, int grid_rows) {
  if (m < 1) throw ParameterError("worker count must be at least 1");
  GossipMatrix out;
  if (m == 1) {
    out.weights = Eigen::MatrixXd::Ones(1, 1);
    out.consensus_rate = 0.0;
    out.spectral_gap = 1.0;
    return out;
  }
  switch (kind) {
    case Kind::Complete:
      out.weights = Eigen::MatrixXd::Constant(m, m, 1.0 / m);
      break;
    case Kind::Ring: {
      if (m < 3) throw ParameterError("ring topology requires at least 3 workers");
      out.weights = Eigen::MatrixXd::Zero(m, m);
      for (int i = 0; i < m; ++i) {
        out.weights(i, i) += 1.0 / 3.0;
        out.weights(i, (i + 1) % m) += 1.0 / 3.0;
        out.weights(i, (i + m - 1) % m) += 1.0 / 3.0;
      }
      break;
    }
    case Kind::Star: {
      Eigen::MatrixXi adj = Eigen::MatrixXi::Zero(m, m);
      for (int leaf = 1; leaf < m; ++leaf) adj(0, leaf) = adj(leaf, 0) = 1;
      out.weights = metropolis(adj);
      break;
    }
    case Kind::Grid: {
      if (grid_rows < 1 || m % grid_rows != 0)
        throw ParameterError("grid topology needs a row count dividing the worker count");
      const int rows = grid_rows;
      const int cols = m / grid_rows;
      Eigen::MatrixXi adj = Eigen::MatrixXi::Zero(m, m);
      auto id = [cols](int r, int c) { return r * cols + c; };
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          if (r + 1 < rows) adj(id(r, c), id(r + 1, c)) = adj(id(r + 1, c), id(r, c)) = 1;
          if (c + 1 < cols) adj(id(r, c), id(r, c + 1)) = adj(id(r, c + 1), id(r, c)) = 1;
        }
      }
      if (rows > 1 || cols > 1) {
        if (adj.rowwise().sum().minCoeff() == 0)
          throw ParameterError("grid factorization leaves isolated workers");
      }
      out.weights = metropolis(adj);
      break;
    }
  }
  out.consensus_rate = consensus_rate_of(out.weights);
  out.spectral_gap = 1.0 - out.consensus_rate;
  return out;
}

GossipMatrix validate(const Eigen::MatrixXd& weights) {
  const int m = static_cast<int>(weights.rows());
  if (m < 1 || weights.cols() != m) throw ValidationError("gossip matrix must be square and non-empty");
  if ((weights - weights.transpose()).cwiseAbs().maxCoeff() > kGossipTol)
    throw ValidationError("gossip matrix is not symmetric");
  if (weights.minCoeff() < -kGossipTol || weights.maxCoeff() > 1.0 + kGossipTol)
    throw ValidationError("gossip entry outside [0,1]");
  for (int i = 0; i < m; ++i) {
    if (std::abs(weights.row(i).sum() - 1.0) > m * kGossipTol)
      throw ValidationError("gossip row " + std::to_string(i) + " does not sum to 1");
    if (std::abs(weights.col(i).sum() - 1.0) > m * kGossipTol)
      throw ValidationError("gossip column " + std::to_string(i) + " does not sum to 1");
  }
  GossipMatrix out;
  out.weights = weights;
  out.consensus_rate = consensus_rate_of(weights);
  if (out.consensus_rate >= 1.0 - kGossipTol)
    throw ValidationError("gap is zero: disconnected mixing");
  out.spectral_gap = 1.0 - out.consensus_rate;
  return out;
}

std::vector<GapRow> gap_order_table(Kind kind, const std::vector<int>& sizes,
                                    const std::vector<int>& grid_rows) {
  std::vector<GapRow> table;
  table.reserve(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const int m = sizes[i];
    int rows = 0;
    if (kind == Kind::Grid) {
      if (i < grid_rows.size()) {
        rows = grid_rows[i];
      } else {
        rows = static_cast<int>(std::lround(std::sqrt(static_cast<double>(m))));
        if (rows * rows != m)
          throw ParameterError("grid sizes must be perfect squares unless row counts are supplied");
      }
    }
    const GossipMatrix gossip = build(kind, m, rows);
    GapRow row;
    row.m = m;
    row.gap = gossip.spectral_gap;
    switch (kind) {
      case Kind::Complete:
      case Kind::Star: row.scaled = row.gap; break;
      case Kind::Grid: row.scaled = row.gap * m; break;
      case Kind::Ring: row.scaled = row.gap * m * m; break;
    }
    table.push_back(row);
  }
  return table;
}

}  // namespace dmclab::topology
