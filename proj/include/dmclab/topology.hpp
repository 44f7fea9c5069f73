#pragma once

#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace dmclab::topology {

inline constexpr double kGossipTol = 1e-12;

enum class Kind { Complete, Ring, Grid, Star };

Kind kind_from_tag(std::string_view tag);
std::string_view kind_tag(Kind kind);

// Symmetric doubly-stochastic mixing matrix of one communication round.
struct GossipMatrix {
  Eigen::MatrixXd weights;
  double consensus_rate = 0.0;  // max{|second|, |smallest|} of the spectrum
  double spectral_gap = 1.0;    // 1 - consensus_rate
  int size() const { return static_cast<int>(weights.rows()); }
};

// Complete uses uniform averaging, ring uses 1/3 weights, star and grid use
// Metropolis weights 1/(1 + max(deg_i, deg_j)). m = 1 yields [1] with the
// consensus rate defined as 0.
GossipMatrix build(Kind kind, int m, int grid_rows = 0);

// Checks symmetry, entry range and double stochasticity, then computes the
// consensus rate. Throws ValidationError naming the violated property.
GossipMatrix validate(const Eigen::MatrixXd& weights);

struct GapRow {
  int m = 0;
  double gap = 0.0;
  double scaled = 0.0;  // gap * 1 (complete/star), gap * m (grid), gap * m^2 (ring)
};

// Exhibits the spectral-gap decay orders of the standard topologies.
std::vector<GapRow> gap_order_table(Kind kind, const std::vector<int>& sizes,
                                    const std::vector<int>& grid_rows = {});

}  // namespace dmclab::topology
