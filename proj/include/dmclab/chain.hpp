#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "dmclab/rng.hpp"

namespace dmclab::chain {

inline constexpr double kStochasticTol = 1e-12;

enum class Family { Uniform, LazyCycle, TwoState };

Family family_from_tag(std::string_view tag);
std::string_view family_tag(Family family);

struct Params {
  double hold = 0.5;   // lazy-cycle self-transition probability, in (0,1)
  double flip = 0.25;  // two-state switch probability, in (0,1/2]
};

// Row-stochastic transition matrix over the sample indices of one worker.
struct TransitionMatrix {
  Eigen::MatrixXd rows;
  int size() const { return static_cast<int>(rows.rows()); }
};

// All families are symmetric, hence irreducible, aperiodic and reversible
// with a uniform stationary distribution.
TransitionMatrix build(Family family, int n, const Params& params = {});

struct SpectralReport {
  double second_eigenvalue = 0.0;    // second-largest eigenvalue
  double smallest_eigenvalue = 0.0;  // smallest eigenvalue
  double mixing_rate = 0.5;          // (max{|second|, |smallest|} + 1)/2, in [1/2, 1)
  Eigen::VectorXd stationary;
  bool irreducible = false;
  bool aperiodic = false;
  bool reversible = false;
  // Envelope constants for the geometric mixing bound. Only available for
  // reversible (symmetric) chains: cutoff 0 and coefficient n^{3/2}.
  std::optional<int> mixing_cutoff;
  std::optional<double> mixing_coeff;
  std::string note;
};

// Checks stochasticity, irreducibility and aperiodicity, then fills in the
// spectral quantities. Throws ValidationError naming the violated property.
SpectralReport validate(const TransitionMatrix& chain);

// path[0] is drawn from row `start`, path[t] from row path[t-1].
std::vector<int> sample_path(const TransitionMatrix& chain, int start, int steps, Rng& rng);

// Max-row-sum norm of (limit matrix - t-step transition matrix).
double mixing_gap(const TransitionMatrix& chain, int t);

// Geometric envelope n^{3/2} * rate^t for symmetric chains.
double mixing_envelope(int n, double mixing_rate, int t);

}  // namespace dmclab::chain
