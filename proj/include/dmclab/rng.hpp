#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

#include <Eigen/Core>

namespace dmclab {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Stable derivation of independent stream seeds from a master seed.
// Identical (master, stream, index) always yields the same seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                 std::uint64_t index = 0) {
  std::uint64_t s = master;
  splitmix64(s);
  s ^= 0xD6E8FEB86659FD93ULL * (stream + 1);
  splitmix64(s);
  s ^= 0xCA5A826395121157ULL * (index + 1);
  return splitmix64(s);
}

// mt19937_64 with explicit float conversions so that sampled values are
// bit-identical across platforms (std::uniform_*_distribution is not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // 53-bit uniform in [0, 1).
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Unbiased integer in [0, n) via rejection.
  int uniform_int(int n) {
    const auto un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() -
        std::numeric_limits<std::uint64_t>::max() % un;
    std::uint64_t x = gen_();
    while (x >= limit) x = gen_();
    return static_cast<int>(x % un);
  }

  double normal() {
    constexpr double two_pi = 6.283185307179586476925287;
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  Eigen::VectorXd sphere(int dim) {
    Eigen::VectorXd x(dim);
    double norm = 0.0;
    do {
      for (int i = 0; i < dim; ++i) x[i] = normal();
      norm = x.norm();
    } while (norm < 1e-12);
    return x / norm;
  }

  // Uniform over the Euclidean ball of the given radius.
  Eigen::VectorXd ball(int dim, double radius) {
    const double r = radius * std::pow(uniform01(), 1.0 / dim);
    return sphere(dim) * r;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace dmclab
