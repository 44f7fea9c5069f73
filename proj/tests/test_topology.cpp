#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "dmclab/errors.hpp"
#include "dmclab/rng.hpp"
#include "dmclab/topology.hpp"

using namespace dmclab;
using topology::Kind;

namespace {
constexpr double kPi = 3.14159265358979323846;

// Circulant oracle for the ring: eigenvalues (1 + 2 cos(2 pi k / m)) / 3.
double ring_rate_oracle(int m) {
  double rate = 0.0;
  for (int k = 1; k < m; ++k)
    rate = std::max(rate, std::abs((1.0 + 2.0 * std::cos(2.0 * kPi * k / m)) / 3.0));
  return rate;
}
}  // namespace

TEST_CASE("complete topology is uniform averaging") {
  const auto g = topology::build(Kind::Complete, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(g.weights(i, j) == doctest::Approx(0.25));
  CHECK(g.consensus_rate == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(g.spectral_gap == doctest::Approx(1.0));
}

TEST_CASE("ring weights and rate") {
  const auto g = topology::build(Kind::Ring, 4);
  CHECK(g.weights(0, 0) == doctest::Approx(1.0 / 3));
  CHECK(g.weights(0, 1) == doctest::Approx(1.0 / 3));
  CHECK(g.weights(0, 2) == doctest::Approx(0.0));
  CHECK(g.weights(0, 3) == doctest::Approx(1.0 / 3));
  CHECK(g.consensus_rate == doctest::Approx(1.0 / 3));
  CHECK(g.spectral_gap == doctest::Approx(2.0 / 3));
  for (int m : {3, 5, 8, 16})
    CHECK(topology::build(Kind::Ring, m).consensus_rate ==
          doctest::Approx(ring_rate_oracle(m)).epsilon(1e-12));
}

TEST_CASE("single worker is the trivial matrix for every topology") {
  for (Kind kind : {Kind::Complete, Kind::Ring, Kind::Grid, Kind::Star}) {
    const auto g = topology::build(kind, 1, 1);
    CHECK(g.size() == 1);
    CHECK(g.weights(0, 0) == doctest::Approx(1.0));
    CHECK(g.consensus_rate == 0.0);
    CHECK(g.spectral_gap == 1.0);
  }
}

TEST_CASE("star spectrum matches the closed form") {
  // Metropolis star: center-leaf weight 1/m, spectrum {1, (1-1/m)^(m-2), 0}.
  for (int m : {2, 4, 8, 16}) {
    const auto g = topology::build(Kind::Star, m);
    CHECK(g.weights(0, 1) == doctest::Approx(1.0 / m));
    const double expected = m == 2 ? 0.0 : 1.0 - 1.0 / m;
    CHECK(g.consensus_rate == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("2x2 grid reduces to a 4-cycle with Metropolis weights") {
  const auto g = topology::build(Kind::Grid, 4, 2);
  for (int i = 0; i < 4; ++i) CHECK(g.weights(i, i) == doctest::Approx(1.0 / 3));
  // 4-cycle spectrum (1 + 2 cos(pi k / 2)) / 3: rate 1/3.
  CHECK(g.consensus_rate == doctest::Approx(1.0 / 3));
}

TEST_CASE("construction errors") {
  CHECK_THROWS_AS(topology::build(Kind::Ring, 2), ParameterError);
  CHECK_THROWS_AS(topology::build(Kind::Grid, 6, 4), ParameterError);
  CHECK_THROWS_AS(topology::build(Kind::Grid, 6, 0), ParameterError);
  CHECK_THROWS_AS(topology::build(Kind::Complete, 0), ParameterError);
}

TEST_CASE("validate computes the rate and rejects broken matrices") {
  Eigen::MatrixXd half(2, 2);
  half << 0.5, 0.5, 0.5, 0.5;
  const auto g = topology::validate(half);
  CHECK(g.consensus_rate == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(g.spectral_gap == doctest::Approx(1.0));

  CHECK_THROWS_WITH_AS(topology::validate(Eigen::MatrixXd::Identity(2, 2)),
                       "gap is zero: disconnected mixing", ValidationError);

  Eigen::MatrixXd asym(2, 2);
  asym << 0.2, 0.8, 0.6, 0.4;
  CHECK_THROWS_AS(topology::validate(asym), ValidationError);

  Eigen::MatrixXd rowbad(2, 2);
  rowbad << 0.5, 0.4, 0.4, 0.5;
  CHECK_THROWS_AS(topology::validate(rowbad), ValidationError);

  const auto ring8 = topology::build(Kind::Ring, 8);
  CHECK(topology::validate(ring8.weights).consensus_rate ==
        doctest::Approx(0.8047378541243649).epsilon(1e-14));
}

TEST_CASE("every built topology satisfies the gossip invariants") {
  struct Case {
    Kind kind;
    int m;
    int rows;
  };
  const Case cases[] = {{Kind::Complete, 4, 0}, {Kind::Complete, 9, 0}, {Kind::Ring, 3, 0},
                        {Kind::Ring, 16, 0},    {Kind::Star, 2, 0},     {Kind::Star, 9, 0},
                        {Kind::Grid, 4, 2},     {Kind::Grid, 8, 2},     {Kind::Grid, 9, 3},
                        {Kind::Grid, 16, 4},    {Kind::Grid, 6, 1}};
  for (const Case& c : cases) {
    const auto g = topology::build(c.kind, c.m, c.rows);
    CHECK_NOTHROW(topology::validate(g.weights));
    CHECK(g.spectral_gap == 1.0 - g.consensus_rate);
  }
}

TEST_CASE("consensus rate is invariant under node relabeling") {
  const auto g = topology::build(Kind::Grid, 8, 2);
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<int> perm(8);
    for (int i = 0; i < 8; ++i) perm[i] = i;
    for (int i = 7; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
    Eigen::MatrixXd shuffled(8, 8);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) shuffled(perm[i], perm[j]) = g.weights(i, j);
    CHECK(topology::validate(shuffled).consensus_rate ==
          doctest::Approx(g.consensus_rate).epsilon(1e-12));
  }
}

TEST_CASE("powers converge to uniform averaging at the consensus rate") {
  for (const auto& g : {topology::build(Kind::Ring, 8), topology::build(Kind::Grid, 16, 4),
                        topology::build(Kind::Star, 8)}) {
    const int m = g.size();
    const Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(m, m, 1.0 / m);
    Eigen::MatrixXd power = Eigen::MatrixXd::Identity(m, m);
    for (int k = 0; k <= 100; ++k) {
      CHECK((power - uniform).cwiseAbs().maxCoeff() <=
            std::pow(g.consensus_rate, k) + 1e-12);
      power = power * g.weights;
    }
  }
}

TEST_CASE("gap order table exhibits the decay orders") {
  const auto complete = topology::gap_order_table(Kind::Complete, {4, 8, 16});
  for (const auto& row : complete) CHECK(row.gap == doctest::Approx(1.0));

  const auto ring = topology::gap_order_table(Kind::Ring, {8, 16, 32});
  double lo = 1e300, hi = 0.0;
  for (const auto& row : ring) {
    lo = std::min(lo, row.scaled);
    hi = std::max(hi, row.scaled);
  }
  CHECK(hi / lo < 3.0);

  const auto grid = topology::gap_order_table(Kind::Grid, {16});
  const auto ring16 = topology::gap_order_table(Kind::Ring, {16});
  CHECK(grid[0].gap > ring16[0].gap);
}

TEST_CASE("topology tags round-trip") {
  for (Kind k : {Kind::Complete, Kind::Ring, Kind::Grid, Kind::Star})
    CHECK(topology::kind_from_tag(topology::kind_tag(k)) == k);
  CHECK_THROWS_AS(topology::kind_from_tag("mesh"), ParameterError);
}
