#include <doctest.h>

#include <cmath>

#include "mdir/assign.hpp"
#include "mdir/errors.hpp"
#include "mdir/rng.hpp"
#include "support/oracles.hpp"

using namespace mdir;

namespace {

DenseMatrix random_score(std::int64_t n, std::uint64_t seed) {
  DenseMatrix m(n, n);
  NormalSampler rng(seed);
  for (double& v : m.data()) v = rng();
  return m;
}

}  // namespace

TEST_SUITE_BEGIN("assign");

TEST_CASE("identity score selects the identity permutation") {
  const AssignmentResult r = solve_exact(DenseMatrix::identity(3));
  CHECK(r.perm == std::vector<std::int64_t>{0, 1, 2});
  CHECK(r.total == doctest::Approx(3.0));
  CHECK(r.is_permutation);
}

TEST_CASE("3x3 example against the exhaustive oracle") {
  DenseMatrix s(3, 3);
  const double vals[9] = {1, 9, 1, 8, 1, 1, 1, 1, 7};
  for (int i = 0; i < 9; ++i) s.data()[i] = vals[i];
  const AssignmentResult r = solve_exact(s);
  CHECK(r.perm == std::vector<std::int64_t>{1, 0, 2});
  CHECK(r.total == doctest::Approx(24.0));
  const auto oracle = oracles::brute_force_assignment(s);
  CHECK(r.total == doctest::Approx(oracle.total).epsilon(1e-12));
}

TEST_CASE("all-zero score resolves ties to the identity") {
  const AssignmentResult r = solve_exact(DenseMatrix(4, 4));
  CHECK(r.perm == std::vector<std::int64_t>{0, 1, 2, 3});
  CHECK(r.total == 0.0);
}

TEST_CASE("exact solver equals brute force for n <= 7") {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const std::int64_t n = 1 + static_cast<std::int64_t>(seed % 7);
    const DenseMatrix s = random_score(n, 1000 + seed);
    const AssignmentResult r = solve_exact(s);
    const auto oracle = oracles::brute_force_assignment(s);
    CHECK(r.total == doctest::Approx(oracle.total).epsilon(1e-12));
    // continuous scores: the optimum is unique almost surely
    CHECK(r.perm == oracle.perm);
  }
}

TEST_CASE("exact solver equals brute force on tie-heavy integer scores") {
  NormalSampler rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t n = 2 + static_cast<std::int64_t>(trial % 5);
    DenseMatrix s(n, n);
    for (double& v : s.data())
      v = static_cast<double>(rng.engine()() % 3);  // many exact ties
    const AssignmentResult r = solve_exact(s);
    const auto oracle = oracles::brute_force_assignment(s);
    CHECK(r.total == doctest::Approx(oracle.total).epsilon(1e-12));
  }
}

TEST_CASE("total matches direct evaluation to 1e-12") {
  const DenseMatrix s = random_score(12, 123);
  const AssignmentResult r = solve_exact(s);
  double direct = 0.0;
  for (std::int64_t i = 0; i < 12; ++i) direct += s(i, r.perm[i]);
  CHECK(std::abs(r.total - direct) <= 1e-12);
}

TEST_CASE("heuristic accepts a dominant diagonal with bounded noise") {
  DenseMatrix s(8, 8);
  NormalSampler rng(17);
  for (std::int64_t i = 0; i < 8; ++i)
    for (std::int64_t j = 0; j < 8; ++j) {
      double noise;
      do {
        noise = 0.13 * rng();
      } while (std::abs(noise) >= 0.4);
      s(i, j) = (i == j ? 0.99 : 0.0) + (i == j ? 0.0 : noise);
    }
  const HeuristicOutcome h = solve_heuristic(s);
  REQUIRE(h.assignment.has_value());
  CHECK(h.assignment->perm == std::vector<std::int64_t>{0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(h.assignment->method == AssignMethod::heuristic);
}

TEST_CASE("heuristic reports collisions on an all-ones matrix") {
  DenseMatrix s(2, 2);
  for (double& v : s.data()) v = 1.0;
  const HeuristicOutcome h = solve_heuristic(s);
  CHECK(!h.assignment.has_value());
  CHECK(h.row_argmax == std::vector<std::int64_t>{0, 0});
  CHECK(h.collided_columns == std::vector<std::int64_t>{0});
}

TEST_CASE("heuristic equals exact on a permuted polar-like score") {
  // near-permutation score: planted permutation plus small noise
  NormalSampler rng(55);
  DenseMatrix s(16, 16);
  std::vector<std::int64_t> planted(16);
  for (int i = 0; i < 16; ++i) planted[i] = (i * 5 + 3) % 16;
  for (std::int64_t i = 0; i < 16; ++i)
    for (std::int64_t j = 0; j < 16; ++j)
      s(i, j) = (planted[i] == j ? 1.0 : 0.0) + 0.05 * rng();
  const HeuristicOutcome h = solve_heuristic(s);
  REQUIRE(h.assignment.has_value());
  const AssignmentResult ex = solve_exact(s);
  CHECK(h.assignment->perm == ex.perm);
  CHECK(h.assignment->perm == planted);
}

TEST_CASE("when the heuristic returns, its total never exceeds the exact optimum") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const DenseMatrix s = random_score(9, 4000 + seed);
    const HeuristicOutcome h = solve_heuristic(s);
    if (!h.assignment) continue;
    const AssignmentResult ex = solve_exact(s);
    CHECK(h.assignment->total <= ex.total + 1e-12);
    // a bijective row-argmax is in fact optimal: row maxima bound any assignment
    CHECK(h.assignment->total == doctest::Approx(ex.total).epsilon(1e-12));
  }
}

TEST_CASE("transposed scores give the inverse permutation when unique") {
  const DenseMatrix s = random_score(10, 77);
  const AssignmentResult fwd = solve_exact(s);
  const AssignmentResult bwd = solve_exact(s.transposed());
  for (std::int64_t i = 0; i < 10; ++i) CHECK(bwd.perm[fwd.perm[i]] == i);
}

TEST_CASE("non-square and non-finite scores are rejected") {
  CHECK_THROWS_AS(solve_exact(DenseMatrix(2, 3)), NonSquare);
  CHECK_THROWS_AS(solve_heuristic(DenseMatrix(4, 1)), NonSquare);
  DenseMatrix bad(2, 2);
  bad(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(solve_exact(bad), NonFiniteValue);
}

TEST_SUITE_END();
