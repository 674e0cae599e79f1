#include "mdir/assign.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mdir/errors.hpp"

namespace mdir {

namespace {

void require_square_finite(const DenseMatrix& score, const char* who) {
  if (score.rows() != score.cols())
    throw NonSquare(std::string(who) + ": score matrix must be square");
  if (!score.all_finite())
    throw NonFiniteValue(std::string(who) + ": score matrix has non-finite entries");
}

double direct_total(const DenseMatrix& score, const std::vector<std::int64_t>& perm) {
  double t = 0.0;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(perm.size()); ++i)
    t += score(i, perm[i]);
  return t;
}

}  // namespace

AssignmentResult solve_exact(const DenseMatrix& score) {
  require_square_finite(score, "solve_exact");
  const std::int64_t n = score.rows();
  AssignmentResult out;
  out.method = AssignMethod::hungarian;
  if (n == 0) return out;

  // Potential-based shortest augmenting path on the negated scores
  // (minimization form). 1-based with a virtual column 0.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::int64_t> match(n + 1, 0), way(n + 1, 0);
  for (std::int64_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::int64_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::int64_t i0 = match[j0];
      std::int64_t j1 = 0;
      double delta = kInf;
      for (std::int64_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -score(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {  // strict: keeps the lowest column on ties
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::int64_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::int64_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  out.perm.assign(n, -1);
  for (std::int64_t j = 1; j <= n; ++j)
    if (match[j] != 0) out.perm[match[j] - 1] = j - 1;
  out.total = direct_total(score, out.perm);
  out.is_permutation = true;
  return out;
}

HeuristicOutcome solve_heuristic(const DenseMatrix& score) {
  require_square_finite(score, "solve_heuristic");
  const std::int64_t n = score.rows();
  HeuristicOutcome out;
  out.row_argmax.assign(n, 0);
  std::vector<std::int64_t> claims(n, 0);
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t jbest = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < n; ++j) {
      if (score(i, j) > best) {  // strict: first maximum wins ties
        best = score(i, j);
        jbest = j;
      }
    }
    out.row_argmax[i] = jbest;
    ++claims[jbest];
  }
  for (std::int64_t j = 0; j < n; ++j)
    if (claims[j] > 1) out.collided_columns.push_back(j);
  if (out.collided_columns.empty()) {
    AssignmentResult res;
    res.perm = out.row_argmax;
    res.total = direct_total(score, res.perm);
    res.method = AssignMethod::heuristic;
    res.is_permutation = true;
    out.assignment = std::move(res);
  }
  return out;
}

}  // namespace mdir
