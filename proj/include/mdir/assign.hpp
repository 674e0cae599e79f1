#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mdir/dense_matrix.hpp"

namespace mdir {

enum class AssignMethod { heuristic, hungarian };

struct AssignmentResult {
  std::vector<std::int64_t> perm;  // perm[row] = assigned column, a bijection
  double total = 0.0;              // sum_i score(i, perm[i])
  AssignMethod method = AssignMethod::hungarian;
  bool is_permutation = true;
};

// Row-argmax outcome: `assignment` is set iff the per-row argmax map is a
// bijection; otherwise `collided_columns` lists the columns claimed by more
// than one row so the caller can escalate to solve_exact.
struct HeuristicOutcome {
  std::optional<AssignmentResult> assignment;
  std::vector<std::int64_t> row_argmax;
  std::vector<std::int64_t> collided_columns;
};

// Exact maximum linear sum assignment, O(n^3) potential-based Kuhn-Munkres.
// Ties resolved deterministically: rows processed in order, lowest column
// index preferred.
AssignmentResult solve_exact(const DenseMatrix& score);

// The fast path: positions of the maximal element in each row (first maximum
// on ties), verified to form a valid permutation.
HeuristicOutcome solve_heuristic(const DenseMatrix& score);

}  // namespace mdir
