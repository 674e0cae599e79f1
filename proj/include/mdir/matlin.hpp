#pragma once

#include <cstdint>
#include <vector>

#include "mdir/dense_matrix.hpp"

namespace mdir {

struct SvdResult {
  DenseMatrix u;               // thin left factor, orthonormal columns
  std::vector<double> sigma;   // descending, non-negative
  DenseMatrix v;               // thin right factor, orthonormal columns
};

struct PolarResult {
  DenseMatrix w;            // orthogonal part, same shape as input
  DenseMatrix w_truncated;  // spectral sign on the nonzero spectrum only:
                            // sum of u_i v_i^T over sigma_i above the rank
                            // tolerance. Equals w for full-rank input; for
                            // rank-deficient input it drops the arbitrary
                            // orthonormal completion.
  std::vector<double> singular_values;
  std::int64_t effective_rank = 0;
  double ortho_residual = 0.0;  // ||W^T W - I||_F on the thin side
};

struct SpectralSummary {
  double frobenius = 0.0;
  double spectral = 0.0;
  double kyfan_k = 0.0;
  std::int64_t k = 1;
  double schatten_p = 0.0;
  double p = 2.0;
};

enum class PolarMode { svd, newton_schulz };

struct PolarOptions {
  PolarMode mode = PolarMode::svd;
  int max_iterations = 200;     // newton_schulz only
  double tolerance = 1e-13;     // newton_schulz stop: ||X^T X - I||_F
};

// Thin SVD, A = U diag(S) V^T. S descending; deterministic sign convention
// (largest-magnitude entry of each left singular vector made positive).
SvdResult svd(const DenseMatrix& a);

// Orthogonal part of A (the factor maximizing Tr(A X^T) over orthonormal X).
PolarResult ortho(const DenseMatrix& a, const PolarOptions& opts = {});

// M = Eb^T * Ea over paired rows, blocked 64-bit accumulation (block 256).
// ortho(M) then estimates the transform U with Eb ~= Ea * U^T.
DenseMatrix cross_covariance(const DenseMatrix& ea, const DenseMatrix& eb);

// Orthogonal-invariant norms from the singular spectrum.
SpectralSummary spectral_summary(const DenseMatrix& a, std::int64_t k, double p);

// Rank tolerance used for effective_rank: sigma_i < eps * sigma_1 * max(r, c).
double rank_tolerance(double sigma_max, std::int64_t rows, std::int64_t cols);

}  // namespace mdir
