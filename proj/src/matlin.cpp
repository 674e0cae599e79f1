#include "mdir/matlin.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>

#include "mdir/errors.hpp"

namespace mdir {

double rank_tolerance(double sigma_max, std::int64_t rows, std::int64_t cols) {
  return std::numeric_limits<double>::epsilon() * sigma_max *
         static_cast<double>(std::max(rows, cols));
}

SvdResult svd(const DenseMatrix& a) {
  if (!a.all_finite()) throw NonFiniteValue("svd: input has non-finite entries");
  Eigen::BDCSVD<EigenRowMat> dec(a.map(), Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (dec.info() != Eigen::Success)
    throw ConvergenceFailure("svd: decomposition did not converge");

  EigenRowMat u = dec.matrixU();
  EigenRowMat v = dec.matrixV();
  Eigen::VectorXd s = dec.singularValues();

  // Sign convention: make the largest-magnitude entry of each left singular
  // vector positive (first index on ties), flipping U and V columns in pairs.
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    Eigen::Index imax = 0;
    double best = 0.0;
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      if (std::abs(u(i, j)) > best) {
        best = std::abs(u(i, j));
        imax = i;
      }
    }
    if (u(imax, j) < 0.0) {
      u.col(j) = -u.col(j);
      v.col(j) = -v.col(j);
    }
  }

  SvdResult out;
  out.u = DenseMatrix::from_eigen(u);
  out.v = DenseMatrix::from_eigen(v);
  out.sigma.assign(s.data(), s.data() + s.size());
  return out;
}

namespace {

double thin_side_residual(const EigenRowMat& w) {
  if (w.rows() >= w.cols()) {
    EigenRowMat g = w.transpose() * w;
    g.diagonal().array() -= 1.0;
    return g.norm();
  }
  EigenRowMat g = w * w.transpose();
  g.diagonal().array() -= 1.0;
  return g.norm();
}

PolarResult polar_via_svd(const DenseMatrix& a) {
  SvdResult dec = svd(a);
  PolarResult out;
  EigenRowMat w = dec.u.map() * dec.v.map().transpose();
  out.w = DenseMatrix::from_eigen(w);
  out.singular_values = dec.sigma;
  const double smax = dec.sigma.empty() ? 0.0 : dec.sigma.front();
  const double tol = rank_tolerance(smax, a.rows(), a.cols());
  out.effective_rank = static_cast<std::int64_t>(
      std::count_if(dec.sigma.begin(), dec.sigma.end(),
                    [tol](double s) { return s > tol; }));
  if (out.effective_rank ==
      static_cast<std::int64_t>(out.singular_values.size())) {
    out.w_truncated = out.w;
  } else {
    const auto k = out.effective_rank;
    out.w_truncated = DenseMatrix::from_eigen(
        dec.u.map().leftCols(k) * dec.v.map().leftCols(k).transpose());
  }
  out.ortho_residual = thin_side_residual(w);
  return out;
}

// Odd-polynomial (Newton-Schulz) iteration: X <- 1.5 X - 0.5 X X^T X after
// Frobenius prescaling. Converges to the orthogonal part for full-rank input;
// singular values are still reported from an SVD so the contract fields stay
// meaningful.
PolarResult polar_via_iteration(const DenseMatrix& a, const PolarOptions& opts) {
  const bool wide = a.rows() < a.cols();
  EigenRowMat x = wide ? EigenRowMat(a.map().transpose()) : EigenRowMat(a.map());
  const double norm = x.norm();
  if (norm == 0.0)
    throw ConvergenceFailure("iterative polar: zero matrix has no orthogonal part");
  x /= norm;
  bool converged = false;
  for (int it = 0; it < opts.max_iterations; ++it) {
    EigenRowMat gram = x.transpose() * x;
    EigenRowMat resid = gram;
    resid.diagonal().array() -= 1.0;
    if (resid.norm() <= opts.tolerance) {
      converged = true;
      break;
    }
    x = 1.5 * x - 0.5 * x * gram;
  }
  if (!converged) {
    EigenRowMat gram = x.transpose() * x;
    gram.diagonal().array() -= 1.0;
    if (gram.norm() > 1e-8)
      throw ConvergenceFailure("iterative polar: iteration cap reached");
  }
  if (wide) x = EigenRowMat(x.transpose());

  SvdResult dec = svd(a);
  PolarResult out;
  out.w = DenseMatrix::from_eigen(x);
  out.w_truncated = out.w;  // iteration mode targets well-conditioned input
  out.singular_values = dec.sigma;
  const double smax = dec.sigma.empty() ? 0.0 : dec.sigma.front();
  const double tol = rank_tolerance(smax, a.rows(), a.cols());
  out.effective_rank = static_cast<std::int64_t>(
      std::count_if(dec.sigma.begin(), dec.sigma.end(),
                    [tol](double s) { return s > tol; }));
  out.ortho_residual = thin_side_residual(x);
  return out;
}

}  // namespace

PolarResult ortho(const DenseMatrix& a, const PolarOptions& opts) {
  if (!a.all_finite()) throw NonFiniteValue("ortho: input has non-finite entries");
  if (opts.mode == PolarMode::newton_schulz) return polar_via_iteration(a, opts);
  return polar_via_svd(a);
}

DenseMatrix cross_covariance(const DenseMatrix& ea, const DenseMatrix& eb) {
  if (ea.rows() != eb.rows())
    throw RowCountMismatch("cross_covariance: row counts differ (" +
                           std::to_string(ea.rows()) + " vs " +
                           std::to_string(eb.rows()) + ")");
  constexpr std::int64_t kBlock = 256;
  EigenRowMat acc = EigenRowMat::Zero(eb.cols(), ea.cols());
  for (std::int64_t r0 = 0; r0 < ea.rows(); r0 += kBlock) {
    const std::int64_t len = std::min(kBlock, ea.rows() - r0);
    acc.noalias() +=
        eb.map().middleRows(r0, len).transpose() * ea.map().middleRows(r0, len);
  }
  return DenseMatrix::from_eigen(acc);
}

SpectralSummary spectral_summary(const DenseMatrix& a, std::int64_t k, double p) {
  const std::int64_t mindim = std::min(a.rows(), a.cols());
  if (k < 1 || k > mindim)
    throw InvalidDim("spectral_summary: k out of range");
  if (p < 1.0)
    throw InvalidDim("spectral_summary: p must be >= 1");
  SvdResult dec = svd(a);
  SpectralSummary s;
  s.k = k;
  s.p = p;
  double frob2 = 0.0, kyfan = 0.0, schatten = 0.0;
  for (std::size_t i = 0; i < dec.sigma.size(); ++i) {
    const double sv = dec.sigma[i];
    frob2 += sv * sv;
    if (static_cast<std::int64_t>(i) < k) kyfan += sv;
    schatten += std::pow(sv, p);
  }
  s.frobenius = std::sqrt(frob2);
  s.spectral = dec.sigma.empty() ? 0.0 : dec.sigma.front();
  s.kyfan_k = kyfan;
  s.schatten_p = schatten > 0.0 ? std::pow(schatten, 1.0 / p) : 0.0;
  return s;
}

}  // namespace mdir
