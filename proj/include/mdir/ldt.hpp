#pragma once

#include <cstdint>
#include <vector>

#include "mdir/dense_matrix.hpp"

namespace mdir {

struct PValueResult {
  double trace_c = 0.0;
  std::int64_t dim_d = 1;
  double log10_p = 0.0;   // log10(d!) - max(0,c)^2 / (2 ln 10), log-domain only
  double p_capped = 1.0;  // min(1, 10^log10_p); underflows to 0 in display
  double sigma_equiv = 0.0;
  bool significant = false;
  double threshold = 0.0;
};

struct TailEstimate {
  std::int64_t m = 0;  // matrix order n = 2m
  double r = 0.0;
  double empirical_prob = 0.0;
  std::int64_t sample_count = 0;
  std::int64_t hits = 0;
  double rate_ratio = 0.0;  // -log(empirical_prob) / (2 m^2 r^2)
  bool rate_ratio_defined = false;
};

struct DensityCheck {
  std::int64_t m = 0;
  std::int64_t samples = 0;
  std::int64_t bins = 0;
  std::vector<double> bin_mass;        // empirical, sums to 1
  std::vector<double> arcsine_mass;    // closed form per bin
  double sup_deviation = 0.0;          // max_k |bin_mass - arcsine_mass|
};

// p <= d! * exp(-c^2/2), evaluated entirely in log10 domain.
// Negative c contributes no evidence: the exponent uses max(0, c).
PValueResult pvalue(double trace_c, std::int64_t dim_d, double threshold);

// Multiplies the bound by `multiplier` in log domain (layer correction),
// re-deriving p_capped and significance at the stored threshold.
PValueResult with_log10_multiplier(PValueResult pv, double log10_multiplier);

// Ten-standard-deviation convention.
double default_threshold();  // 2e-23

// Haar-distributed orthogonal matrix: QR of an i.i.d. normal matrix with the
// R-diagonal signs absorbed. If `special`, the sample is reflected into
// SO(n) by negating the last column when det = -1.
DenseMatrix sample_haar_orthogonal(std::int64_t n, std::uint64_t seed, bool special);

// Monte Carlo estimate of P[Tr(A)/(2m) >= r] over Haar SO(2m).
// Deterministic for fixed (seed, samples) regardless of thread count.
TailEstimate estimate_tail(std::int64_t m, double r, std::int64_t samples,
                           std::uint64_t seed);

// Same estimate over an already-sampled trace set.
TailEstimate estimate_tail_from_traces(std::int64_t m, double r,
                                       const std::vector<double>& traces);

// Traces of `samples` Haar SO(2m) draws (per-index seeding; deterministic).
std::vector<double> sample_so_traces(std::int64_t m, std::int64_t samples,
                                     std::uint64_t seed);

// Pooled cos(eigenphase) histogram over Haar SO(2m) samples against the
// arcsine equilibrium density dx / (pi sqrt(1-x^2)).
DensityCheck eigenphase_density_check(std::int64_t m, std::int64_t samples,
                                      std::uint64_t seed, std::int64_t bins = 40);

// Worker cap honoring the MDIR_THREADS environment variable.
int worker_count();

}  // namespace mdir
