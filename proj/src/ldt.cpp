#include "mdir/ldt.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <thread>

#include "mdir/errors.hpp"
#include "mdir/rng.hpp"

namespace mdir {

namespace {

constexpr double kLn10 = 2.302585092994045684;

double log10_factorial(std::int64_t d) {
  return std::lgamma(static_cast<double>(d) + 1.0) / kLn10;
}

EigenRowMat haar_eigen(std::int64_t n, std::uint64_t seed, bool special) {
  NormalSampler normal(seed);
  EigenRowMat g(n, n);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j) g(i, j) = normal();
  Eigen::HouseholderQR<EigenRowMat> qr(g);
  EigenRowMat q = qr.householderQ() * EigenRowMat::Identity(n, n);
  const EigenRowMat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (std::int64_t j = 0; j < n; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  if (special && q.determinant() < 0.0) q.col(n - 1) = -q.col(n - 1);
  return q;
}

template <typename Fn>
void parallel_indices(std::int64_t count, Fn&& fn) {
  const int workers = std::min<std::int64_t>(worker_count(), count);
  if (workers <= 1) {
    for (std::int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::int64_t i = next.fetch_add(256);
        if (i >= count) return;
        const std::int64_t hi = std::min(count, i + 256);
        for (std::int64_t k = i; k < hi; ++k) fn(k);
      }
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

int worker_count() {
  if (const char* env = std::getenv("MDIR_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<int>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

double default_threshold() { return 2e-23; }

PValueResult pvalue(double trace_c, std::int64_t dim_d, double threshold) {
  if (dim_d < 1) throw InvalidDim("pvalue: dim must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0))
    throw InvalidThreshold("pvalue: threshold must be in (0,1)");
  if (!std::isfinite(trace_c)) throw NonFiniteValue("pvalue: trace is not finite");

  PValueResult out;
  out.trace_c = trace_c;
  out.dim_d = dim_d;
  out.threshold = threshold;
  out.sigma_equiv = std::max(0.0, trace_c);
  out.log10_p =
      log10_factorial(dim_d) - out.sigma_equiv * out.sigma_equiv / (2.0 * kLn10);
  out.p_capped = out.log10_p >= 0.0 ? 1.0 : std::pow(10.0, out.log10_p);
  out.significant = out.log10_p < std::log10(threshold);
  return out;
}

PValueResult with_log10_multiplier(PValueResult pv, double log10_multiplier) {
  pv.log10_p += log10_multiplier;
  pv.p_capped = pv.log10_p >= 0.0 ? 1.0 : std::pow(10.0, pv.log10_p);
  pv.significant = pv.log10_p < std::log10(pv.threshold);
  return pv;
}

DenseMatrix sample_haar_orthogonal(std::int64_t n, std::uint64_t seed, bool special) {
  if (n < 1) throw InvalidDim("sample_haar_orthogonal: n must be >= 1");
  return DenseMatrix::from_eigen(haar_eigen(n, seed, special));
}

std::vector<double> sample_so_traces(std::int64_t m, std::int64_t samples,
                                     std::uint64_t seed) {
  const std::int64_t n = 2 * m;
  std::vector<double> traces(samples, 0.0);
  parallel_indices(samples, [&](std::int64_t i) {
    traces[i] = haar_eigen(n, mix_seed(seed, static_cast<std::uint64_t>(i)), true)
                    .trace();
  });
  return traces;
}

TailEstimate estimate_tail_from_traces(std::int64_t m, double r,
                                       const std::vector<double>& traces) {
  const double cut = 2.0 * static_cast<double>(m) * r;
  std::int64_t hits = 0;
  for (double t : traces)
    if (t >= cut) ++hits;

  TailEstimate out;
  out.m = m;
  out.r = r;
  out.sample_count = static_cast<std::int64_t>(traces.size());
  out.hits = hits;
  out.empirical_prob =
      static_cast<double>(hits) / static_cast<double>(traces.size());
  if (hits > 0) {
    out.rate_ratio = -std::log(out.empirical_prob) /
                     (2.0 * static_cast<double>(m * m) * r * r);
    out.rate_ratio_defined = true;
  }
  return out;
}

TailEstimate estimate_tail(std::int64_t m, double r, std::int64_t samples,
                           std::uint64_t seed) {
  if (m < 1) throw InvalidDim("estimate_tail: m must be >= 1");
  if (samples < 1000) throw InvalidDim("estimate_tail: need at least 1000 samples");
  if (!(r > 0.0 && r <= 0.5))
    throw InvalidThreshold("estimate_tail: r must lie in (0, 1/2]");
  return estimate_tail_from_traces(m, r, sample_so_traces(m, samples, seed));
}

DensityCheck eigenphase_density_check(std::int64_t m, std::int64_t samples,
                                      std::uint64_t seed, std::int64_t bins) {
  if (m < 4) throw InvalidDim("eigenphase_density_check: m must be >= 4");
  if (samples < 1 || bins < 2)
    throw InvalidDim("eigenphase_density_check: bad samples/bins");

  const std::int64_t n = 2 * m;
  // cos(theta_k) from the 2x2 rotation blocks of the real Schur form; for an
  // orthogonal matrix the quasi-triangular factor is quasi-diagonal with
  // blocks [[c, -s], [s, c]]. Stray 1x1 blocks (eigenvalues +-1) contribute
  // their diagonal value.
  std::vector<std::vector<double>> per_sample(samples);
  parallel_indices(samples, [&](std::int64_t idx) {
    const EigenRowMat q =
        haar_eigen(n, mix_seed(seed, static_cast<std::uint64_t>(idx)), true);
    Eigen::RealSchur<EigenRowMat> schur(q);
    const EigenRowMat& t = schur.matrixT();
    std::vector<double>& out = per_sample[idx];
    std::int64_t i = 0;
    while (i < n) {
      if (i + 1 < n && std::abs(t(i + 1, i)) > 1e-12) {
        out.push_back(std::clamp(t(i, i), -1.0, 1.0));
        i += 2;
      } else {
        out.push_back(std::clamp(t(i, i), -1.0, 1.0));
        i += 1;
      }
    }
  });

  std::vector<std::int64_t> counts(bins, 0);
  std::int64_t total = 0;
  for (const auto& vals : per_sample) {
    for (double c : vals) {
      const double unit = (c + 1.0) / 2.0;
      std::int64_t b = static_cast<std::int64_t>(unit * static_cast<double>(bins));
      b = std::clamp<std::int64_t>(b, 0, bins - 1);
      ++counts[b];
      ++total;
    }
  }

  DensityCheck out;
  out.m = m;
  out.samples = samples;
  out.bins = bins;
  out.bin_mass.resize(bins);
  out.arcsine_mass.resize(bins);
  for (std::int64_t b = 0; b < bins; ++b) {
    const double lo = -1.0 + 2.0 * static_cast<double>(b) / static_cast<double>(bins);
    const double hi =
        -1.0 + 2.0 * static_cast<double>(b + 1) / static_cast<double>(bins);
    out.arcsine_mass[b] =
        (std::asin(std::min(1.0, hi)) - std::asin(std::max(-1.0, lo))) /
        std::numbers::pi;
    out.bin_mass[b] =
        static_cast<double>(counts[b]) / static_cast<double>(total);
    out.sup_deviation =
        std::max(out.sup_deviation, std::abs(out.bin_mass[b] - out.arcsine_mass[b]));
  }
  return out;
}

}  // namespace mdir
