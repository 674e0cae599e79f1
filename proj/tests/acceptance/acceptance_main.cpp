// Acceptance suite: runs every gate criterion at its stated tolerance and
// prints one PASS/FAIL line per criterion. Exit code = number of failures.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

#include "mdir/assign.hpp"
#include "mdir/detect.hpp"
#include "mdir/forge.hpp"
#include "mdir/ldt.hpp"
#include "mdir/matlin.hpp"
#include "mdir/report.hpp"
#include "mdir/rng.hpp"
#include "mdir/stats.hpp"
#include "support/oracles.hpp"

using namespace mdir;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& name, bool pass,
            const std::string& detail) {
  std::cout << "criterion " << criterion << " [" << name << "]: "
            << (pass ? "PASS" : "FAIL") << " - " << detail << "\n";
  if (!pass) ++g_failures;
}

ArchSpec accept_arch() {
  ArchSpec a;
  a.num_layers = 4;
  a.emb_dim = 64;
  a.num_heads = 8;
  a.kv_heads = 4;
  a.head_dim = 8;
  a.intermediate_dim = 256;
  a.vocab_size = 512;
  a.name_template = arch_preset("canonical");
  return a;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1. Signed-permutation recovery with the derived log10_p bound, single thread.
void criterion_1() {
  setenv("MDIR_THREADS", "1", 1);
  const auto t0 = std::chrono::steady_clock::now();
  const ArchSpec arch = accept_arch();
  const ModelBundle a = make_toy_model(arch, 1001);
  ObfuscationPlan plan = sample_plan(arch, ForgeLevel::L2_permute, 1001);
  plan.noise_rms = 0.0;
  const ModelBundle b = apply_plan(a, plan);
  const VocabMap v = identity_vocab(arch.vocab_size);
  const DetectionReport r = run_mdir(a, b, v, v);
  const double elapsed = seconds_since(t0);
  unsetenv("MDIR_THREADS");

  const AlignmentFinding& emb = r.findings.front();
  const bool perm_ok = emb.perm && emb.perm->perm == plan.outer_perm &&
                       emb.perm_signs == plan.outer_signs;
  const bool p_ok = emb.pv && emb.pv->log10_p <= -700.0;
  const bool time_ok = elapsed < 10.0;
  std::ostringstream d;
  d << "perm " << (perm_ok ? "exact" : "WRONG") << ", log10_p = "
    << (emb.pv ? emb.pv->log10_p : 0.0) << " (need <= -700), "
    << elapsed << " s single-threaded (need < 10)";
  report(1, "permutation recovery", perm_ok && p_ok && time_ok, d.str());
}

// 2. Comprehensive obfuscation: related via MLP, every MLP perm exact.
void criterion_2() {
  const auto t0 = std::chrono::steady_clock::now();
  const ArchSpec arch = accept_arch();
  const ModelBundle a = make_toy_model(arch, 2002);
  const ObfuscationPlan plan = sample_plan(arch, ForgeLevel::L5_comprehensive, 2002);
  const ModelBundle b = apply_plan(a, plan);
  const VocabMap v = identity_vocab(arch.vocab_size);
  const DetectionReport r = run_mdir(a, b, v, v);
  const double elapsed = seconds_since(t0);

  bool emb_insig = !r.findings.front().significant();
  bool mlp_related = false;
  int exact_perms = 0;
  for (const auto& f : r.findings)
    if (f.stage == StageKind::mlp) {
      mlp_related = mlp_related || f.significant();
      if (f.perm && f.perm->perm == plan.mlp_perms[f.layer]) ++exact_perms;
    }
  const bool ok = r.related && emb_insig && mlp_related &&
                  exact_perms == arch.num_layers && elapsed < 60.0;
  std::ostringstream d;
  d << "related = " << r.related << " via MLP = " << mlp_related << ", "
    << exact_perms << "/" << arch.num_layers << " MLP perms exact, " << elapsed
    << " s (need < 60)";
  report(2, "comprehensive obfuscation", ok, d.str());
}

// 3. Null soundness: 100 independent pairs, zero significant findings,
//    embedding raw traces N(0,1) by KS.
void criterion_3() {
  const ArchSpec arch = accept_arch();
  const VocabMap v = identity_vocab(arch.vocab_size);
  int significant = 0;
  std::vector<double> traces;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const ModelBundle a = make_toy_model(arch, 30000 + 2 * s);
    const ModelBundle b = make_toy_model(arch, 30001 + 2 * s);
    const DetectionReport r = run_mdir(a, b, v, v);
    for (const auto& f : r.findings)
      if (f.significant()) ++significant;
    traces.push_back(r.findings.front().raw_trace);
  }
  const KsResult ks = ks_test_normal(traces);
  const bool ok = significant == 0 && ks.p_value > 0.01;
  std::ostringstream d;
  d << significant << " significant findings over 100 pairs (need 0), "
    << "embedding-trace KS p = " << ks.p_value << " (need > 0.01)";
  report(3, "null soundness", ok, d.str());
}

// 4. p-value engine: exact-sum oracle agreement, then the stated universal
//    anchor c = 3862 => p < 1e-3,000,000 for any d <= 1e5.
void criterion_4() {
  bool oracle_ok = true;
  double worst = 0.0;
  for (std::int64_t d : {2, 3, 10, 64, 100, 512, 1024, 4096, 9999, 10000}) {
    for (double c : {0.0, 1.0, 31.7, 500.0}) {
      const PValueResult p = pvalue(c, d, 2e-23);
      const double expect = oracles::exact_log10_factorial(d) -
                            c * c / (2.0 * std::log(10.0));
      const double rel = std::abs(p.log10_p - expect) /
                         std::max(1.0, std::abs(expect));
      worst = std::max(worst, rel);
      if (rel > 1e-8) oracle_ok = false;
    }
  }

  // The bound is monotone in d, so d = 1e5 is the binding case. At the
  // anchor's native width (~5120) it holds by a wide margin; at d = 1e5 the
  // d! term (log10 = 456573.5) exceeds the budget and the universal form of
  // the claim is arithmetically false. Asserted as written anyway.
  const double at_5120 = pvalue(3862.0, 5120, 2e-23).log10_p;
  const double at_1e5 = pvalue(3862.0, 100000, 2e-23).log10_p;
  const bool anchor_context_ok = at_5120 < -3.0e6;
  const bool anchor_universal_ok = at_1e5 < -3.0e6;

  std::ostringstream d;
  d << "oracle agreement worst rel err = " << worst << " (need <= 1e-8); "
    << "anchor c=3862: log10_p(d=5120) = " << at_5120 << " < -3e6 "
    << (anchor_context_ok ? "ok" : "VIOLATED") << ", log10_p(d=1e5) = " << at_1e5
    << " fails the stated -3e6 bound by " << (at_1e5 + 3.0e6)
    << " decades (universal claim unattainable: log10(1e5!) = 456573.5 vs "
       "c^2/(2 ln 10) = 3238760.7)";
  report(4, "p-value engine", oracle_ok && anchor_context_ok && anchor_universal_ok,
         d.str());
}

// 5. Rotation-trace Monte Carlo: rate ratio band and the trace CLT.
void criterion_5() {
  const std::vector<double> traces = sample_so_traces(8, 1000000, 55001);
  const TailEstimate est = estimate_tail_from_traces(8, 0.15, traces);
  const bool ratio_ok =
      est.rate_ratio_defined && est.rate_ratio >= 0.6 && est.rate_ratio <= 1.6;

  std::vector<double> ks_sample(traces.begin(), traces.begin() + 10000);
  const KsResult ks = ks_test_normal(ks_sample);
  const bool ks_ok = ks.p_value > 0.01;

  std::ostringstream d;
  d << "empirical_prob = " << est.empirical_prob << ", rate_ratio = "
    << est.rate_ratio << " vs stated band [0.6, 1.6]"
    << (ratio_ok ? "" : " (band unattainable at m=8: the Gaussian prefactor "
                        "-log(c sqrt(2 pi)) = 1.79 is 62% of the exponent "
                        "2 m^2 r^2 = 2.88; the limit is asymptotic in m)")
    << "; trace KS vs N(0,1) p = " << ks.p_value << " (need > 0.01)";
  report(5, "trace-tail monte carlo", ratio_ok && ks_ok, d.str());
}

// 6. Linear algebra contracts.
void criterion_6() {
  bool polar_ok = true;
  for (std::int64_t n : {64, 256, 512}) {
    DenseMatrix a(n, n);
    NormalSampler rng(6000 + static_cast<std::uint64_t>(n));
    for (double& v : a.data()) v = rng();
    const PolarResult p = ortho(a);
    if (p.ortho_residual > 1e-10 || p.effective_rank != n) polar_ok = false;
  }

  DenseMatrix a8(8, 8);
  NormalSampler rng(61);
  for (double& v : a8.data()) v = rng();
  const PolarResult p8 = ortho(a8);
  const double best = (a8.map() * p8.w.map().transpose()).trace();
  bool dominance_ok = true;
  for (std::uint64_t s = 0; s < 100000; ++s) {
    const DenseMatrix x = sample_haar_orthogonal(8, s, false);
    if ((a8.map() * x.map().transpose()).trace() > best + 1e-9) {
      dominance_ok = false;
      break;
    }
  }

  bool hungarian_ok = true;
  NormalSampler hrng(62);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::int64_t n = 1 + static_cast<std::int64_t>(hrng.engine()() % 7);
    DenseMatrix s(n, n);
    for (double& v : s.data()) v = hrng();
    const AssignmentResult got = solve_exact(s);
    const auto want = oracles::brute_force_assignment(s);
    if (std::abs(got.total - want.total) > 1e-12) hungarian_ok = false;
  }

  std::ostringstream d;
  d << "polar residual <= 1e-10 up to n=512: " << (polar_ok ? "ok" : "FAIL")
    << "; trace-max dominance over 1e5 orthogonal candidates: "
    << (dominance_ok ? "ok" : "FAIL")
    << "; Hungarian == brute force on 1000 instances (n <= 7): "
    << (hungarian_ok ? "ok" : "FAIL");
  report(6, "linear algebra contracts", polar_ok && dominance_ok && hungarian_ok,
         d.str());
}

// 7. Pruning analog: EmbDim 64 -> 32 partial isometry at 0.5% noise.
void criterion_7() {
  const ArchSpec arch = accept_arch();
  const ModelBundle a = make_toy_model(arch, 7007);
  const ObfuscationPlan plan = sample_plan(arch, ForgeLevel::pruning, 7007);
  const ModelBundle b = apply_plan(a, plan);
  const VocabMap v = identity_vocab(arch.vocab_size);
  const DetectionReport r = run_mdir(a, b, v, v);

  const AlignmentFinding& emb = r.findings.front();
  const bool flagged = emb.reliability == Reliability::rank_deficient;
  std::int64_t correct = 0;
  const auto& keep = *plan.prune_map;
  for (std::size_t i = 0; i < emb.row_map.size(); ++i)
    if (i < keep.size() && emb.row_map[i] == keep[i]) ++correct;
  const double frac = emb.row_map.empty()
                          ? 0.0
                          : double(correct) / double(emb.row_map.size());
  // conservative bound only: d is the larger dimension and the stage is
  // flagged, so no exact-significance claim is made beyond it
  const bool conservative = emb.pv && emb.pv->dim_d == 64 && flagged;
  const bool ok = flagged && frac >= 0.95 && conservative;
  std::ostringstream d;
  d << "rank_deficient flag = " << flagged << ", kept-channel recovery = "
    << 100.0 * frac << "% (need >= 95%), conservative d = "
    << (emb.pv ? emb.pv->dim_d : 0);
  report(7, "pruning analog", ok, d.str());
}

// 8. Format fidelity: container round trip, heatmap golden bytes, report JSON.
void criterion_8(const fs::path& scratch) {
  fs::create_directories(scratch);
  const ArchSpec arch = accept_arch();
  const ModelBundle m = make_toy_model(arch, 8008);
  const fs::path p1 = scratch / "fidelity1.safetensors";
  const fs::path p2 = scratch / "fidelity2.safetensors";
  save_model(p1.string(), m);
  const ModelBundle loaded = load_model(p1.string(), arch);
  save_model(p2.string(), loaded);
  auto bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  };
  const bool container_ok = bytes(p1) == bytes(p2) && !bytes(p1).empty();

  DenseMatrix hm(4, 4);
  hm(0, 0) = 1.0;
  hm(1, 2) = -1.0;
  hm(3, 3) = 0.5;
  const auto ppm1 = render_heatmap_ppm(hm, {});
  const auto ppm2 = render_heatmap_ppm(hm, {});
  // golden bytes: header + 16 pixels, red at (0,0) and (1,2), half ramp at (3,3)
  std::vector<std::uint8_t> golden;
  for (char c : std::string("P6\n4 4\n255\n")) golden.push_back(c);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      std::uint8_t fade = 255;
      if ((i == 0 && j == 0) || (i == 1 && j == 2)) fade = 0;
      if (i == 3 && j == 3) fade = 128;  // round(255 * 0.5)
      golden.push_back(255);
      golden.push_back(fade);
      golden.push_back(fade);
    }
  const bool heatmap_ok = ppm1 == ppm2 && ppm1 == golden;

  const ModelBundle b = apply_plan(m, sample_plan(arch, ForgeLevel::L2_permute, 8008));
  const VocabMap v = identity_vocab(arch.vocab_size);
  const DetectionReport rep = run_mdir(m, b, v, v);
  const std::string text = report_to_json_text(rep, {"x.ppm"});
  const bool report_ok =
      report_to_json_text(report_from_json_text(text), {"x.ppm"}) == text;

  std::ostringstream d;
  d << "container round-trip byte-identical: " << (container_ok ? "ok" : "FAIL")
    << "; heatmap golden bytes: " << (heatmap_ok ? "ok" : "FAIL")
    << "; report schema round-trip: " << (report_ok ? "ok" : "FAIL");
  report(8, "format fidelity", container_ok && heatmap_ok && report_ok, d.str());
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path scratch =
      argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "mdir_acceptance";
  std::cout.setf(std::ios::fixed);
  std::cout.precision(6);
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8(scratch);
  std::cout << (g_failures == 0 ? "ALL CRITERIA PASS"
                                : std::to_string(g_failures) + " CRITERIA FAILED")
            << "\n";
  return g_failures;
}
