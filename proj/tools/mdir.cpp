// mdir - weight-provenance detection for transformer checkpoints.
//
// Exit codes: 0 completed & unrelated, 10 completed & related,
//             1 runtime error, 2 usage error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mdir/detect.hpp"
#include "mdir/errors.hpp"
#include "mdir/forge.hpp"
#include "mdir/ldt.hpp"
#include "mdir/model_io.hpp"
#include "mdir/report.hpp"
#include "mdir/stats.hpp"
#include "mdir/vocab.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitUnrelated = 0;
constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitRelated = 10;

struct CompareArgs {
  std::string model_a, model_b, arch_a, arch_b, vocab_a, vocab_b;
  double threshold = 2e-23;
  std::string out;
  std::string heatmaps;
  std::string layers = "all";
  std::int64_t exact_cap = 20480;
  std::string mode = "up_only";
  bool png = false;
  bool byte_remap_a = false;
  bool byte_remap_b = false;
  bool screen = false;
};

std::vector<std::int64_t> parse_layers(const std::string& text) {
  std::vector<std::int64_t> out;
  if (text == "all") return out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string item = text.substr(pos, comma - pos);
    out.push_back(std::stoll(item));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

int run_compare(const CompareArgs& args) {
  const mdir::ArchSpec arch_a = mdir::arch_from_json_file(args.arch_a);
  const mdir::ArchSpec arch_b = mdir::arch_from_json_file(args.arch_b);
  const mdir::ModelBundle a = mdir::load_model(args.model_a, arch_a);
  const mdir::ModelBundle b = mdir::load_model(args.model_b, arch_b);
  const mdir::VocabMap va = mdir::load_vocab(args.vocab_a, args.byte_remap_a);
  const mdir::VocabMap vb = mdir::load_vocab(args.vocab_b, args.byte_remap_b);

  mdir::DetectConfig cfg;
  cfg.threshold = args.threshold;
  cfg.exact_assignment_cap = args.exact_cap;
  cfg.mlp_mode = args.mode == "sum3" ? mdir::MlpMode::sum3 : mdir::MlpMode::up_only;
  cfg.keep_matrices = !args.heatmaps.empty();
  try {
    cfg.layers = parse_layers(args.layers);
  } catch (const std::exception&) {
    std::cerr << "error: --layers expects 'all' or a comma-separated list\n";
    return kExitUsage;
  }

  if (args.screen) {
    std::cerr << "preliminary screen (top orthogonal-invariant norm deltas):\n";
    const auto entries = mdir::preliminary_screen(a, b);
    for (std::size_t i = 0; i < entries.size() && i < 8; ++i)
      std::cerr << "  " << entries[i].name << "  max_delta=" << entries[i].max_delta
                << "\n";
  }

  const mdir::DetectionReport report = mdir::run_mdir(a, b, va, vb, cfg);

  std::vector<std::string> heatmap_paths;
  if (!args.heatmaps.empty()) {
    fs::create_directories(args.heatmaps);
    const char* ext = args.png ? ".png" : ".ppm";
    for (const mdir::AlignmentFinding& f : report.findings) {
      if (!f.error.empty() || f.u_tilde.empty()) continue;
      const bool wanted = f.stage == mdir::StageKind::embedding ||
                          f.stage == mdir::StageKind::attn_v ||
                          f.stage == mdir::StageKind::mlp;
      if (!wanted) continue;
      std::string name = mdir::stage_name(f.stage);
      if (f.layer >= 0) name = "layer" + std::to_string(f.layer) + "_" + name;
      mdir::HeatmapSpec spec;
      spec.source = name;
      spec.output_path = (fs::path(args.heatmaps) / (name + ext)).string();
      mdir::render_heatmap(f.u_tilde, spec, args.png);
      heatmap_paths.push_back(spec.output_path);
    }
  }

  const std::string text = mdir::report_to_json_text(report, heatmap_paths);
  if (args.out.empty()) {
    std::cout << text;
  } else {
    std::ofstream out(args.out, std::ios::trunc);
    if (!out) throw mdir::IoError("cannot write report: " + args.out);
    out << text;
  }

  std::cerr << (report.related ? "related" : "unrelated")
            << " (headline log10 p = " << report.headline_log10_p << ")\n";
  return report.related ? kExitRelated : kExitUnrelated;
}

struct McArgs {
  std::int64_t m = 8;
  double r = 0.15;
  std::int64_t samples = 100000;
  std::uint64_t seed = 0;
  bool density_check = false;
  std::int64_t bins = 40;
};

int run_mc_validate(const McArgs& args) {
  const std::vector<double> traces =
      mdir::sample_so_traces(args.m, args.samples, args.seed);
  const mdir::TailEstimate est = mdir::estimate_tail_from_traces(args.m, args.r, traces);
  const mdir::KsResult ks = mdir::ks_test_normal(traces);

  json doc;
  doc["m"] = est.m;
  doc["r"] = est.r;
  doc["samples"] = est.sample_count;
  doc["hits"] = est.hits;
  doc["empirical_prob"] = est.empirical_prob;
  doc["rate_ratio"] = est.rate_ratio_defined ? json(est.rate_ratio) : json(nullptr);
  doc["ks_statistic"] = ks.statistic;
  doc["ks_p_value"] = ks.p_value;
  if (args.density_check) {
    const mdir::DensityCheck dc = mdir::eigenphase_density_check(
        args.m, std::min<std::int64_t>(args.samples, 4000), args.seed, args.bins);
    doc["density_bins"] = dc.bins;
    doc["density_sup_deviation"] = dc.sup_deviation;
  }
  std::cout << doc.dump(2) << "\n";
  return 0;
}

struct ForgeArgs {
  std::string arch;
  std::string level = "L2";
  std::uint64_t seed = 1;
  std::string out;
  std::int64_t prune_dim = 0;  // 0 = emb_dim / 2
  std::string dtype = "f64";
};

int run_forge(const ForgeArgs& args) {
  const mdir::ArchSpec arch = mdir::arch_from_json_file(args.arch);
  const mdir::ForgeLevel level = mdir::forge_level_from_name(args.level);
  std::optional<std::int64_t> prune_target;
  if (args.prune_dim > 0) {
    if (args.prune_dim > arch.emb_dim) {
      std::cerr << "error: pruning target " << args.prune_dim
                << " exceeds source emb_dim " << arch.emb_dim << "\n";
      return kExitUsage;
    }
    prune_target = args.prune_dim;
  }

  const mdir::ModelBundle base = mdir::make_toy_model(arch, args.seed);
  const mdir::ObfuscationPlan plan =
      mdir::sample_plan(arch, level, args.seed, prune_target);
  const mdir::ModelBundle obfuscated = mdir::apply_plan(base, plan);

  fs::create_directories(args.out);
  const mdir::Dtype dtype =
      args.dtype == "f32" ? mdir::Dtype::f32 : mdir::Dtype::f64;
  const fs::path dir(args.out);
  mdir::save_model((dir / "model_a.safetensors").string(), base, dtype);
  mdir::save_model((dir / "model_b.safetensors").string(), obfuscated, dtype);
  std::ofstream(dir / "plan.json") << mdir::plan_to_json_text(plan);
  std::ofstream(dir / "arch_a.json") << mdir::arch_to_json_text(base.arch);
  std::ofstream(dir / "arch_b.json") << mdir::arch_to_json_text(obfuscated.arch);
  const std::string vocab = mdir::vocab_to_json_text(mdir::identity_vocab(arch.vocab_size));
  std::ofstream(dir / "vocab_a.json") << vocab;
  std::ofstream(dir / "vocab_b.json") << vocab;
  std::cerr << "wrote fixture pair (" << args.level << ", seed " << args.seed
            << ") to " << args.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mdir - transformer weight-provenance detection"};
  app.require_subcommand(1);

  CompareArgs cmp;
  CLI::App* compare = app.add_subcommand(
      "compare", "Reconstruct the hidden transformation between two checkpoints "
                 "and report p-values (exit 10 when related, 0 when not)");
  compare->add_option("--model-a", cmp.model_a, "checkpoint A (.safetensors or .index.json)")
      ->required();
  compare->add_option("--model-b", cmp.model_b, "checkpoint B")->required();
  compare->add_option("--arch-a", cmp.arch_a, "architecture JSON for A")->required();
  compare->add_option("--arch-b", cmp.arch_b, "architecture JSON for B")->required();
  compare->add_option("--vocab-a", cmp.vocab_a, "tokenizer vocab JSON for A")->required();
  compare->add_option("--vocab-b", cmp.vocab_b, "tokenizer vocab JSON for B")->required();
  compare->add_option("--threshold", cmp.threshold, "significance threshold on p")
      ->check(CLI::Range(1e-300, 0.99));
  compare->add_option("--out", cmp.out, "report JSON path (default: stdout)");
  compare->add_option("--heatmaps", cmp.heatmaps, "directory for relation heatmaps");
  compare->add_option("--layers", cmp.layers, "all or comma-separated layer list");
  compare->add_option("--exact-assignment-cap", cmp.exact_cap,
                      "largest matrix solved exactly after a heuristic miss");
  compare->add_option("--mode", cmp.mode, "MLP scoring: up_only or sum3")
      ->check(CLI::IsMember({"up_only", "sum3"}));
  compare->add_flag("--png", cmp.png, "write PNG heatmaps instead of PPM");
  compare->add_flag("--byte-remap-a", cmp.byte_remap_a,
                    "decode byte-level BPE surface forms in vocab A");
  compare->add_flag("--byte-remap-b", cmp.byte_remap_b,
                    "decode byte-level BPE surface forms in vocab B");
  compare->add_flag("--screen", cmp.screen,
                    "print the orthogonal-invariant norm screen first");

  McArgs mc;
  CLI::App* mcv = app.add_subcommand(
      "mc-validate", "Monte Carlo validation of the trace tail bound and CLT");
  mcv->add_option("--m", mc.m, "half matrix order (n = 2m)")->required()
      ->check(CLI::Range(std::int64_t{1}, std::int64_t{4096}));
  mcv->add_option("--r", mc.r, "scaled trace threshold, 0 < r <= 1/2")->required()
      ->check(CLI::Range(1e-9, 0.5));
  mcv->add_option("--samples", mc.samples, "sample count (>= 1000)")->required()
      ->check(CLI::Range(std::int64_t{1000}, std::int64_t{100000000}));
  mcv->add_option("--seed", mc.seed, "RNG seed")->required();
  mcv->add_flag("--density-check", mc.density_check,
                "also compare pooled eigenphases against the arcsine density "
                "(capped at 4000 samples)");
  mcv->add_option("--bins", mc.bins, "histogram bins for the density check")
      ->check(CLI::Range(std::int64_t{2}, std::int64_t{1000}));

  ForgeArgs fg;
  CLI::App* forge = app.add_subcommand(
      "forge", "Generate a ground-truth obfuscated fixture pair");
  forge->add_option("--arch", fg.arch, "architecture JSON")->required();
  forge->add_option("--level", fg.level, "L1 | L2 | L3 | L4 | L5 | pruning")
      ->check(CLI::IsMember({"L1", "L2", "L3", "L4", "L5", "pruning"}));
  forge->add_option("--seed", fg.seed, "RNG seed")->required();
  forge->add_option("--out", fg.out, "output directory")->required();
  forge->add_option("--prune-emb-dim", fg.prune_dim,
                    "kept embedding channels for the pruning level");
  forge->add_option("--dtype", fg.dtype, "storage dtype for fixtures")
      ->check(CLI::IsMember({"f64", "f32"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*compare) return run_compare(cmp);
    if (*mcv) return run_mc_validate(mc);
    if (*forge) return run_forge(fg);
  } catch (const mdir::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitUsage;
}
