#include "mdir/detect.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

#include "mdir/errors.hpp"

namespace mdir {

namespace {

DenseMatrix abs_matrix(const DenseMatrix& m) {
  DenseMatrix out(m.rows(), m.cols());
  auto src = m.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::abs(src[i]);
  return out;
}

double partial_diag_trace(const DenseMatrix& m) {
  const std::int64_t n = std::min(m.rows(), m.cols());
  double t = 0.0;
  for (std::int64_t i = 0; i < n; ++i) t += m(i, i);
  return t;
}

// Heuristic-then-exact assignment on the given score matrix. Falls back to
// scoring the identity permutation when the exact solver is over the size cap
// (still a valid permutation, so the p-value bound stays sound).
AssignmentResult assign_with_escalation(const DenseMatrix& score,
                                        std::int64_t exact_cap) {
  HeuristicOutcome h = solve_heuristic(score);
  if (h.assignment) return *std::move(h.assignment);
  if (score.rows() <= exact_cap) return solve_exact(score);
  AssignmentResult identity;
  identity.perm.resize(score.rows());
  identity.total = 0.0;
  for (std::int64_t i = 0; i < score.rows(); ++i) {
    identity.perm[i] = i;
    identity.total += score(i, i);
  }
  identity.method = AssignMethod::heuristic;
  return identity;
}

Reliability reliability_of(const PolarResult& polar, std::int64_t rows,
                           std::int64_t cols) {
  return polar.effective_rank < std::min(rows, cols) ? Reliability::rank_deficient
                                                     : Reliability::full_rank;
}

// Thin-side argmax of |entries|: for each index on the short side, the best
// matching index on the long side. Returns the summed matched magnitudes.
double thin_argmax_map(const DenseMatrix& m, std::vector<std::int64_t>& map_out) {
  const bool rows_thin = m.rows() <= m.cols();
  const std::int64_t thin = rows_thin ? m.rows() : m.cols();
  const std::int64_t fat = rows_thin ? m.cols() : m.rows();
  map_out.assign(thin, 0);
  double total = 0.0;
  for (std::int64_t i = 0; i < thin; ++i) {
    std::int64_t best_j = 0;
    double best = -1.0;
    for (std::int64_t j = 0; j < fat; ++j) {
      const double v = std::abs(rows_thin ? m(i, j) : m(j, i));
      if (v > best) {
        best = v;
        best_j = j;
      }
    }
    map_out[i] = best_j;
    total += best;
  }
  return total;
}

double matched_abs_trace(const DenseMatrix& m, const std::vector<std::int64_t>& map) {
  const bool rows_thin = m.rows() <= m.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    const auto ii = static_cast<std::int64_t>(i);
    total += std::abs(rows_thin ? m(ii, map[i]) : m(map[i], ii));
  }
  return total;
}

}  // namespace

std::string stage_name(StageKind s) {
  switch (s) {
    case StageKind::embedding: return "embedding";
    case StageKind::attn_q: return "attn_q";
    case StageKind::attn_k: return "attn_k";
    case StageKind::attn_v: return "attn_v";
    case StageKind::attn_o: return "attn_o";
    case StageKind::mlp: return "mlp";
  }
  return "?";
}

AlignmentFinding align_embeddings(const ModelBundle& a, const ModelBundle& b,
                                  const TokenIntersection& common,
                                  const DetectConfig& cfg) {
  const std::int64_t emb_a = a.arch.emb_dim;
  const std::int64_t emb_b = b.arch.emb_dim;
  if (common.count < std::max(emb_a, emb_b))
    throw InsufficientOverlap("embedding alignment needs at least max(emb_dim) = " +
                              std::to_string(std::max(emb_a, emb_b)) +
                              " common tokens, got " + std::to_string(common.count));

  std::vector<std::int64_t> ids_a(common.pairs.size()), ids_b(common.pairs.size());
  for (std::size_t i = 0; i < common.pairs.size(); ++i) {
    ids_a[i] = common.pairs[i].first;
    ids_b[i] = common.pairs[i].second;
  }
  const DenseMatrix rows_a = select_rows(a.embedding, ids_a);
  const DenseMatrix rows_b = select_rows(b.embedding, ids_b);
  const DenseMatrix m = cross_covariance(rows_a, rows_b);  // emb_b x emb_a
  const PolarResult polar = ortho(m);

  AlignmentFinding f;
  f.stage = StageKind::embedding;
  f.layer = -1;
  f.u_tilde = polar.w;
  f.raw_trace = partial_diag_trace(polar.w);
  f.reliability = reliability_of(polar, emb_b, emb_a);

  if (emb_a == emb_b) {
    // Score on the truncated polar so degenerate directions cannot steer the
    // assignment; the trace statistic is still read off the full polar part.
    AssignmentResult res = assign_with_escalation(abs_matrix(polar.w_truncated),
                                                  cfg.exact_assignment_cap);
    f.perm_signs.resize(res.perm.size());
    double trace = 0.0;
    for (std::size_t i = 0; i < res.perm.size(); ++i) {
      const double v = f.u_tilde(static_cast<std::int64_t>(i), res.perm[i]);
      f.perm_signs[i] = v < 0.0 ? -1 : 1;
      trace += std::abs(v);
    }
    f.trace_c = trace;
    f.perm = std::move(res);
    f.pv = pvalue(f.trace_c, emb_a, cfg.threshold);
  } else {
    // Rectangular (pruning / upcycling): the p-value is a conservative bound
    // computed with the larger dimension and flagged as such.
    f.reliability = Reliability::rank_deficient;
    thin_argmax_map(polar.w_truncated, f.row_map);
    f.trace_c = matched_abs_trace(f.u_tilde, f.row_map);
    f.pv = pvalue(f.trace_c, std::max(emb_a, emb_b), cfg.threshold);
  }
  return f;
}

AlignmentFinding solve_attention_inner(const LayerWeights& a, const LayerWeights& b,
                                       const DenseMatrix& u, StageKind role,
                                       std::int64_t layer) {
  const DenseMatrix* xa = nullptr;
  const DenseMatrix* xb = nullptr;
  switch (role) {
    case StageKind::attn_q: xa = &a.q; xb = &b.q; break;
    case StageKind::attn_k: xa = &a.k; xb = &b.k; break;
    case StageKind::attn_v: xa = &a.v; xb = &b.v; break;
    case StageKind::attn_o: xa = &a.o; xb = &b.o; break;
    default:
      throw ShapeMismatch("solve_attention_inner: not an attention role");
  }
  const bool is_o = role == StageKind::attn_o;
  // u maps A's hidden channels into B's: u is emb_b x emb_a.
  if (!is_o && (xa->rows() != u.cols() || xb->rows() != u.rows()))
    throw ShapeMismatch("solve_attention_inner: outer transform shape mismatch");
  if (is_o && (xa->cols() != u.cols() || xb->cols() != u.rows()))
    throw ShapeMismatch("solve_attention_inner: outer transform shape mismatch");
  if (xa->cols() != xb->cols() || (is_o && xa->rows() != xb->rows()))
    throw ShapeMismatch("solve_attention_inner: projection widths differ");

  EigenRowMat rel;
  if (is_o)
    rel = xa->map() * u.map().transpose() * xb->map().transpose();
  else
    rel = xa->map().transpose() * u.map().transpose() * xb->map();
  const PolarResult polar = ortho(DenseMatrix::from_eigen(rel));

  AlignmentFinding f;
  f.stage = role;
  f.layer = layer;
  f.u_tilde = polar.w;
  f.raw_trace = partial_diag_trace(polar.w);
  f.reliability = reliability_of(polar, rel.rows(), rel.cols());

  const double norm_a = xa->map().norm();
  const double norm_b = xb->map().norm();
  const double scale = norm_a > 0.0 ? norm_b / norm_a : 0.0;
  f.scale = scale;

  if (norm_b > 0.0) {
    EigenRowMat recon;
    if (is_o)
      recon = scale * polar.w.map().transpose() * xa->map() * u.map().transpose();
    else
      recon = u.map() * xa->map() * (scale * polar.w.map());
    f.residual = (recon - xb->map()).norm() / norm_b;
  }
  return f;
}

AlignmentFinding solve_mlp(const LayerWeights& a, const LayerWeights& b,
                           const DenseMatrix& u, std::int64_t layer,
                           std::int64_t num_layers, MlpMode mode,
                           const DetectConfig& cfg) {
  const std::int64_t inter_a = a.up.cols();
  const std::int64_t inter_b = b.up.cols();
  if (a.up.rows() != u.cols() || b.up.rows() != u.rows())
    throw ShapeMismatch("solve_mlp: outer transform shape mismatch");

  const DenseMatrix m_up = DenseMatrix::from_eigen(
      a.up.map().transpose() * u.map().transpose() * b.up.map());
  const PolarResult polar_up = ortho(m_up);

  AlignmentFinding f;
  f.stage = StageKind::mlp;
  f.layer = layer;
  f.u_tilde = polar_up.w;
  f.raw_trace = partial_diag_trace(polar_up.w);
  f.reliability = reliability_of(polar_up, inter_a, inter_b);

  if (inter_a == inter_b) {
    DenseMatrix score = polar_up.w_truncated;
    if (mode == MlpMode::sum3) {
      const DenseMatrix m_gate = DenseMatrix::from_eigen(
          a.gate.map().transpose() * u.map().transpose() * b.gate.map());
      const DenseMatrix m_down = DenseMatrix::from_eigen(
          a.down.map() * u.map().transpose() * b.down.map().transpose());
      score.map() += ortho(m_gate).w_truncated.map() + ortho(m_down).w_truncated.map();
    }
    AssignmentResult res = assign_with_escalation(score, cfg.exact_assignment_cap);
    // The trace statistic always comes from the Up relation matrix.
    double trace = 0.0;
    for (std::size_t i = 0; i < res.perm.size(); ++i)
      trace += f.u_tilde(static_cast<std::int64_t>(i), res.perm[i]);
    f.trace_c = trace;
    f.perm = std::move(res);
    f.pv = with_log10_multiplier(pvalue(f.trace_c, inter_a, cfg.threshold),
                                 std::log10(static_cast<double>(num_layers)));
  } else {
    f.reliability = Reliability::rank_deficient;
    thin_argmax_map(polar_up.w_truncated, f.row_map);
    f.trace_c = matched_abs_trace(f.u_tilde, f.row_map);
    f.pv = with_log10_multiplier(
        pvalue(f.trace_c, std::max(inter_a, inter_b), cfg.threshold),
        std::log10(static_cast<double>(num_layers)));
  }
  return f;
}

DetectionReport run_mdir(const ModelBundle& a, const ModelBundle& b,
                         const VocabMap& vocab_a, const VocabMap& vocab_b,
                         const DetectConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  DetectionReport report;
  report.threshold = cfg.threshold;
  report.model_a = a.source_path;
  report.model_b = b.source_path;

  const TokenIntersection common = intersect_vocabs(vocab_a, vocab_b);
  const std::int64_t min_overlap = std::max(a.arch.emb_dim, b.arch.emb_dim);
  if (common.count < 4 * min_overlap)
    report.warnings.push_back(
        "common-token count " + std::to_string(common.count) +
        " is below 4x emb_dim; the cross covariance may be poorly conditioned");

  AlignmentFinding emb = align_embeddings(a, b, common, cfg);

  // Downstream outer transform: the recovered signed permutation when the
  // embedding stage is significant, otherwise the orthogonal part itself.
  DenseMatrix u = emb.u_tilde;
  if (emb.significant() && emb.perm) {
    DenseMatrix p(emb.u_tilde.rows(), emb.u_tilde.cols());
    for (std::size_t i = 0; i < emb.perm->perm.size(); ++i)
      p(static_cast<std::int64_t>(i), emb.perm->perm[i]) =
          static_cast<double>(emb.perm_signs[i]);
    u = std::move(p);
  }
  report.related = emb.significant();
  if (!cfg.keep_matrices) emb.u_tilde = DenseMatrix();
  report.findings.push_back(std::move(emb));

  const std::int64_t shared_layers = std::min(a.arch.num_layers, b.arch.num_layers);
  std::vector<std::int64_t> layer_ids;
  if (cfg.layers.empty()) {
    for (std::int64_t i = 0; i < shared_layers; ++i) layer_ids.push_back(i);
  } else {
    for (std::int64_t l : cfg.layers) {
      if (l < 0 || l >= shared_layers)
        throw DimMismatch("layer " + std::to_string(l) +
                          " outside the shared range 0.." +
                          std::to_string(shared_layers - 1));
      layer_ids.push_back(l);
    }
  }

  // The layer multiplier on MLP p-values is the model's layer count, not the
  // (possibly subset) evaluation count.
  const std::int64_t num_layers = std::max<std::int64_t>(shared_layers, 1);
  std::vector<std::vector<AlignmentFinding>> per_layer(layer_ids.size());

  auto run_layer = [&](std::size_t idx) {
    const std::int64_t l = layer_ids[idx];
    auto& out = per_layer[idx];
    const LayerWeights& la = a.layers[l];
    const LayerWeights& lb = b.layers[l];
    auto record_failure = [&](StageKind stage, const char* what) {
      AlignmentFinding failed;
      failed.stage = stage;
      failed.layer = l;
      failed.error = what;
      out.push_back(std::move(failed));
    };
    for (StageKind role : {StageKind::attn_q, StageKind::attn_k, StageKind::attn_v,
                           StageKind::attn_o}) {
      try {
        out.push_back(solve_attention_inner(la, lb, u, role, l));
      } catch (const std::exception& e) {
        record_failure(role, e.what());
      }
    }
    try {
      out.push_back(solve_mlp(la, lb, u, l, num_layers, cfg.mlp_mode, cfg));
    } catch (const std::exception& e) {
      record_failure(StageKind::mlp, e.what());
    }
    if (!cfg.keep_matrices)
      for (auto& f : out) f.u_tilde = DenseMatrix();
  };

  const int workers =
      std::min<std::int64_t>(worker_count(), static_cast<std::int64_t>(layer_ids.size()));
  if (workers > 1) {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int t = 0; t < workers; ++t)
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= layer_ids.size()) return;
          run_layer(i);
        }
      });
    for (auto& th : pool) th.join();
  } else {
    for (std::size_t i = 0; i < layer_ids.size(); ++i) run_layer(i);
  }

  for (auto& findings : per_layer)
    for (auto& f : findings) {
      report.related = report.related || f.significant();
      report.findings.push_back(std::move(f));
    }

  report.headline_log10_p = 0.0;
  bool have_p = false;
  for (const auto& f : report.findings)
    if (f.pv) {
      report.headline_log10_p =
          have_p ? std::min(report.headline_log10_p, f.pv->log10_p) : f.pv->log10_p;
      have_p = true;
    }

  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::vector<ScreenEntry> preliminary_screen(const ModelBundle& a,
                                            const ModelBundle& b) {
  std::vector<ScreenEntry> out;
  auto rel = [](double x, double y) {
    const double denom = std::max({std::abs(x), std::abs(y), 1e-300});
    return std::abs(x - y) / denom;
  };
  auto compare = [&](const std::string& name, const DenseMatrix& ma,
                     const DenseMatrix& mb) {
    const std::int64_t k =
        std::min<std::int64_t>(8, std::min({ma.rows(), ma.cols(), mb.rows(), mb.cols()}));
    const SpectralSummary sa = spectral_summary(ma, std::max<std::int64_t>(k, 1), 4.0);
    const SpectralSummary sb = spectral_summary(mb, std::max<std::int64_t>(k, 1), 4.0);
    ScreenEntry e;
    e.name = name;
    e.delta_frobenius = rel(sa.frobenius, sb.frobenius);
    e.delta_spectral = rel(sa.spectral, sb.spectral);
    e.delta_kyfan = rel(sa.kyfan_k, sb.kyfan_k);
    e.delta_schatten = rel(sa.schatten_p, sb.schatten_p);
    e.max_delta = std::max({e.delta_frobenius, e.delta_spectral, e.delta_kyfan,
                            e.delta_schatten});
    out.push_back(std::move(e));
  };
  compare("embedding", a.embedding, b.embedding);
  const std::int64_t layers = std::min(a.arch.num_layers, b.arch.num_layers);
  for (std::int64_t l = 0; l < layers; ++l)
    for (Role r : layer_roles())
      compare(role_name(r) + "." + std::to_string(l), a.matrix(r, l), b.matrix(r, l));
  std::stable_sort(out.begin(), out.end(),
                   [](const ScreenEntry& x, const ScreenEntry& y) {
                     return x.max_delta > y.max_delta;
                   });
  return out;
}

}  // namespace mdir
