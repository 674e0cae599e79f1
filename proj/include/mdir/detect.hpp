#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mdir/assign.hpp"
#include "mdir/dense_matrix.hpp"
#include "mdir/ldt.hpp"
#include "mdir/matlin.hpp"
#include "mdir/model_io.hpp"
#include "mdir/vocab.hpp"

namespace mdir {

enum class StageKind { embedding, attn_q, attn_k, attn_v, attn_o, mlp };
enum class Reliability { full_rank, rank_deficient };
enum class MlpMode { up_only, sum3 };

std::string stage_name(StageKind s);

struct AlignmentFinding {
  StageKind stage = StageKind::embedding;
  std::int64_t layer = -1;  // -1 for the embedding stage
  DenseMatrix u_tilde;      // recovered orthogonal part (or inner transform)
  std::optional<AssignmentResult> perm;
  std::vector<int> perm_signs;          // per-row sign of the matched entry
  std::vector<std::int64_t> row_map;    // rectangular stages: thin-side argmax
  double trace_c = 0.0;                 // assignment trace feeding the p-value
  double raw_trace = 0.0;               // Tr(u_tilde); N(0,1) under the null
  std::optional<PValueResult> pv;       // embedding and MLP stages only
  Reliability reliability = Reliability::full_rank;
  std::optional<double> scale;          // attention stages: |X'|_F / |X|_F
  std::optional<double> residual;       // attention stages: relative fit error
  std::string error;                    // set when the stage failed and was skipped

  bool significant() const { return pv && pv->significant; }
};

struct DetectConfig {
  double threshold = 2e-23;
  std::int64_t exact_assignment_cap = 20480;
  MlpMode mlp_mode = MlpMode::up_only;
  std::vector<std::int64_t> layers;  // empty = all layers
  // Relation matrices are large at production scale (intermediate_dim^2
  // doubles per MLP stage); drop them from findings unless a consumer needs
  // them (heatmaps, support inspection).
  bool keep_matrices = true;
};

struct DetectionReport {
  bool related = false;
  std::vector<AlignmentFinding> findings;
  double threshold = 2e-23;
  std::string model_a, model_b;
  double wall_time_seconds = 0.0;
  double headline_log10_p = 0.0;  // min log10_p over stages carrying a p-value
  std::vector<std::string> warnings;
};

// Embedding-channel alignment from the common-token cross covariance.
// Square case: permutation recovery scores entry magnitudes (sign-flipped
// channels are equivalent transforms) and recovers per-row signs; the trace
// statistic is the signed-permutation trace. Mismatched embedding widths take
// the rectangular path: thin-side argmax map, conservative p-value with
// d = max dimension, finding flagged rank_deficient.
AlignmentFinding align_embeddings(const ModelBundle& a, const ModelBundle& b,
                                  const TokenIntersection& common,
                                  const DetectConfig& cfg = {});

// Inner transform of one attention projection given the outer transform U
// (shape emb_B x emb_A). No p-value is claimed for attention stages.
AlignmentFinding solve_attention_inner(const LayerWeights& a, const LayerWeights& b,
                                       const DenseMatrix& u, StageKind role,
                                       std::int64_t layer);

// Intermediate-neuron permutation of one MLP layer; p-value carries the
// num_layers multiplier.
AlignmentFinding solve_mlp(const LayerWeights& a, const LayerWeights& b,
                           const DenseMatrix& u, std::int64_t layer,
                           std::int64_t num_layers, MlpMode mode,
                           const DetectConfig& cfg = {});

// Full pipeline: embedding stage, then per-layer attention inner transforms
// and MLP permutations. Never early-exits; stage failures are recorded on the
// finding and skipped.
DetectionReport run_mdir(const ModelBundle& a, const ModelBundle& b,
                         const VocabMap& vocab_a, const VocabMap& vocab_b,
                         const DetectConfig& cfg = {});

// Orthogonal-invariant norm deltas per corresponding matrix; advisory only.
struct ScreenEntry {
  std::string name;
  double delta_frobenius = 0.0;
  double delta_spectral = 0.0;
  double delta_kyfan = 0.0;
  double delta_schatten = 0.0;
  double max_delta = 0.0;
};
std::vector<ScreenEntry> preliminary_screen(const ModelBundle& a,
                                            const ModelBundle& b);

}  // namespace mdir
