#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mdir/dense_matrix.hpp"
#include "mdir/model_io.hpp"

namespace mdir {

enum class OuterKind { identity, permutation, signed_permutation, general_orthogonal };
enum class InnerVKind { identity, orthogonal, general_invertible };
enum class ForgeLevel { L1_identity, L2_permute, L3_orthogonal, L4_noise,
                        L5_comprehensive, pruning };

std::string forge_level_name(ForgeLevel level);
ForgeLevel forge_level_from_name(const std::string& name);

// Ground-truth transformation parameters. Conventions, chosen to line up
// with what the detector reports:
//   outer_perm[i]  = the A channel feeding B's embedding channel i
//   mlp_perms[l][i] = the B channel receiving A's intermediate channel i
struct ObfuscationPlan {
  OuterKind outer_kind = OuterKind::identity;
  DenseMatrix outer_u;                       // orthogonal, emb_dim x emb_dim
  std::vector<std::int64_t> outer_perm;      // set for (signed_)permutation kinds
  std::vector<int> outer_signs;              // +-1, same length

  std::vector<std::int64_t> head_perm;       // over kv heads (P1)
  std::vector<std::int64_t> query_perm;      // over queries per head (P2)
  std::vector<int> sign_s;                   // +-1 per head-dim channel (S)
  double scalar_mu = 1.0;                    // W_Q scale; W_K gets 1/mu
  double scalar_lambda = 1.0;                // O-side scale, U_O = lambda * U
  InnerVKind inner_v_kind = InnerVKind::identity;
  DenseMatrix h_v;                           // head_dim x head_dim when not identity

  std::vector<std::vector<std::int64_t>> mlp_perms;  // per layer
  double noise_rms = 0.0;                    // relative, per matrix
  std::optional<std::vector<std::int64_t>> prune_map;  // strictly increasing
  std::uint64_t seed = 0;

  bool inner_is_identity() const;
  void validate(const ArchSpec& arch) const;
};

// i.i.d. normal entries, std 0.02; deterministic per (arch, seed).
ModelBundle make_toy_model(const ArchSpec& arch, std::uint64_t seed);

// Applies outer transform, inner attention transforms, MLP permutations,
// pruning, then noise, in that order. The returned bundle carries the
// (possibly reduced) architecture.
ModelBundle apply_plan(const ModelBundle& model, const ObfuscationPlan& plan);

// Deterministic plan per (arch, level, seed). The pruning level keeps
// emb_dim/2 channels (or `prune_target` when given) at 0.5% noise.
ObfuscationPlan sample_plan(const ArchSpec& arch, ForgeLevel level, std::uint64_t seed,
                            std::optional<std::int64_t> prune_target = std::nullopt);

// Inverse of a no-noise, no-prune plan: applying both returns the original.
ObfuscationPlan invert_plan(const ObfuscationPlan& plan, const ArchSpec& arch);

std::string plan_to_json_text(const ObfuscationPlan& plan);
ObfuscationPlan plan_from_json_text(const std::string& text);

}  // namespace mdir
