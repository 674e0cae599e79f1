#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mdir/dense_matrix.hpp"
#include "mdir/safetensors.hpp"

namespace mdir {

enum class Role { embedding, q, k, v, o, gate, up, down };
const std::vector<Role>& layer_roles();  // q,k,v,o,gate,up,down
std::string role_name(Role r);

// Container key pattern for one role; "{layer}" is replaced by the index.
// `transpose` marks containers that store the opposite of the canonical
// input-dim x output-dim orientation (PyTorch [out, in] layouts).
struct RolePattern {
  std::string key;
  bool transpose = false;
};

struct ArchSpec {
  std::int64_t num_layers = 0;
  std::int64_t emb_dim = 0;
  std::int64_t num_heads = 0;
  std::int64_t kv_heads = 0;
  std::int64_t head_dim = 0;
  std::int64_t intermediate_dim = 0;
  std::int64_t vocab_size = 0;
  std::map<Role, RolePattern> name_template;

  std::int64_t queries_per_head() const { return num_heads / kv_heads; }
  // Canonical (rows, cols) of one role's matrix.
  std::pair<std::int64_t, std::int64_t> role_shape(Role r) const;
  // The vocab_size >= emb_dim requirement exists for full-rank alignment;
  // toy construction may relax it (alignment then fails downstream).
  void validate(bool require_alignment_rank = true) const;
  std::string key_for(Role r, std::int64_t layer) const;
};

// JSON document form; a "preset" field selects a built-in name template.
ArchSpec arch_from_json_file(const std::string& path);
ArchSpec arch_from_json_text(const std::string& text);
std::string arch_to_json_text(const ArchSpec& arch);
std::map<Role, RolePattern> arch_preset(const std::string& name);  // llama | canonical

struct LayerWeights {
  DenseMatrix q, k, v, o;        // q: emb x nh*hd; k,v: emb x kv*hd; o: nh*hd x emb
  DenseMatrix gate, up, down;    // gate,up: emb x inter; down: inter x emb
};

struct ModelBundle {
  ArchSpec arch;
  DenseMatrix embedding;         // vocab x emb
  std::vector<LayerWeights> layers;
  std::string source_path;

  const DenseMatrix& matrix(Role r, std::int64_t layer) const;
  DenseMatrix& matrix(Role r, std::int64_t layer);
  void validate() const;         // shapes + finiteness
};

// Loads a container (or a *.index.json shard index) into the canonical
// layout: every tensor promoted to f64, adapter transposes applied.
ModelBundle load_model(const std::string& path, const ArchSpec& arch);

// Writes a bundle as a safetensors fixture in canonical orientation.
void save_model(const std::string& path, const ModelBundle& model,
                Dtype dtype = Dtype::f64);

}  // namespace mdir
