#include "mdir/model_io.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mdir/errors.hpp"

namespace mdir {

namespace {

using nlohmann::json;

std::string replace_layer(const std::string& pattern, std::int64_t layer) {
  const std::string tag = "{layer}";
  std::string out = pattern;
  const auto pos = out.find(tag);
  if (pos != std::string::npos) out.replace(pos, tag.size(), std::to_string(layer));
  return out;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw MalformedHeader(path + ": invalid JSON: " + e.what());
  }
}

}  // namespace

const std::vector<Role>& layer_roles() {
  static const std::vector<Role> roles = {Role::q,  Role::k,    Role::v,  Role::o,
                                          Role::gate, Role::up, Role::down};
  return roles;
}

std::string role_name(Role r) {
  switch (r) {
    case Role::embedding: return "embedding";
    case Role::q: return "q";
    case Role::k: return "k";
    case Role::v: return "v";
    case Role::o: return "o";
    case Role::gate: return "gate";
    case Role::up: return "up";
    case Role::down: return "down";
  }
  return "?";
}

namespace {
Role role_from_name(const std::string& s) {
  for (Role r : {Role::embedding, Role::q, Role::k, Role::v, Role::o, Role::gate,
                 Role::up, Role::down})
    if (role_name(r) == s) return r;
  throw MalformedHeader("unknown role name: " + s);
}
}  // namespace

std::pair<std::int64_t, std::int64_t> ArchSpec::role_shape(Role r) const {
  const std::int64_t qdim = num_heads * head_dim;
  const std::int64_t kvdim = kv_heads * head_dim;
  switch (r) {
    case Role::embedding: return {vocab_size, emb_dim};
    case Role::q: return {emb_dim, qdim};
    case Role::k:
    case Role::v: return {emb_dim, kvdim};
    case Role::o: return {qdim, emb_dim};
    case Role::gate:
    case Role::up: return {emb_dim, intermediate_dim};
    case Role::down: return {intermediate_dim, emb_dim};
  }
  return {0, 0};
}

void ArchSpec::validate(bool require_alignment_rank) const {
  if (num_layers < 1 || emb_dim < 1 || num_heads < 1 || kv_heads < 1 ||
      head_dim < 1 || intermediate_dim < 1 || vocab_size < 1)
    throw ShapeMismatch("arch: all dimensions must be positive");
  if (num_heads % kv_heads != 0)
    throw ShapeMismatch("arch: kv_heads must divide num_heads");
  if (require_alignment_rank && vocab_size < emb_dim)
    throw ShapeMismatch("arch: vocab_size must be >= emb_dim");
}

std::string ArchSpec::key_for(Role r, std::int64_t layer) const {
  const auto it = name_template.find(r);
  if (it == name_template.end())
    throw MissingTensor(role_name(r), static_cast<int>(layer),
                        "<no pattern in name template>");
  return replace_layer(it->second.key, layer);
}

std::map<Role, RolePattern> arch_preset(const std::string& name) {
  std::map<Role, RolePattern> t;
  if (name == "llama") {
    // HF-style decoder naming; projections stored [out, in] hence transposed.
    t[Role::embedding] = {"model.embed_tokens.weight", false};
    t[Role::q] = {"model.layers.{layer}.self_attn.q_proj.weight", true};
    t[Role::k] = {"model.layers.{layer}.self_attn.k_proj.weight", true};
    t[Role::v] = {"model.layers.{layer}.self_attn.v_proj.weight", true};
    t[Role::o] = {"model.layers.{layer}.self_attn.o_proj.weight", true};
    t[Role::gate] = {"model.layers.{layer}.mlp.gate_proj.weight", true};
    t[Role::up] = {"model.layers.{layer}.mlp.up_proj.weight", true};
    t[Role::down] = {"model.layers.{layer}.mlp.down_proj.weight", true};
    return t;
  }
  if (name == "canonical") {
    // Fixture layout: canonical orientation, no transposes.
    t[Role::embedding] = {"embedding", false};
    t[Role::q] = {"layers.{layer}.q", false};
    t[Role::k] = {"layers.{layer}.k", false};
    t[Role::v] = {"layers.{layer}.v", false};
    t[Role::o] = {"layers.{layer}.o", false};
    t[Role::gate] = {"layers.{layer}.gate", false};
    t[Role::up] = {"layers.{layer}.up", false};
    t[Role::down] = {"layers.{layer}.down", false};
    return t;
  }
  throw MalformedHeader("unknown arch preset: " + name);
}

ArchSpec arch_from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw MalformedHeader(std::string("arch JSON invalid: ") + e.what());
  }
  ArchSpec a;
  a.num_layers = doc.at("num_layers").get<std::int64_t>();
  a.emb_dim = doc.at("emb_dim").get<std::int64_t>();
  a.num_heads = doc.at("num_heads").get<std::int64_t>();
  a.kv_heads = doc.at("kv_heads").get<std::int64_t>();
  a.head_dim = doc.at("head_dim").get<std::int64_t>();
  a.intermediate_dim = doc.at("intermediate_dim").get<std::int64_t>();
  a.vocab_size = doc.at("vocab_size").get<std::int64_t>();
  if (doc.contains("preset")) a.name_template = arch_preset(doc["preset"].get<std::string>());
  if (doc.contains("name_template")) {
    for (const auto& [k, v] : doc["name_template"].items()) {
      RolePattern p;
      if (v.is_string()) {
        p.key = v.get<std::string>();
      } else {
        p.key = v.at("key").get<std::string>();
        p.transpose = v.value("transpose", false);
      }
      a.name_template[role_from_name(k)] = p;
    }
  }
  if (a.name_template.empty()) a.name_template = arch_preset("canonical");
  a.validate();
  return a;
}

ArchSpec arch_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open arch file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return arch_from_json_text(text);
}

std::string arch_to_json_text(const ArchSpec& arch) {
  json doc;
  doc["num_layers"] = arch.num_layers;
  doc["emb_dim"] = arch.emb_dim;
  doc["num_heads"] = arch.num_heads;
  doc["kv_heads"] = arch.kv_heads;
  doc["head_dim"] = arch.head_dim;
  doc["intermediate_dim"] = arch.intermediate_dim;
  doc["vocab_size"] = arch.vocab_size;
  json tmpl = json::object();
  for (const auto& [r, p] : arch.name_template)
    tmpl[role_name(r)] = {{"key", p.key}, {"transpose", p.transpose}};
  doc["name_template"] = tmpl;
  return doc.dump(2) + "\n";
}

const DenseMatrix& ModelBundle::matrix(Role r, std::int64_t layer) const {
  switch (r) {
    case Role::embedding: return embedding;
    case Role::q: return layers.at(layer).q;
    case Role::k: return layers.at(layer).k;
    case Role::v: return layers.at(layer).v;
    case Role::o: return layers.at(layer).o;
    case Role::gate: return layers.at(layer).gate;
    case Role::up: return layers.at(layer).up;
    case Role::down: return layers.at(layer).down;
  }
  throw ShapeMismatch("bad role");
}

DenseMatrix& ModelBundle::matrix(Role r, std::int64_t layer) {
  return const_cast<DenseMatrix&>(
      static_cast<const ModelBundle*>(this)->matrix(r, layer));
}

void ModelBundle::validate() const {
  arch.validate(false);
  if (static_cast<std::int64_t>(layers.size()) != arch.num_layers)
    throw ShapeMismatch("bundle: layer count mismatch");
  auto check = [&](const DenseMatrix& m, Role r, std::int64_t layer) {
    const auto [rr, cc] = arch.role_shape(r);
    if (m.rows() != rr || m.cols() != cc)
      throw ShapeMismatch("bundle: " + role_name(r) + " layer " +
                          std::to_string(layer) + " has shape " +
                          std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                          ", expected " + std::to_string(rr) + "x" +
                          std::to_string(cc));
    if (!m.all_finite())
      throw NonFiniteValue("bundle: non-finite values in " + role_name(r) +
                           " layer " + std::to_string(layer));
  };
  check(embedding, Role::embedding, -1);
  for (std::int64_t l = 0; l < arch.num_layers; ++l)
    for (Role r : layer_roles()) check(matrix(r, l), r, l);
}

namespace {

// Shard index: JSON with weight_map {tensor key -> relative container path}.
struct ResolvedTensor {
  std::string container;
  TensorRef ref;
};

std::map<std::string, ResolvedTensor> resolve_tensors(const std::string& path) {
  std::map<std::string, ResolvedTensor> out;
  const bool is_index = path.size() > 11 && path.ends_with(".index.json");
  if (!is_index) {
    for (TensorRef& r : parse_container(path)) {
      const std::string name = r.name;
      out[name] = {path, std::move(r)};
    }
    return out;
  }
  const json doc = read_json_file(path);
  if (!doc.contains("weight_map"))
    throw MalformedHeader(path + ": shard index has no weight_map");
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  std::map<std::string, std::map<std::string, ResolvedTensor>> shards;
  for (const auto& [key, file] : doc["weight_map"].items()) {
    const std::string shard = (base / file.get<std::string>()).string();
    if (!shards.count(shard)) {
      auto& bucket = shards[shard];
      for (TensorRef& r : parse_container(shard)) {
        const std::string name = r.name;
        bucket[name] = {shard, std::move(r)};
      }
    }
    const auto it = shards[shard].find(key);
    if (it == shards[shard].end())
      throw MalformedHeader(path + ": weight_map names '" + key +
                            "' absent from shard " + shard);
    out[key] = it->second;
  }
  return out;
}

DenseMatrix load_one(const std::map<std::string, ResolvedTensor>& tensors,
                     const ArchSpec& arch, Role role, std::int64_t layer) {
  const std::string key = arch.key_for(role, layer);
  const auto it = tensors.find(key);
  if (it == tensors.end())
    throw MissingTensor(role_name(role), static_cast<int>(layer), key);
  DenseMatrix m = read_tensor(it->second.container, it->second.ref);
  if (arch.name_template.at(role).transpose) m = m.transposed();
  const auto [rr, cc] = arch.role_shape(role);
  if (m.rows() != rr || m.cols() != cc)
    throw ShapeMismatch("tensor " + key + " has canonical shape " +
                        std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                        ", arch expects " + std::to_string(rr) + "x" +
                        std::to_string(cc));
  if (!m.all_finite())
    throw NonFiniteValue("tensor " + key + " contains NaN/Inf after promotion");
  return m;
}

}  // namespace

ModelBundle load_model(const std::string& path, const ArchSpec& arch) {
  arch.validate();
  const auto tensors = resolve_tensors(path);
  ModelBundle bundle;
  bundle.arch = arch;
  bundle.source_path = path;
  bundle.embedding = load_one(tensors, arch, Role::embedding, 0);
  bundle.layers.resize(arch.num_layers);
  for (std::int64_t l = 0; l < arch.num_layers; ++l) {
    LayerWeights& lw = bundle.layers[l];
    lw.q = load_one(tensors, arch, Role::q, l);
    lw.k = load_one(tensors, arch, Role::k, l);
    lw.v = load_one(tensors, arch, Role::v, l);
    lw.o = load_one(tensors, arch, Role::o, l);
    lw.gate = load_one(tensors, arch, Role::gate, l);
    lw.up = load_one(tensors, arch, Role::up, l);
    lw.down = load_one(tensors, arch, Role::down, l);
  }
  return bundle;
}

void save_model(const std::string& path, const ModelBundle& model, Dtype dtype) {
  model.validate();
  std::vector<TensorToWrite> tensors;
  auto push = [&](Role r, std::int64_t layer) {
    const DenseMatrix& m = model.matrix(r, layer);
    TensorToWrite t;
    t.name = model.arch.key_for(r, layer);
    if (model.arch.name_template.at(r).transpose) {
      const DenseMatrix mt = m.transposed();
      t.shape = {mt.rows(), mt.cols()};
      t.bytes = encode_matrix(mt, dtype);
    } else {
      t.shape = {m.rows(), m.cols()};
      t.bytes = encode_matrix(m, dtype);
    }
    t.dtype = dtype;
    tensors.push_back(std::move(t));
  };
  push(Role::embedding, 0);
  for (std::int64_t l = 0; l < model.arch.num_layers; ++l)
    for (Role r : layer_roles()) push(r, l);
  write_container(path, tensors, {{"format", "mdir-fixture"}});
}

}  // namespace mdir
