#include "mdir/forge.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "mdir/errors.hpp"
#include "mdir/ldt.hpp"
#include "mdir/rng.hpp"

namespace mdir {

namespace {

using nlohmann::json;

std::vector<std::int64_t> random_permutation(std::int64_t n, NormalSampler& rng) {
  std::vector<std::int64_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::int64_t i = n - 1; i > 0; --i) {
    const std::int64_t j =
        static_cast<std::int64_t>(rng.engine()() % static_cast<std::uint64_t>(i + 1));
    std::swap(p[i], p[j]);
  }
  return p;
}

std::vector<int> random_signs(std::int64_t n, NormalSampler& rng) {
  std::vector<int> s(n);
  for (auto& v : s) v = (rng.engine()() & 1) ? 1 : -1;
  return s;
}

DenseMatrix signed_perm_matrix(const std::vector<std::int64_t>& perm,
                               const std::vector<int>& signs) {
  const auto n = static_cast<std::int64_t>(perm.size());
  DenseMatrix u(n, n);
  for (std::int64_t i = 0; i < n; ++i) u(i, perm[i]) = static_cast<double>(signs[i]);
  return u;
}

// Permutation matrix P with P[i, perm[i]] = 1.
EigenRowMat perm_matrix(const std::vector<std::int64_t>& perm) {
  const auto n = static_cast<std::int64_t>(perm.size());
  EigenRowMat p = EigenRowMat::Zero(n, n);
  for (std::int64_t i = 0; i < n; ++i) p(i, perm[i]) = 1.0;
  return p;
}

// W[(g,q,d) -> (p1(g), p2(q), d)] with per-d sign; right-multiplying a matrix
// whose columns are indexed (group, query, channel) head-major.
EigenRowMat kron_perm_sign(const std::vector<std::int64_t>& p1,
                           const std::vector<std::int64_t>& p2,
                           const std::vector<int>& s, double scale) {
  const auto ng = static_cast<std::int64_t>(p1.size());
  const auto nq = static_cast<std::int64_t>(p2.size());
  const auto nd = static_cast<std::int64_t>(s.size());
  const std::int64_t n = ng * nq * nd;
  EigenRowMat w = EigenRowMat::Zero(n, n);
  for (std::int64_t g = 0; g < ng; ++g)
    for (std::int64_t q = 0; q < nq; ++q)
      for (std::int64_t d = 0; d < nd; ++d) {
        const std::int64_t src = (g * nq + q) * nd + d;
        const std::int64_t dst = (p1[g] * nq + p2[q]) * nd + d;
        w(src, dst) = scale * static_cast<double>(s[d]);
      }
  return w;
}

// W[(g,q,d) -> (p1(g), p2(q), :)] with an arbitrary head_dim block H.
EigenRowMat kron_perm_block(const std::vector<std::int64_t>& p1,
                            const std::vector<std::int64_t>& p2,
                            const EigenRowMat& h) {
  const auto ng = static_cast<std::int64_t>(p1.size());
  const auto nq = static_cast<std::int64_t>(p2.size());
  const auto nd = h.rows();
  const std::int64_t n = ng * nq * nd;
  EigenRowMat w = EigenRowMat::Zero(n, n);
  for (std::int64_t g = 0; g < ng; ++g)
    for (std::int64_t q = 0; q < nq; ++q) {
      const std::int64_t src = (g * nq + q) * nd;
      const std::int64_t dst = (p1[g] * nq + p2[q]) * nd;
      w.block(src, dst, nd, nd) = h;
    }
  return w;
}

void add_noise(DenseMatrix& m, double rel_rms, NormalSampler& rng) {
  if (rel_rms <= 0.0) return;
  const double rms = m.map().norm() / std::sqrt(static_cast<double>(m.size()));
  const double std = rel_rms * rms;
  for (double& v : m.data()) v += std * rng();
}

std::vector<std::int64_t> identity_perm(std::int64_t n) {
  std::vector<std::int64_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  return p;
}

bool is_identity_perm(const std::vector<std::int64_t>& p) {
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] != static_cast<std::int64_t>(i)) return false;
  return true;
}

}  // namespace

std::string forge_level_name(ForgeLevel level) {
  switch (level) {
    case ForgeLevel::L1_identity: return "L1";
    case ForgeLevel::L2_permute: return "L2";
    case ForgeLevel::L3_orthogonal: return "L3";
    case ForgeLevel::L4_noise: return "L4";
    case ForgeLevel::L5_comprehensive: return "L5";
    case ForgeLevel::pruning: return "pruning";
  }
  return "?";
}

ForgeLevel forge_level_from_name(const std::string& name) {
  for (ForgeLevel l : {ForgeLevel::L1_identity, ForgeLevel::L2_permute,
                       ForgeLevel::L3_orthogonal, ForgeLevel::L4_noise,
                       ForgeLevel::L5_comprehensive, ForgeLevel::pruning})
    if (forge_level_name(l) == name) return l;
  throw MalformedHeader("unknown forge level: " + name);
}

bool ObfuscationPlan::inner_is_identity() const {
  return is_identity_perm(head_perm) && is_identity_perm(query_perm) &&
         std::all_of(sign_s.begin(), sign_s.end(), [](int s) { return s == 1; }) &&
         scalar_mu == 1.0 && inner_v_kind == InnerVKind::identity;
}

void ObfuscationPlan::validate(const ArchSpec& arch) const {
  if (outer_u.rows() != arch.emb_dim || outer_u.cols() != arch.emb_dim)
    throw DimMismatch("plan: outer_u does not match emb_dim");
  EigenRowMat g = outer_u.map().transpose() * outer_u.map();
  g.diagonal().array() -= 1.0;
  if (g.norm() > 1e-12) throw DimMismatch("plan: outer_u is not orthogonal");
  if (scalar_mu == 0.0 || scalar_lambda == 0.0)
    throw DimMismatch("plan: mu and lambda must be nonzero");
  if (static_cast<std::int64_t>(head_perm.size()) != arch.kv_heads ||
      static_cast<std::int64_t>(query_perm.size()) != arch.queries_per_head() ||
      static_cast<std::int64_t>(sign_s.size()) != arch.head_dim)
    throw DimMismatch("plan: inner transform sizes do not match arch");
  for (int s : sign_s)
    if (s != 1 && s != -1) throw DimMismatch("plan: sign entries must be +-1");
  if (static_cast<std::int64_t>(mlp_perms.size()) != arch.num_layers)
    throw DimMismatch("plan: need one mlp permutation per layer");
  for (const auto& p : mlp_perms)
    if (static_cast<std::int64_t>(p.size()) != arch.intermediate_dim)
      throw DimMismatch("plan: mlp permutation size mismatch");
  if (prune_map) {
    if (prune_map->empty() || static_cast<std::int64_t>(prune_map->size()) > arch.emb_dim)
      throw DimMismatch("plan: prune_map size out of range");
    for (std::size_t i = 0; i + 1 < prune_map->size(); ++i)
      if ((*prune_map)[i] >= (*prune_map)[i + 1])
        throw DimMismatch("plan: prune_map must be strictly increasing");
    if (prune_map->back() >= arch.emb_dim)
      throw DimMismatch("plan: prune_map index out of range");
  }
}

ModelBundle make_toy_model(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate(false);
  ModelBundle m;
  m.arch = arch;
  m.source_path = "<toy seed " + std::to_string(seed) + ">";
  std::uint64_t tensor_index = 0;
  auto fill = [&](DenseMatrix& mat, std::int64_t rows, std::int64_t cols) {
    mat = DenseMatrix(rows, cols);
    NormalSampler rng(mix_seed(seed, tensor_index++));
    for (double& v : mat.data()) v = 0.02 * rng();
  };
  fill(m.embedding, arch.vocab_size, arch.emb_dim);
  m.layers.resize(arch.num_layers);
  for (auto& lw : m.layers) {
    for (Role r : layer_roles()) {
      const auto [rows, cols] = arch.role_shape(r);
      DenseMatrix* target = nullptr;
      switch (r) {
        case Role::q: target = &lw.q; break;
        case Role::k: target = &lw.k; break;
        case Role::v: target = &lw.v; break;
        case Role::o: target = &lw.o; break;
        case Role::gate: target = &lw.gate; break;
        case Role::up: target = &lw.up; break;
        case Role::down: target = &lw.down; break;
        default: break;
      }
      fill(*target, rows, cols);
    }
  }
  return m;
}

ModelBundle apply_plan(const ModelBundle& model, const ObfuscationPlan& plan) {
  plan.validate(model.arch);
  const ArchSpec& arch = model.arch;
  const Eigen::Map<const EigenRowMat> u = plan.outer_u.map();

  ModelBundle out;
  out.arch = arch;
  out.source_path = model.source_path + " + plan";
  out.layers.resize(arch.num_layers);

  // Outer transform: hidden-state channels rotate by U.
  out.embedding = DenseMatrix::from_eigen(model.embedding.map() * u.transpose());
  for (std::int64_t l = 0; l < arch.num_layers; ++l) {
    const LayerWeights& a = model.layers[l];
    LayerWeights& b = out.layers[l];
    b.q = DenseMatrix::from_eigen(u * a.q.map());
    b.k = DenseMatrix::from_eigen(u * a.k.map());
    b.v = DenseMatrix::from_eigen(u * a.v.map());
    b.gate = DenseMatrix::from_eigen(u * a.gate.map());
    b.up = DenseMatrix::from_eigen(u * a.up.map());
    b.o = DenseMatrix::from_eigen((1.0 / plan.scalar_lambda) * a.o.map() *
                                  u.transpose());
    b.down = DenseMatrix::from_eigen(a.down.map() * u.transpose());
  }

  // Inner attention transforms (tensor-product structure). Q and O span all
  // query heads (P1 x P2 x blocks); K and V span only the kv heads (P1 x
  // blocks), so they take a singleton in the query slot.
  if (!plan.inner_is_identity()) {
    const std::vector<std::int64_t> kv_only = {0};
    EigenRowMat h = plan.h_v.rows() > 0
                        ? EigenRowMat(plan.h_v.map())
                        : EigenRowMat(EigenRowMat::Identity(arch.head_dim, arch.head_dim));
    const EigenRowMat wq =
        kron_perm_sign(plan.head_perm, plan.query_perm, plan.sign_s, plan.scalar_mu);
    const EigenRowMat wk = kron_perm_sign(plan.head_perm, kv_only, plan.sign_s,
                                          1.0 / plan.scalar_mu);
    const EigenRowMat wv = kron_perm_block(plan.head_perm, kv_only, h);
    const EigenRowMat wo = kron_perm_block(plan.head_perm, plan.query_perm, h);
    const EigenRowMat wo_inv = wo.inverse();
    for (std::int64_t l = 0; l < arch.num_layers; ++l) {
      LayerWeights& b = out.layers[l];
      b.q = DenseMatrix::from_eigen(b.q.map() * wq);
      b.k = DenseMatrix::from_eigen(b.k.map() * wk);
      b.v = DenseMatrix::from_eigen(b.v.map() * wv);
      b.o = DenseMatrix::from_eigen(wo_inv * b.o.map());
    }
  }

  // MLP permutations: Gate/Up columns, Down rows.
  for (std::int64_t l = 0; l < arch.num_layers; ++l) {
    if (is_identity_perm(plan.mlp_perms[l])) continue;
    const EigenRowMat p = perm_matrix(plan.mlp_perms[l]);
    LayerWeights& b = out.layers[l];
    b.gate = DenseMatrix::from_eigen(b.gate.map() * p);
    b.up = DenseMatrix::from_eigen(b.up.map() * p);
    b.down = DenseMatrix::from_eigen(p.transpose() * b.down.map());
  }

  // Pruning: keep the selected embedding channels everywhere.
  if (plan.prune_map) {
    const auto& keep = *plan.prune_map;
    const auto kn = static_cast<std::int64_t>(keep.size());
    auto keep_rows = [&](const DenseMatrix& m) {
      DenseMatrix r(kn, m.cols());
      for (std::int64_t i = 0; i < kn; ++i) r.map().row(i) = m.map().row(keep[i]);
      return r;
    };
    auto keep_cols = [&](const DenseMatrix& m) {
      DenseMatrix r(m.rows(), kn);
      for (std::int64_t j = 0; j < kn; ++j) r.map().col(j) = m.map().col(keep[j]);
      return r;
    };
    out.embedding = keep_cols(out.embedding);
    for (auto& b : out.layers) {
      b.q = keep_rows(b.q);
      b.k = keep_rows(b.k);
      b.v = keep_rows(b.v);
      b.gate = keep_rows(b.gate);
      b.up = keep_rows(b.up);
      b.o = keep_cols(b.o);
      b.down = keep_cols(b.down);
    }
    out.arch.emb_dim = kn;
  }

  // Noise, relative RMS per matrix, applied last.
  if (plan.noise_rms > 0.0) {
    std::uint64_t stream = 1u << 20;
    auto perturb = [&](DenseMatrix& m) {
      NormalSampler rng(mix_seed(plan.seed, stream++));
      add_noise(m, plan.noise_rms, rng);
    };
    perturb(out.embedding);
    for (auto& b : out.layers) {
      perturb(b.q);
      perturb(b.k);
      perturb(b.v);
      perturb(b.o);
      perturb(b.gate);
      perturb(b.up);
      perturb(b.down);
    }
  }

  out.validate();
  return out;
}

ObfuscationPlan sample_plan(const ArchSpec& arch, ForgeLevel level, std::uint64_t seed,
                            std::optional<std::int64_t> prune_target) {
  arch.validate(false);
  NormalSampler rng(mix_seed(seed, 0xF0123));
  ObfuscationPlan plan;
  plan.seed = seed;
  plan.head_perm = identity_perm(arch.kv_heads);
  plan.query_perm = identity_perm(arch.queries_per_head());
  plan.sign_s.assign(arch.head_dim, 1);
  plan.outer_perm = identity_perm(arch.emb_dim);
  plan.outer_signs.assign(arch.emb_dim, 1);
  plan.mlp_perms.assign(arch.num_layers, identity_perm(arch.intermediate_dim));

  auto random_mlp_perms = [&] {
    for (auto& p : plan.mlp_perms) p = random_permutation(arch.intermediate_dim, rng);
  };
  auto signed_outer = [&] {
    plan.outer_kind = OuterKind::signed_permutation;
    plan.outer_perm = random_permutation(arch.emb_dim, rng);
    plan.outer_signs = random_signs(arch.emb_dim, rng);
    plan.outer_u = signed_perm_matrix(plan.outer_perm, plan.outer_signs);
  };

  switch (level) {
    case ForgeLevel::L1_identity:
      plan.outer_kind = OuterKind::identity;
      plan.outer_u = DenseMatrix::identity(arch.emb_dim);
      break;
    case ForgeLevel::L2_permute:
      signed_outer();
      random_mlp_perms();
      break;
    case ForgeLevel::L3_orthogonal:
      plan.outer_kind = OuterKind::general_orthogonal;
      plan.outer_u = sample_haar_orthogonal(arch.emb_dim, mix_seed(seed, 0xA11), false);
      plan.outer_perm.clear();
      plan.outer_signs.clear();
      random_mlp_perms();
      break;
    case ForgeLevel::L4_noise:
      signed_outer();
      random_mlp_perms();
      plan.noise_rms = 0.01;
      break;
    case ForgeLevel::L5_comprehensive:
      plan.outer_kind = OuterKind::general_orthogonal;
      plan.outer_u = sample_haar_orthogonal(arch.emb_dim, mix_seed(seed, 0xA15), false);
      plan.outer_perm.clear();
      plan.outer_signs.clear();
      plan.head_perm = random_permutation(arch.kv_heads, rng);
      plan.query_perm = random_permutation(arch.queries_per_head(), rng);
      plan.sign_s = random_signs(arch.head_dim, rng);
      plan.scalar_mu = 0.5 + 1.5 * rng.uniform01();
      plan.scalar_lambda = 0.5 + 1.5 * rng.uniform01();
      plan.inner_v_kind = InnerVKind::orthogonal;
      plan.h_v = sample_haar_orthogonal(arch.head_dim, mix_seed(seed, 0xB07), false);
      random_mlp_perms();
      plan.noise_rms = 0.01;
      break;
    case ForgeLevel::pruning: {
      plan.outer_kind = OuterKind::identity;
      plan.outer_u = DenseMatrix::identity(arch.emb_dim);
      const std::int64_t target = prune_target.value_or(arch.emb_dim / 2);
      if (target < 1 || target > arch.emb_dim)
        throw DimMismatch("pruning target out of range");
      std::vector<std::int64_t> all = random_permutation(arch.emb_dim, rng);
      all.resize(target);
      std::sort(all.begin(), all.end());
      plan.prune_map = std::move(all);
      plan.noise_rms = 0.005;
      break;
    }
  }
  return plan;
}

ObfuscationPlan invert_plan(const ObfuscationPlan& plan, const ArchSpec& arch) {
  plan.validate(arch);
  if (plan.prune_map || plan.noise_rms > 0.0)
    throw DimMismatch("invert_plan: only exact (no-noise, no-prune) plans invert");
  ObfuscationPlan inv;
  inv.seed = plan.seed ^ 0xFFFF;
  inv.outer_kind = plan.outer_kind;
  inv.outer_u = DenseMatrix::from_eigen(plan.outer_u.map().transpose());
  auto invert_perm = [](const std::vector<std::int64_t>& p) {
    std::vector<std::int64_t> q(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) q[p[i]] = static_cast<std::int64_t>(i);
    return q;
  };
  if (!plan.outer_perm.empty()) {
    inv.outer_perm = invert_perm(plan.outer_perm);
    inv.outer_signs.resize(plan.outer_signs.size());
    for (std::size_t i = 0; i < plan.outer_perm.size(); ++i)
      inv.outer_signs[plan.outer_perm[i]] = plan.outer_signs[i];
  }
  inv.head_perm = invert_perm(plan.head_perm);
  inv.query_perm = invert_perm(plan.query_perm);
  inv.sign_s = plan.sign_s;  // signs are their own inverse, but move with P1
  // S commutes with the head reindexing since it acts per channel.
  inv.scalar_mu = 1.0 / plan.scalar_mu;
  inv.scalar_lambda = 1.0 / plan.scalar_lambda;
  inv.inner_v_kind = plan.inner_v_kind;
  if (plan.h_v.rows() > 0)
    inv.h_v = DenseMatrix::from_eigen(plan.h_v.map().inverse().eval());
  inv.mlp_perms.reserve(plan.mlp_perms.size());
  for (const auto& p : plan.mlp_perms) inv.mlp_perms.push_back(invert_perm(p));
  return inv;
}

std::string plan_to_json_text(const ObfuscationPlan& plan) {
  json doc;
  doc["outer_kind"] = static_cast<int>(plan.outer_kind);
  doc["seed"] = plan.seed;
  doc["outer_perm"] = plan.outer_perm;
  doc["outer_signs"] = plan.outer_signs;
  doc["head_perm"] = plan.head_perm;
  doc["query_perm"] = plan.query_perm;
  doc["sign_s"] = plan.sign_s;
  doc["scalar_mu"] = plan.scalar_mu;
  doc["scalar_lambda"] = plan.scalar_lambda;
  doc["inner_v_kind"] = static_cast<int>(plan.inner_v_kind);
  doc["noise_rms"] = plan.noise_rms;
  if (plan.prune_map) doc["prune_map"] = *plan.prune_map;
  doc["mlp_perms"] = plan.mlp_perms;
  auto matrix_rows = [](const DenseMatrix& m) {
    std::vector<std::vector<double>> rows(m.rows());
    for (std::int64_t i = 0; i < m.rows(); ++i) {
      rows[i].resize(m.cols());
      for (std::int64_t j = 0; j < m.cols(); ++j) rows[i][j] = m(i, j);
    }
    return rows;
  };
  doc["outer_u"] = matrix_rows(plan.outer_u);
  if (plan.h_v.rows() > 0) doc["h_v"] = matrix_rows(plan.h_v);
  return doc.dump() + "\n";
}

ObfuscationPlan plan_from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw MalformedHeader(std::string("plan JSON invalid: ") + e.what());
  }
  ObfuscationPlan plan;
  plan.outer_kind = static_cast<OuterKind>(doc.at("outer_kind").get<int>());
  plan.seed = doc.at("seed").get<std::uint64_t>();
  plan.outer_perm = doc.at("outer_perm").get<std::vector<std::int64_t>>();
  plan.outer_signs = doc.at("outer_signs").get<std::vector<int>>();
  plan.head_perm = doc.at("head_perm").get<std::vector<std::int64_t>>();
  plan.query_perm = doc.at("query_perm").get<std::vector<std::int64_t>>();
  plan.sign_s = doc.at("sign_s").get<std::vector<int>>();
  plan.scalar_mu = doc.at("scalar_mu").get<double>();
  plan.scalar_lambda = doc.at("scalar_lambda").get<double>();
  plan.inner_v_kind = static_cast<InnerVKind>(doc.at("inner_v_kind").get<int>());
  plan.noise_rms = doc.at("noise_rms").get<double>();
  if (doc.contains("prune_map"))
    plan.prune_map = doc["prune_map"].get<std::vector<std::int64_t>>();
  plan.mlp_perms = doc.at("mlp_perms").get<std::vector<std::vector<std::int64_t>>>();
  auto matrix_from = [](const json& rows) {
    const auto r = static_cast<std::int64_t>(rows.size());
    const auto c = r > 0 ? static_cast<std::int64_t>(rows[0].size()) : 0;
    DenseMatrix m(r, c);
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) m(i, j) = rows[i][j].get<double>();
    return m;
  };
  plan.outer_u = matrix_from(doc.at("outer_u"));
  if (doc.contains("h_v")) plan.h_v = matrix_from(doc["h_v"]);
  return plan;
}

}  // namespace mdir
