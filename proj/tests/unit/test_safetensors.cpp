#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "mdir/errors.hpp"
#include "mdir/forge.hpp"
#include "mdir/model_io.hpp"
#include "mdir/rng.hpp"
#include "mdir/safetensors.hpp"

using namespace mdir;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const fs::path p = fs::temp_directory_path() / "mdir_io_tests";
  fs::create_directories(p);
  return p;
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
}

void write_raw(const fs::path& p, const std::string& header,
               const std::vector<std::uint8_t>& data) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  const std::uint64_t n = header.size();
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((n >> (8 * i)) & 0xff));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
}

ArchSpec tiny_arch() {
  ArchSpec a;
  a.num_layers = 2;
  a.emb_dim = 8;
  a.num_heads = 2;
  a.kv_heads = 1;
  a.head_dim = 4;
  a.intermediate_dim = 16;
  a.vocab_size = 32;
  a.name_template = arch_preset("canonical");
  return a;
}

}  // namespace

TEST_SUITE_BEGIN("weights_io");

TEST_CASE("minimal container with one 2x2 f32 tensor") {
  const fs::path p = scratch_dir() / "minimal.safetensors";
  TensorToWrite t;
  t.name = "w";
  t.dtype = Dtype::f32;
  t.shape = {2, 2};
  DenseMatrix m(2, 2);
  m(0, 0) = 1.0f;
  m(1, 1) = -2.5f;
  t.bytes = encode_matrix(m, Dtype::f32);
  write_container(p.string(), {t});

  const auto refs = parse_container(p.string());
  REQUIRE(refs.size() == 1);
  CHECK(refs[0].name == "w");
  CHECK(refs[0].shape == std::vector<std::int64_t>{2, 2});
  CHECK(refs[0].byte_length == 16);
  CHECK(refs[0].dtype == Dtype::f32);
  const DenseMatrix back = read_tensor(p.string(), refs[0]);
  CHECK(back(0, 0) == 1.0);
  CHECK(back(1, 1) == -2.5);
}

TEST_CASE("container with zero tensors parses to an empty list") {
  const fs::path p = scratch_dir() / "empty.safetensors";
  write_raw(p, "{}", {});
  CHECK(parse_container(p.string()).empty());
}

TEST_CASE("declared byte length inconsistent with shape is malformed") {
  const fs::path p = scratch_dir() / "corrupt.safetensors";
  // 2x2 f32 needs 16 bytes, header declares 12
  write_raw(p,
            R"({"w":{"dtype":"F32","shape":[2,2],"data_offsets":[0,12]}})",
            std::vector<std::uint8_t>(12, 0));
  CHECK_THROWS_AS(parse_container(p.string()), MalformedHeader);
}

TEST_CASE("unsupported dtypes and malformed headers are rejected") {
  const fs::path dir = scratch_dir();
  write_raw(dir / "i64.safetensors",
            R"({"w":{"dtype":"I64","shape":[1],"data_offsets":[0,8]}})",
            std::vector<std::uint8_t>(8, 0));
  CHECK_THROWS_AS(parse_container((dir / "i64.safetensors").string()),
                  UnsupportedDtype);

  write_raw(dir / "badjson.safetensors", "{not json", {});
  CHECK_THROWS_AS(parse_container((dir / "badjson.safetensors").string()),
                  MalformedHeader);

  std::ofstream(dir / "short.safetensors", std::ios::binary) << "abc";
  CHECK_THROWS_AS(parse_container((dir / "short.safetensors").string()),
                  MalformedHeader);

  // header length points far beyond the file
  std::ofstream out(dir / "hugeheader.safetensors", std::ios::binary);
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>(0xff));
  out.close();
  CHECK_THROWS_AS(parse_container((dir / "hugeheader.safetensors").string()),
                  MalformedHeader);
}

TEST_CASE("offsets outside the data region are malformed") {
  const fs::path p = scratch_dir() / "offsets.safetensors";
  write_raw(p,
            R"({"w":{"dtype":"F32","shape":[2,2],"data_offsets":[0,16]}})",
            std::vector<std::uint8_t>(8, 0));  // only 8 data bytes present
  CHECK_THROWS_AS(parse_container(p.string()), MalformedHeader);
}

TEST_CASE("f16 promotion is exact on representable values") {
  // 1.0 -> 0x3C00, -2.0 -> 0xC000
  const std::vector<std::uint8_t> raw = {0x00, 0x3C, 0x00, 0xC0};
  const DenseMatrix m = promote_dtype(raw, Dtype::f16, {2});
  CHECK(m(0, 0) == 1.0);
  CHECK(m(0, 1) == -2.0);
}

TEST_CASE("bf16 infinity is preserved for downstream rejection") {
  const std::vector<std::uint8_t> raw = {0x80, 0x7F};  // 0x7F80
  const DenseMatrix m = promote_dtype(raw, Dtype::bf16, {1});
  CHECK(std::isinf(m(0, 0)));
}

TEST_CASE("f32 promotion widens exactly") {
  const float f = 0.1f;
  std::vector<std::uint8_t> raw(4);
  std::memcpy(raw.data(), &f, 4);
  const DenseMatrix m = promote_dtype(raw, Dtype::f32, {1});
  CHECK(m(0, 0) == static_cast<double>(0.1f));
  CHECK(m(0, 0) == 0.10000000149011612);
}

TEST_CASE("promotion rejects length mismatches") {
  CHECK_THROWS_AS(promote_dtype({0x01, 0x02, 0x03}, Dtype::f32, {1}),
                  LengthMismatch);
  CHECK_THROWS_AS(promote_dtype(std::vector<std::uint8_t>(8, 0), Dtype::f32, {3}),
                  LengthMismatch);
}

TEST_CASE("promotion round-trips random values through every dtype") {
  NormalSampler rng(2024);
  DenseMatrix m(4, 6);
  for (double& v : m.data()) v = rng();

  // f64: bit-exact
  const DenseMatrix m64 = promote_dtype(encode_matrix(m, Dtype::f64), Dtype::f64,
                                        {4, 6});
  CHECK(m64 == m);

  // f32/f16/bf16: narrowing then widening is the identity on narrow values
  for (Dtype d : {Dtype::f32, Dtype::f16, Dtype::bf16}) {
    const DenseMatrix once = promote_dtype(encode_matrix(m, d), d, {4, 6});
    const DenseMatrix twice = promote_dtype(encode_matrix(once, d), d, {4, 6});
    CHECK(once == twice);
  }
}

TEST_CASE("f16 decoding agrees with an independent ldexp reference") {
  for (std::uint32_t bits = 0; bits < 0x10000; bits += 7) {
    const auto h = static_cast<std::uint16_t>(bits);
    std::vector<std::uint8_t> raw(2);
    std::memcpy(raw.data(), &h, 2);
    const double got = promote_dtype(raw, Dtype::f16, {1})(0, 0);

    const int sign = (h >> 15) & 1;
    const int exp = (h >> 10) & 0x1f;
    const int mant = h & 0x3ff;
    double expect;
    if (exp == 0)
      expect = std::ldexp(static_cast<double>(mant), -24);
    else if (exp == 31)
      expect = mant == 0 ? std::numeric_limits<double>::infinity()
                         : std::numeric_limits<double>::quiet_NaN();
    else
      expect = std::ldexp(static_cast<double>(mant) + 1024.0, exp - 25);
    if (sign) expect = -expect;
    if (std::isnan(expect))
      CHECK(std::isnan(got));
    else
      CHECK(got == expect);
  }
}

TEST_CASE("toy model round-trips bit-for-bit through the container") {
  const ArchSpec arch = tiny_arch();
  const ModelBundle model = make_toy_model(arch, 99);
  const fs::path p = scratch_dir() / "toy.safetensors";
  save_model(p.string(), model, Dtype::f64);
  const ModelBundle back = load_model(p.string(), arch);
  CHECK(back.embedding == model.embedding);
  for (std::int64_t l = 0; l < arch.num_layers; ++l)
    for (Role r : layer_roles()) CHECK(back.matrix(r, l) == model.matrix(r, l));
}

TEST_CASE("write is deterministic byte-for-byte") {
  const ArchSpec arch = tiny_arch();
  const ModelBundle model = make_toy_model(arch, 7);
  const fs::path p1 = scratch_dir() / "det1.safetensors";
  const fs::path p2 = scratch_dir() / "det2.safetensors";
  save_model(p1.string(), model);
  save_model(p2.string(), model);
  CHECK(file_bytes(p1) == file_bytes(p2));
}

TEST_CASE("a deleted tensor is reported with role and layer") {
  const ArchSpec arch = tiny_arch();
  const ModelBundle model = make_toy_model(arch, 5);
  std::vector<TensorToWrite> tensors;
  auto push = [&](Role r, std::int64_t layer) {
    if (r == Role::up && layer == 1) return;  // drop layer-1 up
    const DenseMatrix& m = model.matrix(r, layer);
    tensors.push_back({model.arch.key_for(r, layer), Dtype::f64,
                       {m.rows(), m.cols()}, encode_matrix(m, Dtype::f64)});
  };
  push(Role::embedding, 0);
  for (std::int64_t l = 0; l < arch.num_layers; ++l)
    for (Role r : layer_roles()) push(r, l);
  const fs::path p = scratch_dir() / "missing.safetensors";
  write_container(p.string(), tensors);
  try {
    load_model(p.string(), arch);
    FAIL("expected MissingTensor");
  } catch (const MissingTensor& e) {
    CHECK(e.role() == "up");
    CHECK(e.layer() == 1);
  }
}

TEST_CASE("bf16 fixtures load representable values exactly") {
  const ArchSpec arch = tiny_arch();
  ModelBundle model = make_toy_model(arch, 3);
  model.embedding(0, 0) = 1.5;  // exactly representable in bf16
  const fs::path p = scratch_dir() / "bf16.safetensors";
  save_model(p.string(), model, Dtype::bf16);
  const ModelBundle back = load_model(p.string(), arch);
  CHECK(back.embedding(0, 0) == 1.5);
}

TEST_CASE("non-finite stored values are rejected at load") {
  const ArchSpec arch = tiny_arch();
  ModelBundle model = make_toy_model(arch, 3);
  model.layers[0].q(1, 1) = std::numeric_limits<double>::infinity();
  const fs::path p = scratch_dir() / "inf.safetensors";
  // bypass save_model's own validation by writing the container directly
  std::vector<TensorToWrite> tensors;
  auto push = [&](Role r, std::int64_t layer) {
    const DenseMatrix& m = model.matrix(r, layer);
    tensors.push_back({model.arch.key_for(r, layer), Dtype::f64,
                       {m.rows(), m.cols()}, encode_matrix(m, Dtype::f64)});
  };
  push(Role::embedding, 0);
  for (std::int64_t l = 0; l < arch.num_layers; ++l)
    for (Role r : layer_roles()) push(r, l);
  write_container(p.string(), tensors);
  CHECK_THROWS_AS(load_model(p.string(), arch), NonFiniteValue);
}

TEST_CASE("transposed container layouts are canonicalized by the adapter") {
  const ArchSpec canonical = tiny_arch();
  const ModelBundle model = make_toy_model(canonical, 11);

  ArchSpec transposed = canonical;
  for (Role r : layer_roles())
    transposed.name_template[r].transpose = true;

  const fs::path p = scratch_dir() / "transposed.safetensors";
  save_model(p.string(), {transposed, model.embedding, model.layers, ""});
  // stored [out, in]; loading with the transpose adapter restores canonical
  const ModelBundle back = load_model(p.string(), transposed);
  CHECK(back.layers[0].q == model.layers[0].q);
  CHECK(back.layers[1].down == model.layers[1].down);
  CHECK(back.embedding == model.embedding);
}

TEST_CASE("sharded checkpoints resolve through the index file") {
  const ArchSpec arch = tiny_arch();
  const ModelBundle model = make_toy_model(arch, 13);
  const fs::path dir = scratch_dir() / "sharded";
  fs::create_directories(dir);

  std::vector<TensorToWrite> shard1, shard2;
  std::string weight_map = "{";
  auto push = [&](Role r, std::int64_t layer) {
    const DenseMatrix& m = model.matrix(r, layer);
    const std::string key = model.arch.key_for(r, layer);
    auto& shard = (layer == 1) ? shard2 : shard1;
    shard.push_back({key, Dtype::f64, {m.rows(), m.cols()},
                     encode_matrix(m, Dtype::f64)});
    weight_map += "\"" + key + "\":\"" +
                  ((layer == 1) ? "shard2.safetensors" : "shard1.safetensors") +
                  "\",";
  };
  push(Role::embedding, 0);
  for (std::int64_t l = 0; l < arch.num_layers; ++l)
    for (Role r : layer_roles()) push(r, l);
  weight_map.back() = '}';
  write_container((dir / "shard1.safetensors").string(), shard1);
  write_container((dir / "shard2.safetensors").string(), shard2);
  std::ofstream(dir / "model.safetensors.index.json")
      << "{\"weight_map\":" << weight_map << "}";

  const ModelBundle back =
      load_model((dir / "model.safetensors.index.json").string(), arch);
  CHECK(back.embedding == model.embedding);
  CHECK(back.layers[1].up == model.layers[1].up);
}

TEST_CASE("arch json round-trip and preset selection") {
  ArchSpec a = tiny_arch();
  const ArchSpec b = arch_from_json_text(arch_to_json_text(a));
  CHECK(b.emb_dim == a.emb_dim);
  CHECK(b.name_template.at(Role::up).key == a.name_template.at(Role::up).key);

  const ArchSpec c = arch_from_json_text(
      R"({"num_layers":2,"emb_dim":8,"num_heads":2,"kv_heads":1,"head_dim":4,
          "intermediate_dim":16,"vocab_size":32,"preset":"llama"})");
  CHECK(c.name_template.at(Role::q).key ==
        "model.layers.{layer}.self_attn.q_proj.weight");
  CHECK(c.name_template.at(Role::q).transpose);
}

TEST_CASE("arch validation enforces the dimension equations") {
  ArchSpec a = tiny_arch();
  a.kv_heads = 3;  // does not divide num_heads = 2
  CHECK_THROWS_AS(a.validate(), ShapeMismatch);
  ArchSpec b = tiny_arch();
  b.vocab_size = 4;  // below emb_dim
  CHECK_THROWS_AS(b.validate(), ShapeMismatch);
}

TEST_SUITE_END();
