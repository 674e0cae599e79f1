#include "mdir/safetensors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "mdir/errors.hpp"

namespace mdir {

namespace {

using nlohmann::json;

std::uint64_t read_header_length(std::ifstream& in, const std::string& path) {
  std::uint8_t buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (in.gcount() != 8)
    throw MalformedHeader(path + ": file shorter than the 8-byte header length");
  std::uint64_t n = 0;
  for (int i = 7; i >= 0; --i) n = (n << 8) | buf[i];
  return n;
}

double half_to_double(std::uint16_t h) {
  const std::uint32_t sign = (h >> 15) & 0x1;
  const std::uint32_t exp = (h >> 10) & 0x1f;
  const std::uint32_t mant = h & 0x3ff;
  std::uint32_t fbits;
  if (exp == 0) {
    if (mant == 0) {
      fbits = sign << 31;  // signed zero
    } else {
      // subnormal half: normalize into f32
      int e = -1;
      std::uint32_t m = mant;
      while ((m & 0x400) == 0) {
        m <<= 1;
        ++e;
      }
      const std::uint32_t fexp = 127 - 15 - e;
      fbits = (sign << 31) | (fexp << 23) | ((m & 0x3ff) << 13);
    }
  } else if (exp == 0x1f) {
    fbits = (sign << 31) | 0x7f800000u | (mant << 13);  // inf / nan
  } else {
    fbits = (sign << 31) | ((exp - 15 + 127) << 23) | (mant << 13);
  }
  float f;
  std::memcpy(&f, &fbits, 4);
  return static_cast<double>(f);
}

double bf16_to_double(std::uint16_t b) {
  const std::uint32_t fbits = static_cast<std::uint32_t>(b) << 16;
  float f;
  std::memcpy(&f, &fbits, 4);
  return static_cast<double>(f);
}

std::uint16_t double_to_half(double v) {
  const float f = static_cast<float>(v);
  std::uint32_t fbits;
  std::memcpy(&fbits, &f, 4);
  const std::uint32_t sign = (fbits >> 16) & 0x8000;
  const std::int32_t exp = static_cast<std::int32_t>((fbits >> 23) & 0xff) - 127 + 15;
  std::uint32_t mant = fbits & 0x7fffff;
  if (((fbits >> 23) & 0xff) == 0xff)
    return static_cast<std::uint16_t>(sign | 0x7c00 | (mant ? 0x200 : 0));
  if (exp >= 0x1f) return static_cast<std::uint16_t>(sign | 0x7c00);  // overflow -> inf
  if (exp <= 0) {
    if (exp < -10) return static_cast<std::uint16_t>(sign);
    mant |= 0x800000;
    const int shift = 14 - exp;
    std::uint32_t out = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1);
    const std::uint32_t half = 1u << (shift - 1);
    if (rem > half || (rem == half && (out & 1))) ++out;
    return static_cast<std::uint16_t>(sign | out);
  }
  std::uint32_t out = static_cast<std::uint32_t>(exp) << 10 | (mant >> 13);
  const std::uint32_t rem = mant & 0x1fff;
  if (rem > 0x1000 || (rem == 0x1000 && (out & 1))) ++out;
  return static_cast<std::uint16_t>(sign | out);
}

std::uint16_t double_to_bf16(double v) {
  const float f = static_cast<float>(v);
  std::uint32_t fbits;
  std::memcpy(&fbits, &f, 4);
  if (((fbits >> 23) & 0xff) == 0xff && (fbits & 0x7fffff))
    return static_cast<std::uint16_t>((fbits >> 16) | 0x40);  // keep nan quiet
  const std::uint32_t lsb = (fbits >> 16) & 1;
  const std::uint32_t rounded = fbits + 0x7fff + lsb;
  return static_cast<std::uint16_t>(rounded >> 16);
}

}  // namespace

std::size_t dtype_width(Dtype d) {
  switch (d) {
    case Dtype::f64: return 8;
    case Dtype::f32: return 4;
    case Dtype::f16:
    case Dtype::bf16: return 2;
  }
  return 0;
}

std::string dtype_name(Dtype d) {
  switch (d) {
    case Dtype::f64: return "F64";
    case Dtype::f32: return "F32";
    case Dtype::f16: return "F16";
    case Dtype::bf16: return "BF16";
  }
  return "?";
}

Dtype dtype_from_name(const std::string& name) {
  if (name == "F64") return Dtype::f64;
  if (name == "F32") return Dtype::f32;
  if (name == "F16") return Dtype::f16;
  if (name == "BF16") return Dtype::bf16;
  throw UnsupportedDtype("unsupported dtype: " + name);
}

std::int64_t TensorRef::element_count() const {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return n;
}

std::vector<TensorRef> parse_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open container: " + path);
  in.seekg(0, std::ios::end);
  const std::int64_t file_size = in.tellg();
  in.seekg(0);
  const std::uint64_t header_len = read_header_length(in, path);
  if (header_len == 0 || header_len > static_cast<std::uint64_t>(file_size) - 8)
    throw MalformedHeader(path + ": header length out of bounds");

  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (in.gcount() != static_cast<std::streamsize>(header_len))
    throw MalformedHeader(path + ": truncated header");

  json meta;
  try {
    meta = json::parse(header);
  } catch (const json::exception& e) {
    throw MalformedHeader(path + ": header is not valid JSON: " + e.what());
  }
  if (!meta.is_object()) throw MalformedHeader(path + ": header is not a JSON object");

  const std::int64_t data_region = file_size - 8 - static_cast<std::int64_t>(header_len);
  std::vector<TensorRef> refs;
  for (const auto& [name, entry] : meta.items()) {
    if (name == "__metadata__") continue;
    if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
        !entry.contains("data_offsets"))
      throw MalformedHeader(path + ": tensor entry '" + name + "' is incomplete");
    TensorRef ref;
    ref.name = name;
    ref.dtype = dtype_from_name(entry["dtype"].get<std::string>());
    for (const auto& d : entry["shape"]) {
      const std::int64_t v = d.get<std::int64_t>();
      if (v < 0) throw MalformedHeader(path + ": negative dimension in '" + name + "'");
      ref.shape.push_back(v);
    }
    if (ref.shape.size() > 2)
      throw MalformedHeader(path + ": tensor '" + name + "' has rank > 2");
    const auto& off = entry["data_offsets"];
    if (!off.is_array() || off.size() != 2)
      throw MalformedHeader(path + ": bad data_offsets in '" + name + "'");
    const std::int64_t begin = off[0].get<std::int64_t>();
    const std::int64_t end = off[1].get<std::int64_t>();
    if (begin < 0 || end < begin || end > data_region)
      throw MalformedHeader(path + ": data_offsets of '" + name +
                            "' outside the data region");
    ref.byte_offset = begin;
    ref.byte_length = end - begin;
    const std::int64_t expect =
        ref.element_count() * static_cast<std::int64_t>(dtype_width(ref.dtype));
    if (ref.byte_length != expect)
      throw MalformedHeader(path + ": tensor '" + name + "' declares " +
                            std::to_string(ref.byte_length) + " bytes, shape needs " +
                            std::to_string(expect));
    refs.push_back(std::move(ref));
  }
  return refs;
}

DenseMatrix promote_dtype(const std::vector<std::uint8_t>& raw, Dtype dtype,
                          const std::vector<std::int64_t>& shape) {
  const std::size_t width = dtype_width(dtype);
  if (raw.size() % width != 0)
    throw LengthMismatch("promote_dtype: byte length not divisible by dtype width");
  const std::size_t count = raw.size() / width;

  std::int64_t rows = 1, cols = static_cast<std::int64_t>(count);
  if (shape.size() == 2) {
    rows = shape[0];
    cols = shape[1];
  } else if (shape.size() == 1) {
    cols = shape[0];
  } else if (!shape.empty()) {
    throw ShapeMismatch("promote_dtype: rank > 2 not supported");
  }
  if (static_cast<std::size_t>(rows * cols) != count)
    throw LengthMismatch("promote_dtype: shape does not match byte length");

  DenseMatrix out(rows, cols);
  auto data = out.data();
  switch (dtype) {
    case Dtype::f64:
      std::memcpy(data.data(), raw.data(), raw.size());
      break;
    case Dtype::f32:
      for (std::size_t i = 0; i < count; ++i) {
        float f;
        std::memcpy(&f, raw.data() + 4 * i, 4);
        data[i] = static_cast<double>(f);
      }
      break;
    case Dtype::f16:
      for (std::size_t i = 0; i < count; ++i) {
        std::uint16_t h;
        std::memcpy(&h, raw.data() + 2 * i, 2);
        data[i] = half_to_double(h);
      }
      break;
    case Dtype::bf16:
      for (std::size_t i = 0; i < count; ++i) {
        std::uint16_t b;
        std::memcpy(&b, raw.data() + 2 * i, 2);
        data[i] = bf16_to_double(b);
      }
      break;
  }
  return out;
}

DenseMatrix read_tensor(const std::string& path, const TensorRef& ref) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open container: " + path);
  const std::uint64_t header_len = read_header_length(in, path);
  in.seekg(static_cast<std::streamoff>(8 + header_len + ref.byte_offset));
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(ref.byte_length));
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw IoError(path + ": short read for tensor " + ref.name);
  return promote_dtype(raw, ref.dtype, ref.shape);
}

std::vector<std::uint8_t> encode_matrix(const DenseMatrix& m, Dtype dtype) {
  const std::size_t count = m.size();
  std::vector<std::uint8_t> out(count * dtype_width(dtype));
  const auto data = m.data();
  switch (dtype) {
    case Dtype::f64:
      std::memcpy(out.data(), data.data(), out.size());
      break;
    case Dtype::f32:
      for (std::size_t i = 0; i < count; ++i) {
        const float f = static_cast<float>(data[i]);
        std::memcpy(out.data() + 4 * i, &f, 4);
      }
      break;
    case Dtype::f16:
      for (std::size_t i = 0; i < count; ++i) {
        const std::uint16_t h = double_to_half(data[i]);
        std::memcpy(out.data() + 2 * i, &h, 2);
      }
      break;
    case Dtype::bf16:
      for (std::size_t i = 0; i < count; ++i) {
        const std::uint16_t b = double_to_bf16(data[i]);
        std::memcpy(out.data() + 2 * i, &b, 2);
      }
      break;
  }
  return out;
}

void write_container(const std::string& path, const std::vector<TensorToWrite>& tensors,
                     const std::map<std::string, std::string>& metadata) {
  json header = json::object();
  if (!metadata.empty()) {
    json md = json::object();
    for (const auto& [k, v] : metadata) md[k] = v;
    header["__metadata__"] = md;
  }

  // Name-sorted layout for reproducible bytes.
  std::vector<const TensorToWrite*> order;
  order.reserve(tensors.size());
  for (const auto& t : tensors) order.push_back(&t);
  std::sort(order.begin(), order.end(),
            [](const TensorToWrite* a, const TensorToWrite* b) {
              return a->name < b->name;
            });

  std::int64_t offset = 0;
  for (const TensorToWrite* t : order) {
    std::int64_t expect = static_cast<std::int64_t>(dtype_width(t->dtype));
    for (std::int64_t d : t->shape) expect *= d;
    if (expect != static_cast<std::int64_t>(t->bytes.size()))
      throw ShapeMismatch("write_container: byte length of '" + t->name +
                          "' does not match shape*width");
    json entry;
    entry["dtype"] = dtype_name(t->dtype);
    entry["shape"] = t->shape;
    entry["data_offsets"] = {offset, offset + expect};
    header[t->name] = entry;
    offset += expect;
  }

  std::string head = header.dump();
  while (head.size() % 8 != 0) head.push_back(' ');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + path);
  const std::uint64_t n = head.size();
  std::uint8_t lenbuf[8];
  for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<std::uint8_t>((n >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(lenbuf), 8);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const TensorToWrite* t : order)
    out.write(reinterpret_cast<const char*>(t->bytes.data()),
              static_cast<std::streamsize>(t->bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace mdir
