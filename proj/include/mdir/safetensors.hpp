#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mdir/dense_matrix.hpp"

namespace mdir {

enum class Dtype { f64, f32, f16, bf16 };

std::size_t dtype_width(Dtype d);
std::string dtype_name(Dtype d);
Dtype dtype_from_name(const std::string& name);

struct TensorRef {
  std::string name;
  Dtype dtype = Dtype::f32;
  std::vector<std::int64_t> shape;  // rank <= 2 after canonicalization
  std::int64_t byte_offset = 0;     // relative to end of header
  std::int64_t byte_length = 0;
  std::int64_t element_count() const;
};

// Parsed container header: descriptors only, no tensor data materialized.
std::vector<TensorRef> parse_container(const std::string& path);

// Element-wise exact widening conversion of raw little-endian data to f64.
// `shape` must have rank 1 or 2; rank-1 data becomes a 1 x n matrix.
DenseMatrix promote_dtype(const std::vector<std::uint8_t>& raw_bytes, Dtype dtype,
                          const std::vector<std::int64_t>& shape);

// Reads and promotes one tensor from an open container.
DenseMatrix read_tensor(const std::string& path, const TensorRef& ref);

// Fixture writer. Tensors are laid out in name order; the JSON header is
// serialized with sorted keys and padded to 8-byte alignment, so writes are
// byte-identical across runs.
struct TensorToWrite {
  std::string name;
  Dtype dtype = Dtype::f64;
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> bytes;  // little-endian raw data
};
void write_container(const std::string& path, const std::vector<TensorToWrite>& tensors,
                     const std::map<std::string, std::string>& metadata = {});

// Encodes an f64 matrix as raw bytes of the requested storage dtype
// (round-to-nearest-even narrowing for f32/f16/bf16).
std::vector<std::uint8_t> encode_matrix(const DenseMatrix& m, Dtype dtype);

}  // namespace mdir
