#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mdir/dense_matrix.hpp"

namespace mdir {

struct VocabMap {
  std::unordered_map<std::string, std::int64_t> token_to_id;
  std::int64_t size = 0;
};

struct TokenIntersection {
  // (id_in_A, id_in_B), sorted ascending by id_in_A; ids distinct per side.
  std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
  std::int64_t count = 0;
};

// Accepts a flat {"token": id} object, a combined tokenizer JSON with
// model.vocab (object or array form), or a plain JSON array of tokens
// (id = position). Token identity is byte-exact; set `decode_byte_level`
// to undo the byte-level BPE printable remapping before matching.
VocabMap load_vocab(const std::string& path, bool decode_byte_level = false);
VocabMap vocab_from_json_text(const std::string& text, bool decode_byte_level = false);

// Trivial vocab t0..t{n-1}; used by fixtures.
VocabMap identity_vocab(std::int64_t n);
std::string vocab_to_json_text(const VocabMap& v);

// Inverse of the byte-level BPE printable-byte remapping for one token.
std::string decode_byte_level_token(const std::string& token);

// Common tokens by byte-exact string equality.
TokenIntersection intersect_vocabs(const VocabMap& a, const VocabMap& b);

// Output row k equals input row ids[k].
DenseMatrix select_rows(const DenseMatrix& e, const std::vector<std::int64_t>& ids);

}  // namespace mdir
