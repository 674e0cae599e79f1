#include "mdir/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "mdir/errors.hpp"

namespace mdir {

namespace {

using nlohmann::json;

// Inverse of the byte-level BPE printable-byte table: printable latin-1
// ranges map to themselves, the remaining 68 bytes were remapped to
// code points 256, 257, ... in ascending byte order.
const std::unordered_map<std::uint32_t, std::uint8_t>& byte_decode_table() {
  static const auto table = [] {
    std::unordered_map<std::uint32_t, std::uint8_t> t;
    std::uint32_t next = 256;
    auto printable = [](int b) {
      return (b >= 33 && b <= 126) || (b >= 161 && b <= 172) || (b >= 174 && b <= 255);
    };
    for (int b = 0; b < 256; ++b) {
      if (printable(b))
        t[static_cast<std::uint32_t>(b)] = static_cast<std::uint8_t>(b);
      else
        t[next++] = static_cast<std::uint8_t>(b);
    }
    return t;
  }();
  return table;
}

// Minimal UTF-8 code point iterator; returns false on malformed input.
bool next_codepoint(const std::string& s, std::size_t& i, std::uint32_t& cp) {
  if (i >= s.size()) return false;
  const auto b0 = static_cast<std::uint8_t>(s[i]);
  int extra = 0;
  if (b0 < 0x80) {
    cp = b0;
  } else if ((b0 >> 5) == 0x6) {
    cp = b0 & 0x1f;
    extra = 1;
  } else if ((b0 >> 4) == 0xe) {
    cp = b0 & 0x0f;
    extra = 2;
  } else if ((b0 >> 3) == 0x1e) {
    cp = b0 & 0x07;
    extra = 3;
  } else {
    return false;
  }
  if (i + extra >= s.size()) return false;
  for (int k = 1; k <= extra; ++k) {
    const auto b = static_cast<std::uint8_t>(s[i + k]);
    if ((b >> 6) != 0x2) return false;
    cp = (cp << 6) | (b & 0x3f);
  }
  i += extra + 1;
  return true;
}

VocabMap from_json(const json& doc, bool decode_byte_level) {
  const json* vocab = &doc;
  if (doc.is_object() && doc.contains("model") && doc["model"].contains("vocab"))
    vocab = &doc["model"]["vocab"];

  VocabMap out;
  auto insert = [&](std::string token, std::int64_t id) {
    if (decode_byte_level) token = decode_byte_level_token(token);
    if (!out.token_to_id.emplace(std::move(token), id).second)
      throw MalformedHeader("vocab: duplicate token surface form");
  };

  if (vocab->is_object()) {
    for (const auto& [tok, id] : vocab->items())
      insert(tok, id.get<std::int64_t>());
  } else if (vocab->is_array()) {
    std::int64_t id = 0;
    for (const auto& entry : *vocab) {
      if (entry.is_string())
        insert(entry.get<std::string>(), id++);
      else if (entry.is_array() && !entry.empty() && entry[0].is_string())
        insert(entry[0].get<std::string>(), id++);  // [token, score] rows
      else
        throw MalformedHeader("vocab: unsupported array entry");
    }
  } else {
    throw MalformedHeader("vocab: expected an object or array");
  }

  std::unordered_set<std::int64_t> seen;
  std::int64_t max_id = -1;
  for (const auto& [tok, id] : out.token_to_id) {
    if (id < 0 || !seen.insert(id).second)
      throw MalformedHeader("vocab: ids must be unique and non-negative");
    max_id = std::max(max_id, id);
  }
  out.size = max_id + 1;
  return out;
}

}  // namespace

std::string decode_byte_level_token(const std::string& token) {
  const auto& table = byte_decode_table();
  std::string out;
  out.reserve(token.size());
  std::size_t i = 0;
  std::uint32_t cp = 0;
  while (i < token.size()) {
    if (!next_codepoint(token, i, cp)) return token;  // not UTF-8: keep raw bytes
    const auto it = table.find(cp);
    if (it == table.end()) return token;  // outside the remap: not byte-level BPE
    out.push_back(static_cast<char>(it->second));
  }
  return out;
}

VocabMap vocab_from_json_text(const std::string& text, bool decode_byte_level) {
  try {
    return from_json(json::parse(text), decode_byte_level);
  } catch (const json::exception& e) {
    throw MalformedHeader(std::string("vocab JSON invalid: ") + e.what());
  }
}

VocabMap load_vocab(const std::string& path, bool decode_byte_level) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocab file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return vocab_from_json_text(text, decode_byte_level);
}

VocabMap identity_vocab(std::int64_t n) {
  VocabMap v;
  v.size = n;
  v.token_to_id.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) v.token_to_id["t" + std::to_string(i)] = i;
  return v;
}

std::string vocab_to_json_text(const VocabMap& v) {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [tok, id] : v.token_to_id) doc[tok] = id;
  return doc.dump() + "\n";
}

TokenIntersection intersect_vocabs(const VocabMap& a, const VocabMap& b) {
  TokenIntersection out;
  out.pairs.reserve(std::min(a.token_to_id.size(), b.token_to_id.size()));
  for (const auto& [tok, id_a] : a.token_to_id) {
    const auto it = b.token_to_id.find(tok);
    if (it != b.token_to_id.end()) out.pairs.emplace_back(id_a, it->second);
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  out.count = static_cast<std::int64_t>(out.pairs.size());
  return out;
}

DenseMatrix select_rows(const DenseMatrix& e, const std::vector<std::int64_t>& ids) {
  for (std::int64_t id : ids)
    if (id < 0 || id >= e.rows())
      throw IndexOutOfRange("select_rows: id " + std::to_string(id) +
                            " outside 0.." + std::to_string(e.rows() - 1));
  DenseMatrix out(static_cast<std::int64_t>(ids.size()), e.cols());
  for (std::size_t k = 0; k < ids.size(); ++k)
    out.map().row(static_cast<std::int64_t>(k)) = e.map().row(ids[k]);
  return out;
}

}  // namespace mdir
