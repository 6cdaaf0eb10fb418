#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "salbfgs/text_format.hpp"
#include "salbfgs/types.hpp"

namespace salbfgs {

inline constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = kFnvOffsetBasis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

struct HashConfig {
  unsigned bits = 18;
  // Namespace pairs whose token combinations are added as crossed features.
  std::vector<std::pair<std::string, std::string>> conjunctions;

  void validate() const {
    if (bits < 8 || bits > 30)
      throw config_error("hash bits must be in [8, 30]");
  }

  std::size_t dimension() const { return std::size_t{1} << bits; }
};

namespace detail {

inline void check_name_piece(std::string_view piece, const char* what) {
  if (piece.empty()) throw parse_error(std::string(what) + " is empty");
  for (unsigned char c : piece) {
    if (c <= 0x20 || c >= 0x7f)
      throw parse_error(std::string(what) + " '" + std::string(piece) +
                        "' must be printable ASCII without whitespace");
    if (c == ':' || c == '|')
      throw parse_error(std::string(what) + " '" + std::string(piece) +
                        "' must not contain ':' or '|'");
  }
}

}  // namespace detail

// Hashed index of a namespaced token. The namespace and token are joined
// with a unit separator so that distinct (namespace, token) pairs never
// collide on the byte string itself.
inline std::uint32_t hash_feature(std::string_view ns, std::string_view token,
                                  const HashConfig& cfg) {
  cfg.validate();
  detail::check_name_piece(ns, "namespace");
  detail::check_name_piece(token, "token");
  std::string key;
  key.reserve(ns.size() + token.size() + 1);
  key.append(ns);
  key.push_back('\x1f');
  key.append(token);
  return static_cast<std::uint32_t>(fnv1a64(key) &
                                    ((std::uint64_t{1} << cfg.bits) - 1));
}

// Hashed index of a crossed token pair; the two halves are joined with a
// record separator to keep conjunction keys disjoint from plain keys.
inline std::uint32_t hash_conjunction(std::string_view ns_a,
                                      std::string_view token_a,
                                      std::string_view ns_b,
                                      std::string_view token_b,
                                      const HashConfig& cfg) {
  cfg.validate();
  detail::check_name_piece(ns_a, "namespace");
  detail::check_name_piece(token_a, "token");
  detail::check_name_piece(ns_b, "namespace");
  detail::check_name_piece(token_b, "token");
  std::string key;
  key.reserve(ns_a.size() + token_a.size() + ns_b.size() + token_b.size() + 3);
  key.append(ns_a);
  key.push_back('\x1f');
  key.append(token_a);
  key.push_back('\x1e');
  key.append(ns_b);
  key.push_back('\x1f');
  key.append(token_b);
  return static_cast<std::uint32_t>(fnv1a64(key) &
                                    ((std::uint64_t{1} << cfg.bits) - 1));
}

struct RawRecord {
  int label = 0;
  // (namespace, token) in input order; namespaces may repeat.
  std::vector<std::pair<std::string, std::string>> tokens;
};

// Parses "<label> |<ns> <token> <token> |<ns> <token> ...".
inline RawRecord parse_raw_line(std::string_view line,
                                std::size_t line_no = 0) {
  const std::string tag =
      line_no > 0 ? "line " + std::to_string(line_no) : "line";
  if (line.empty()) throw parse_error(tag + ": empty line");
  if (line.find('\r') != std::string_view::npos ||
      line.find('\t') != std::string_view::npos)
    throw parse_error(tag + ": stray control character");

  const std::size_t first_pipe = line.find('|');
  if (first_pipe == std::string_view::npos)
    throw parse_error(tag + ": no namespace segments");

  std::string_view label_part = line.substr(0, first_pipe);
  while (!label_part.empty() && label_part.back() == ' ')
    label_part.remove_suffix(1);
  RawRecord record;
  if (label_part == "0")
    record.label = 0;
  else if (label_part == "1")
    record.label = 1;
  else
    throw parse_error(tag + ": label must be 0 or 1, got '" +
                      std::string(label_part) + "'");

  std::size_t seg_start = first_pipe;
  while (seg_start != std::string_view::npos) {
    const std::size_t next_pipe = line.find('|', seg_start + 1);
    std::string_view segment =
        next_pipe == std::string_view::npos
            ? line.substr(seg_start + 1)
            : line.substr(seg_start + 1, next_pipe - seg_start - 1);

    std::string ns;
    bool have_ns = false;
    std::size_t pos = 0;
    while (pos < segment.size()) {
      while (pos < segment.size() && segment[pos] == ' ') ++pos;
      if (pos >= segment.size()) break;
      std::size_t end = segment.find(' ', pos);
      if (end == std::string_view::npos) end = segment.size();
      const std::string_view word = segment.substr(pos, end - pos);
      if (!have_ns) {
        detail::check_name_piece(word, "namespace");
        ns = std::string(word);
        have_ns = true;
      } else {
        detail::check_name_piece(word, "token");
        record.tokens.emplace_back(ns, std::string(word));
      }
      pos = end;
    }
    if (!have_ns)
      throw parse_error(tag + ": namespace segment without a name");
    seg_start = next_pipe;
  }
  if (record.tokens.empty())
    throw parse_error(tag + ": no tokens");
  return record;
}

// Hashes a raw record into a sparse example: each token contributes 1.0 at
// its hashed index, each configured namespace conjunction contributes 1.0
// per token pair, and collisions accumulate additively.
inline Example hash_record(const RawRecord& record, const HashConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::uint32_t, double>> raw;
  for (const auto& [ns, token] : record.tokens)
    raw.emplace_back(hash_feature(ns, token, cfg), 1.0);
  for (const auto& [ns_a, ns_b] : cfg.conjunctions) {
    for (const auto& [na, ta] : record.tokens) {
      if (na != ns_a) continue;
      for (const auto& [nb, tb] : record.tokens) {
        if (nb != ns_b) continue;
        raw.emplace_back(hash_conjunction(na, ta, nb, tb, cfg), 1.0);
      }
    }
  }
  std::sort(raw.begin(), raw.end());
  Example ex;
  ex.label = record.label;
  for (const auto& [index, value] : raw) {
    if (!ex.features.entries.empty() &&
        ex.features.entries.back().first == index)
      ex.features.entries.back().second += value;
    else
      ex.features.entries.emplace_back(index, value);
  }
  return ex;
}

inline Batch hash_raw_file(const std::filesystem::path& path,
                           std::size_t time_index, const HashConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  Batch batch;
  batch.time_index = time_index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    try {
      batch.examples.push_back(hash_record(parse_raw_line(line, line_no), cfg));
    } catch (const parse_error& e) {
      throw parse_error(path.string() + ": " + e.what());
    }
  }
  if (in.bad()) throw io_error("read failure on " + path.string());
  if (batch.examples.empty())
    throw parse_error(path.string() + ": no examples");
  return batch;
}

}  // namespace salbfgs
