#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "salbfgs/types.hpp"

namespace salbfgs {

// Canonical, locale-independent float text: shortest round-trip decimal.
inline std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

inline double parse_double_strict(std::string_view text,
                                  const std::string& what) {
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(),
                                   value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw parse_error(what + ": bad number '" + std::string(text) + "'");
  return value;
}

inline std::uint32_t parse_u32_strict(std::string_view text,
                                      const std::string& what) {
  std::uint32_t value = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(),
                                   value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw parse_error(what + ": bad integer '" + std::string(text) + "'");
  return value;
}

namespace detail {

inline std::string line_tag(std::size_t line_no) {
  return line_no > 0 ? "line " + std::to_string(line_no) : "line";
}

// Splits on single spaces; empty fields (leading, trailing, or doubled
// separators) are malformed.
inline std::vector<std::string_view> split_strict(std::string_view line,
                                                  std::size_t line_no) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(' ', start);
    const std::string_view field = pos == std::string_view::npos
                                       ? line.substr(start)
                                       : line.substr(start, pos - start);
    if (field.empty())
      throw parse_error(line_tag(line_no) + ": empty field (check spacing)");
    for (char c : field)
      if (c == '\t' || c == '\r' || c == '\n')
        throw parse_error(line_tag(line_no) + ": stray control character");
    fields.push_back(field);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

}  // namespace detail

// Parses "<label> <index>:<value> ..." with a 0/1 label, strictly increasing
// indices, and finite nonzero values.
inline Example parse_indexed_line(std::string_view line,
                                  std::size_t line_no = 0) {
  const std::string tag = detail::line_tag(line_no);
  if (line.empty()) throw parse_error(tag + ": empty line");
  const auto fields = detail::split_strict(line, line_no);

  Example ex;
  if (fields[0] == "0")
    ex.label = 0;
  else if (fields[0] == "1")
    ex.label = 1;
  else
    throw parse_error(tag + ": label must be 0 or 1, got '" +
                      std::string(fields[0]) + "'");

  std::int64_t prev_index = -1;
  for (std::size_t i = 1; i < fields.size(); ++i) {
    const std::string_view field = fields[i];
    const std::size_t colon = field.find(':');
    if (colon == std::string_view::npos || colon == 0 ||
        colon + 1 >= field.size())
      throw parse_error(tag + ": feature must look like index:value, got '" +
                        std::string(field) + "'");
    const std::uint32_t index =
        parse_u32_strict(field.substr(0, colon), tag);
    const double value = parse_double_strict(field.substr(colon + 1), tag);
    if (static_cast<std::int64_t>(index) <= prev_index)
      throw parse_error(tag + ": feature indices must be strictly increasing");
    if (!std::isfinite(value))
      throw parse_error(tag + ": feature value must be finite");
    if (value == 0.0)
      throw parse_error(tag + ": zero feature values must be omitted");
    ex.features.entries.emplace_back(index, value);
    prev_index = index;
  }
  return ex;
}

inline std::string serialize_example(const Example& ex) {
  std::string out = ex.label > 0 ? "1" : "0";
  for (const auto& [index, value] : ex.features.entries) {
    out += ' ';
    out += std::to_string(index);
    out += ':';
    out += format_double(value);
  }
  return out;
}

inline Batch read_batch_file(const std::filesystem::path& path,
                             std::size_t time_index) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  Batch batch;
  batch.time_index = time_index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    try {
      batch.examples.push_back(parse_indexed_line(line, line_no));
    } catch (const parse_error& e) {
      throw parse_error(path.string() + ": " + e.what());
    }
  }
  if (in.bad()) throw io_error("read failure on " + path.string());
  if (batch.examples.empty())
    throw parse_error(path.string() + ": no examples");
  return batch;
}

inline std::string batch_file_name(std::size_t time_index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "batch_%05zu.txt", time_index);
  return buf;
}

// Writes via a temporary in the same directory, renamed into place, so a
// failure never leaves a partial batch file behind.
inline void write_batch_file(const std::filesystem::path& path,
                             const Batch& batch) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw io_error("cannot write " + tmp.string());
    for (const Example& ex : batch.examples)
      out << serialize_example(ex) << '\n';
    out.flush();
    if (!out) throw io_error("write failure on " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw io_error("cannot rename " + tmp.string() + " to " + path.string());
  }
}

// Reads batch_00000.txt .. batch_<t_f>.txt from a directory. Batch-like file
// names that do not match the fixed-width pattern, and gaps in the index
// sequence, are sequencing errors.
inline Stream read_batch_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw io_error("not a directory: " + dir.string());
  std::vector<std::size_t> indices;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("batch_", 0) != 0) continue;
    bool well_formed = name.size() == 15 && name.substr(11) == ".txt";
    if (well_formed)
      for (std::size_t i = 6; i < 11; ++i)
        if (name[i] < '0' || name[i] > '9') well_formed = false;
    if (!well_formed)
      throw sequencing_error("unexpected batch file name: " + name);
    indices.push_back(std::stoul(name.substr(6, 5)));
  }
  if (indices.empty())
    throw io_error("no batch files in " + dir.string());
  std::sort(indices.begin(), indices.end());
  for (std::size_t i = 0; i < indices.size(); ++i)
    if (indices[i] != i)
      throw sequencing_error("batch files are not contiguous from 0 in " +
                             dir.string() + " (missing batch " +
                             std::to_string(i) + ")");
  Stream stream;
  stream.batches.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i)
    stream.batches.push_back(read_batch_file(dir / batch_file_name(i), i));
  return stream;
}

inline void write_stream(const std::filesystem::path& dir,
                         const Stream& stream) {
  std::filesystem::create_directories(dir);
  for (const Batch& batch : stream.batches)
    write_batch_file(dir / batch_file_name(batch.time_index), batch);
}

}  // namespace salbfgs
