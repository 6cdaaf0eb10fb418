#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>

#include "salbfgs/text_format.hpp"
#include "salbfgs/types.hpp"

namespace salbfgs {

struct ModelFile {
  ParameterVector theta;
  unsigned hash_bits = 0;  // 0 when the model was not feature-hashed
};

// Text model format: one header line
//   salbfgs-model v1 dim=<l> bits=<b>
// followed by "index value" lines for the nonzero weights, in index order.
inline void write_model(const std::filesystem::path& path,
                        const ParameterVector& theta, unsigned hash_bits) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw io_error("cannot write " + tmp.string());
    out << "salbfgs-model v1 dim=" << theta.size() << " bits=" << hash_bits
        << '\n';
    for (std::size_t i = 0; i < theta.size(); ++i)
      if (theta[i] != 0.0)
        out << i << ' ' << format_double(theta[i]) << '\n';
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

inline ModelFile read_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header))
    throw parse_error(path.string() + ": missing header");

  const std::string prefix = "salbfgs-model v1 dim=";
  if (header.rfind(prefix, 0) != 0)
    throw parse_error(path.string() + ": bad header '" + header + "'");
  const std::size_t bits_pos = header.find(" bits=");
  if (bits_pos == std::string::npos)
    throw parse_error(path.string() + ": bad header '" + header + "'");
  const std::string dim_text =
      header.substr(prefix.size(), bits_pos - prefix.size());
  const std::string bits_text = header.substr(bits_pos + 6);
  const std::uint32_t dim = parse_u32_strict(dim_text, path.string());
  const std::uint32_t bits = parse_u32_strict(bits_text, path.string());

  ModelFile model;
  model.hash_bits = bits;
  model.theta.assign(dim, 0.0);
  std::string line;
  std::size_t line_no = 1;
  std::int64_t prev_index = -1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string tag = path.string() + ":" + std::to_string(line_no);
    const std::size_t space = line.find(' ');
    if (space == std::string::npos || space == 0 || space + 1 >= line.size())
      throw parse_error(tag + ": expected 'index value'");
    const std::uint32_t index = parse_u32_strict(line.substr(0, space), tag);
    const double value = parse_double_strict(line.substr(space + 1), tag);
    if (index >= dim)
      throw parse_error(tag + ": index " + std::to_string(index) +
                        " out of range for dim " + std::to_string(dim));
    if (static_cast<std::int64_t>(index) <= prev_index)
      throw parse_error(tag + ": indices must be strictly increasing");
    if (!std::isfinite(value))
      throw parse_error(tag + ": weight must be finite");
    model.theta[index] = value;
    prev_index = index;
  }
  if (in.bad()) throw io_error("read failure on " + path.string());
  return model;
}

}  // namespace salbfgs
