#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "salbfgs/text_format.hpp"
#include "salbfgs/types.hpp"

namespace salbfgs {

// One aggregation row: click/impression counts for a namespaced id shown in
// a particular (position, depth) display cell.
struct CtrRecord {
  std::string ns;
  std::string token;
  std::uint32_t position = 0;
  std::uint32_t depth = 0;
  std::uint64_t clicks = 0;
  std::uint64_t impressions = 0;
};

struct CtrConfig {
  double alpha = 0.05;  // pseudo-clicks
  double beta = 75.0;   // pseudo-impressions

  void validate() const {
    if (!(alpha > 0.0) || !(beta > 0.0) || !(alpha < beta))
      throw config_error("need 0 < alpha < beta");
  }
};

// Position-normalized smoothed click-through rates per "ns:token" key.
//
// Impressions in a display cell with baseline click-through rate r are worth
// r / global_rate raw impressions, so an id shown only in a strong position
// is not overrated. The normalized impression mass of a record is floored at
// its click count, and the final rate is smoothed toward alpha/beta.
inline std::map<std::string, double> aggregate_ctr(
    std::span<const CtrRecord> records, const CtrConfig& cfg = {}) {
  cfg.validate();
  std::uint64_t total_clicks = 0;
  std::uint64_t total_impressions = 0;
  for (const CtrRecord& r : records) {
    if (r.ns.empty() || r.token.empty())
      throw parse_error("aggregation row with empty namespace or token");
    if (r.clicks > r.impressions)
      throw parse_error("aggregation row for " + r.ns + ":" + r.token +
                        " has more clicks than impressions");
    total_clicks += r.clicks;
    total_impressions += r.impressions;
  }
  if (total_impressions == 0)
    throw undefined_metric_error("no impressions to aggregate");
  const double global_rate = static_cast<double>(total_clicks) /
                             static_cast<double>(total_impressions);

  std::map<std::pair<std::uint32_t, std::uint32_t>,
           std::pair<std::uint64_t, std::uint64_t>>
      cells;  // (position, depth) -> (clicks, impressions)
  for (const CtrRecord& r : records) {
    auto& cell = cells[{r.position, r.depth}];
    cell.first += r.clicks;
    cell.second += r.impressions;
  }
  auto cell_weight = [&](std::uint32_t position, std::uint32_t depth) {
    const auto& cell = cells.at({position, depth});
    if (cell.second == 0 || global_rate == 0.0) return 1.0;
    const double cell_rate = static_cast<double>(cell.first) /
                             static_cast<double>(cell.second);
    return cell_rate / global_rate;
  };

  struct Tally {
    double clicks = 0.0;
    double effective = 0.0;
  };
  std::map<std::string, Tally> tallies;
  for (const CtrRecord& r : records) {
    Tally& tally = tallies[r.ns + ":" + r.token];
    tally.clicks += static_cast<double>(r.clicks);
    const double normalized = static_cast<double>(r.impressions) *
                              cell_weight(r.position, r.depth);
    tally.effective +=
        std::max(normalized, static_cast<double>(r.clicks));
  }

  std::map<std::string, double> out;
  for (const auto& [key, tally] : tallies)
    out[key] = (tally.clicks + cfg.alpha) / (tally.effective + cfg.beta);
  return out;
}

// Table text format: "<ns>:<token> <ctr>" per line, keys sorted.
inline void write_ctr_table(const std::filesystem::path& path,
                            const std::map<std::string, double>& table) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw io_error("cannot write " + tmp.string());
    for (const auto& [key, value] : table)
      out << key << ' ' << format_double(value) << '\n';
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

inline std::map<std::string, double> read_ctr_table(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  std::map<std::string, double> table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string tag = path.string() + ":" + std::to_string(line_no);
    const std::size_t space = line.find(' ');
    if (space == std::string::npos || space == 0 || space + 1 >= line.size())
      throw parse_error(tag + ": expected '<ns>:<token> <ctr>'");
    const std::string key = line.substr(0, space);
    if (key.find(':') == std::string::npos)
      throw parse_error(tag + ": key must look like ns:token");
    const double value = parse_double_strict(line.substr(space + 1), tag);
    if (!(value > 0.0 && value < 1.0))
      throw parse_error(tag + ": rate must lie in (0, 1)");
    if (!table.emplace(key, value).second)
      throw parse_error(tag + ": duplicate key " + key);
  }
  if (in.bad()) throw io_error("read failure on " + path.string());
  return table;
}

}  // namespace salbfgs
