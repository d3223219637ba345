#pragma once

// CSV emission and parsing for metric traces and small result tables.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "awt/data.hpp"
#include "awt/harness/errors.hpp"

namespace awt::harness {

/// Seed and config hash written as a leading `#` comment line.
struct Provenance {
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string provenance_line(const Provenance& p) {
  char buf[80];
  std::snprintf(buf, sizeof buf, "# seed=%llu config_hash=%016llx",
                static_cast<unsigned long long>(p.seed),
                static_cast<unsigned long long>(p.config_hash));
  return buf;
}

inline void write_metrics(std::ostream& os, const MetricsTrace& trace,
                          const std::optional<Provenance>& prov = std::nullopt) {
  if (trace.empty()) throw std::invalid_argument("emit_metrics: empty trace");
  if (prov) os << provenance_line(*prov) << '\n';
  os << "step";
  for (const auto& n : trace.names()) os << ',' << n;
  os << '\n';
  for (const auto& r : trace.records()) {
    os << r.index;
    for (const auto& n : trace.names()) {
      os << ',';
      if (auto v = r.get(n)) os << format_real(*v);
    }
    os << '\n';
  }
}

inline void emit_metrics(const MetricsTrace& trace, const std::string& path,
                         const std::optional<Provenance>& prov = std::nullopt) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  write_metrics(os, trace, prov);
  if (!os.flush()) throw IoError("write failed: " + path);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

/// Inverse of write_metrics; `#` lines are skipped and empty cells omitted.
inline MetricsTrace read_metrics(std::istream& is) {
  std::string line;
  std::vector<std::string> header;
  MetricsTrace trace;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto cells = detail::split_csv_line(line);
    if (header.empty()) {
      if (cells.empty() || cells[0] != "step") throw FormatError("metrics header: missing step column");
      header = std::move(cells);
      continue;
    }
    if (cells.size() != header.size())
      throw FormatError("metrics row: expected " + std::to_string(header.size()) + " cells, got " +
                        std::to_string(cells.size()));
    std::vector<std::pair<std::string, double>> vals;
    for (std::size_t j = 1; j < cells.size(); ++j)
      if (!cells[j].empty()) vals.emplace_back(header[j], std::stod(cells[j]));
    trace.add(std::stoull(cells[0]), std::move(vals));
  }
  if (header.empty()) throw FormatError("metrics header: missing");
  return trace;
}

inline MetricsTrace load_metrics(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  return read_metrics(is);
}

/// A table with a leading text column (row name) followed by numeric columns;
/// missing values are written as empty cells.
struct Table {
  std::vector<std::string> columns;  // includes the leading name column
  std::vector<std::pair<std::string, std::vector<std::optional<double>>>> rows;
};

inline void emit_table(const Table& t, const std::string& path,
                       const std::optional<Provenance>& prov = std::nullopt) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  if (prov) os << provenance_line(*prov) << '\n';
  for (std::size_t j = 0; j < t.columns.size(); ++j) os << (j ? "," : "") << t.columns[j];
  os << '\n';
  for (const auto& [name, vals] : t.rows) {
    if (vals.size() + 1 != t.columns.size())
      throw std::invalid_argument("table row '" + name + "' has the wrong width");
    os << name;
    for (const auto& v : vals) {
      os << ',';
      if (v) os << format_real(*v);
    }
    os << '\n';
  }
  if (!os.flush()) throw IoError("write failed: " + path);
}

}  // namespace awt::harness
