#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pfda/error.hpp"
#include "pfda/linalg.hpp"

namespace pfda::experiment {

// 17 significant digits; non-finite values become NA.
inline std::string format_cell(double v) {
  if (!std::isfinite(v)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> indexed_columns(const std::string& stem, Eigen::Index count) {
  std::vector<std::string> out;
  for (Eigen::Index k = 1; k <= count; ++k) out.push_back(stem + "_" + std::to_string(k));
  return out;
}

// Comma-separated, LF-terminated, header row first.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header)
      : out_(path, std::ios::binary), width_(header.size()) {
    if (!out_) throw std::runtime_error("cannot write " + path);
    for (std::size_t k = 0; k < header.size(); ++k) out_ << (k ? "," : "") << header[k];
    out_ << '\n';
  }

  void row(const std::vector<double>& cells) {
    if (cells.size() != width_) throw std::logic_error("csv row width does not match header");
    for (std::size_t k = 0; k < cells.size(); ++k) out_ << (k ? "," : "") << format_cell(cells[k]);
    out_ << '\n';
  }

 private:
  std::ofstream out_;
  std::size_t width_;
};

inline void append(std::vector<double>& row, const Vector& v) {
  for (Eigen::Index k = 0; k < v.size(); ++k) row.push_back(v[k]);
}

struct Table {
  std::vector<std::string> header;
  Matrix values;  // rows x columns
};

// Reads a numeric CSV with a header row. NA and empty cells become NaN.
inline Table read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + " is empty");
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (!cell.empty() && cell.back() == '\r') cell.pop_back();
      cells.push_back(cell);
    }
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  t.header = split(line);
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line);
    if (cells.size() != t.header.size()) {
      throw std::runtime_error(path + ": line " + std::to_string(lineno) + " has the wrong number of cells");
    }
    std::vector<double> r;
    for (const auto& c : cells) {
      if (c.empty() || c == "NA") {
        r.push_back(std::nan(""));
        continue;
      }
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(c, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != c.size()) {
        throw std::runtime_error(path + ": line " + std::to_string(lineno) + ": '" + c + "' is not a number");
      }
      r.push_back(v);
    }
    rows.push_back(std::move(r));
  }
  t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return t;
}

}  // namespace pfda::experiment
