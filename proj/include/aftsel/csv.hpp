#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "aftsel/types.hpp"

namespace aftsel {

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, int line_no, const std::string& col) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("csv line " + std::to_string(line_no) + ": cannot parse '" + s +
                             "' in column '" + col + "'");
  }
}

}  // namespace detail

struct CsvDataset {
  SurvivalDataset data;
  std::vector<std::string> feature_names;
  bool log_applied = false;  // true when the time column was log-transformed on ingestion
};

// Schema: a `time` (or `log_time`) column, a `status` column (1 = event,
// 0 = censored), every other column a feature. `time` is log-transformed on
// ingestion; `log_time` is used as-is.
inline CsvDataset read_survival_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("'" + path + "' is empty");
  const auto header = detail::split_csv_line(line);
  int time_col = -1, status_col = -1;
  bool log_time = false;
  std::vector<int> feature_cols;
  CsvDataset out;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == "time" || header[c] == "log_time") {
      if (time_col >= 0) throw std::runtime_error("duplicate time column");
      time_col = static_cast<int>(c);
      log_time = header[c] == "log_time";
    } else if (header[c] == "status") {
      if (status_col >= 0) throw std::runtime_error("duplicate status column");
      status_col = static_cast<int>(c);
    } else {
      feature_cols.push_back(static_cast<int>(c));
      out.feature_names.push_back(header[c]);
    }
  }
  if (time_col < 0) throw std::runtime_error("missing required column 'time' (or 'log_time')");
  if (status_col < 0) throw std::runtime_error("missing required column 'status'");

  std::vector<double> y;
  std::vector<int> delta;
  std::vector<double> xflat;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw std::runtime_error("csv line " + std::to_string(line_no) + ": expected " +
                               std::to_string(header.size()) + " fields, got " +
                               std::to_string(cells.size()));
    double t = detail::parse_double(cells[static_cast<std::size_t>(time_col)], line_no,
                                    log_time ? "log_time" : "time");
    if (!log_time) {
      if (!(t > 0))
        throw std::runtime_error("csv line " + std::to_string(line_no) +
                                 ": time must be positive to take logs");
      t = std::log(t);
    }
    const double s = detail::parse_double(cells[static_cast<std::size_t>(status_col)], line_no, "status");
    if (s != 0.0 && s != 1.0)
      throw std::runtime_error("csv line " + std::to_string(line_no) + ": status must be 0 or 1");
    y.push_back(t);
    delta.push_back(static_cast<int>(s));
    for (int c : feature_cols)
      xflat.push_back(detail::parse_double(cells[static_cast<std::size_t>(c)], line_no,
                                           header[static_cast<std::size_t>(c)]));
  }
  const Index n = static_cast<Index>(y.size());
  const Index p = static_cast<Index>(feature_cols.size());
  out.data.y.resize(n);
  out.data.delta.resize(n);
  out.data.x.resize(n, p);
  for (Index i = 0; i < n; ++i) {
    out.data.y[i] = y[static_cast<std::size_t>(i)];
    out.data.delta[i] = delta[static_cast<std::size_t>(i)];
    for (Index j = 0; j < p; ++j) out.data.x(i, j) = xflat[static_cast<std::size_t>(i * p + j)];
  }
  out.log_applied = !log_time;
  out.data.validate();
  return out;
}

// one integer group label per feature, line by line
inline std::vector<int> read_groups_file(const std::string& path, Index p) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open groups file '" + path + "'");
  std::vector<int> groups;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      groups.push_back(std::stoi(line));
    } catch (const std::exception&) {
      throw std::runtime_error("groups file line " + std::to_string(line_no) + ": not an integer");
    }
  }
  if (static_cast<Index>(groups.size()) != p)
    throw std::runtime_error("groups file has " + std::to_string(groups.size()) +
                             " labels but the dataset has " + std::to_string(p) + " features");
  return groups;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << content;
}

inline std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace aftsel
