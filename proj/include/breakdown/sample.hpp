#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "breakdown/errors.hpp"

namespace breakdown {

// Observations {d_i, d_i*y_i, x_i}: y is recorded only on complete rows
// (d=1), x is always observed. x cells are kept both as numeric values (NaN
// for non-numeric categories) and as canonical strings so support matching
// uses exact cell equality rather than float comparison.
struct Sample {
  int n = 0;
  int d_y = 0;
  int d_x = 0;
  std::vector<std::uint8_t> d;
  Eigen::MatrixXd y;                        // n x d_y, NaN where d=0
  Eigen::MatrixXd x;                        // n x d_x, NaN for text cells
  std::vector<std::vector<std::string>> x_cells;  // raw x cells, n rows
  double p_hat = 0.0;
  int n1 = 0;
  int n0 = 0;

  std::string x_key(int i) const {
    std::string key;
    for (int j = 0; j < d_x; ++j) {
      if (j > 0) key.push_back('\x1f');
      key += x_cells[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    return key;
  }
};

namespace detail {

inline std::optional<double> parse_double(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  const char* begin = cell.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end != begin + cell.size()) return std::nullopt;
  return v;
}

inline std::string canonical_cell(double v) {
  if (std::isfinite(v) && v == std::floor(v) && std::fabs(v) < 9.0e15) {
    return std::to_string(static_cast<long long>(v));
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

// Finalizes counts and validates the core invariant p_hat in (0,1). DGPs and
// tests build samples through this after filling the data members.
inline void finalize_sample(Sample& s) {
  s.n1 = 0;
  for (auto di : s.d) s.n1 += di;
  s.n0 = s.n - s.n1;
  if (s.n1 == 0 || s.n0 == 0) {
    throw_input("degenerate-missingness",
                "sample must contain both complete and incomplete rows (0 < p_hat < 1)");
  }
  s.p_hat = static_cast<double>(s.n1) / static_cast<double>(s.n);
  if (s.x_cells.empty() && s.d_x > 0) {
    s.x_cells.resize(static_cast<std::size_t>(s.n));
    for (int i = 0; i < s.n; ++i) {
      auto& row = s.x_cells[static_cast<std::size_t>(i)];
      row.resize(static_cast<std::size_t>(s.d_x));
      for (int j = 0; j < s.d_x; ++j) row[static_cast<std::size_t>(j)] = detail::canonical_cell(s.x(i, j));
    }
  }
}

// CSV schema: header row with columns "d", "y1".."y{d_y}", "x1".."x{d_x}";
// comma-delimited, '.' decimal point; y cells blank exactly on d=0 rows.
inline Sample load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_input("file-open", "cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw_input("csv-header", "empty file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(detail::trim(cell));
    if (!line.empty() && line.back() == ',') header.push_back("");
  }
  int d_col = -1;
  std::map<int, int> y_cols, x_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& name = header[c];
    if (name == "d") {
      if (d_col >= 0) throw_input("csv-header", "duplicate column d");
      d_col = static_cast<int>(c);
    } else if (name.size() > 1 && (name[0] == 'y' || name[0] == 'x')) {
      int idx = 0;
      try {
        std::size_t used;
        idx = std::stoi(name.substr(1), &used);
        if (used + 1 != name.size()) throw std::invalid_argument(name);
      } catch (const std::exception&) {
        throw_input("csv-header", "unrecognized column name: " + name);
      }
      auto& cols = name[0] == 'y' ? y_cols : x_cols;
      if (!cols.emplace(idx, static_cast<int>(c)).second) {
        throw_input("csv-header", "duplicate column " + name);
      }
    } else {
      throw_input("csv-header", "unrecognized column name: " + name);
    }
  }
  if (d_col < 0) throw_input("csv-header", "missing column d");
  auto check_contiguous = [](const std::map<int, int>& cols, char prefix) {
    int expect = 1;
    for (const auto& [idx, col] : cols) {
      if (idx != expect++) {
        throw_input("csv-header", std::string("columns ") + prefix + "1.. must be contiguous");
      }
      (void)col;
    }
  };
  check_contiguous(y_cols, 'y');
  check_contiguous(x_cols, 'x');

  Sample s;
  s.d_y = static_cast<int>(y_cols.size());
  s.d_x = static_cast<int>(x_cols.size());

  std::vector<std::vector<std::string>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(detail::trim(cell));
    if (!line.empty() && line.back() == ',') cells.push_back("");
    if (cells.size() != header.size()) {
      throw_input("csv-row", "row " + std::to_string(line_no) + " has wrong cell count");
    }
    rows.push_back(std::move(cells));
  }
  s.n = static_cast<int>(rows.size());
  if (s.n == 0) throw_input("csv-row", "file has no data rows: " + path);

  s.d.resize(static_cast<std::size_t>(s.n));
  s.y.resize(s.n, s.d_y);
  s.x.resize(s.n, s.d_x);
  s.x_cells.resize(static_cast<std::size_t>(s.n));
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int i = 0; i < s.n; ++i) {
    const auto& cells = rows[static_cast<std::size_t>(i)];
    const std::string& dc = cells[static_cast<std::size_t>(d_col)];
    if (dc != "0" && dc != "1") {
      throw_input("csv-row", "row " + std::to_string(i + 2) + ": d must be 0 or 1");
    }
    const bool complete = dc == "1";
    s.d[static_cast<std::size_t>(i)] = complete ? 1 : 0;
    int jy = 0;
    for (const auto& [idx, col] : y_cols) {
      (void)idx;
      const std::string& yc = cells[static_cast<std::size_t>(col)];
      if (complete) {
        const auto v = detail::parse_double(yc);
        if (!v) {
          throw_input("csv-row",
                      "row " + std::to_string(i + 2) + ": complete row with missing/invalid y cell");
        }
        s.y(i, jy) = *v;
      } else {
        if (!yc.empty()) {
          throw_input("csv-row", "row " + std::to_string(i + 2) + ": incomplete row carries y data");
        }
        s.y(i, jy) = nan;
      }
      ++jy;
    }
    auto& key_cells = s.x_cells[static_cast<std::size_t>(i)];
    key_cells.resize(static_cast<std::size_t>(s.d_x));
    int jx = 0;
    for (const auto& [idx, col] : x_cols) {
      (void)idx;
      const std::string& xc = cells[static_cast<std::size_t>(col)];
      if (xc.empty()) {
        throw_input("csv-row", "row " + std::to_string(i + 2) + ": x cell must not be blank");
      }
      const auto v = detail::parse_double(xc);
      s.x(i, jx) = v ? *v : nan;
      key_cells[static_cast<std::size_t>(jx)] = xc;
      ++jx;
    }
  }
  finalize_sample(s);
  return s;
}

inline void save_csv(const Sample& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw_input("file-open", "cannot open " + path + " for writing");
  out << "d";
  for (int j = 1; j <= s.d_y; ++j) out << ",y" << j;
  for (int j = 1; j <= s.d_x; ++j) out << ",x" << j;
  out << "\n";
  char buf[32];
  for (int i = 0; i < s.n; ++i) {
    out << static_cast<int>(s.d[static_cast<std::size_t>(i)]);
    for (int j = 0; j < s.d_y; ++j) {
      out << ',';
      if (s.d[static_cast<std::size_t>(i)]) {
        std::snprintf(buf, sizeof(buf), "%.17g", s.y(i, j));
        out << buf;
      }
    }
    for (int j = 0; j < s.d_x; ++j) {
      out << ',' << s.x_cells[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    out << "\n";
  }
}

// Support bookkeeping for the always-observed variables: sorted unique keys,
// the per-row code, and per-group counts.
struct SupportInfo {
  std::vector<std::string> keys;
  std::vector<Eigen::VectorXd> values;  // representative numeric x per key (NaN for text)
  std::vector<int> row_code;
  std::vector<int> count1, count0;

  int K() const { return static_cast<int>(keys.size()); }
  bool equal_across_groups() const {
    for (std::size_t k = 0; k < keys.size(); ++k) {
      if (count1[k] == 0 || count0[k] == 0) return false;
    }
    return true;
  }
};

// Enumerates X support cells by exact cell-string equality. When
// `require_integral` is set (full-support mode), numeric x cells must be
// integer-valued; floating categorical levels are rejected.
inline SupportInfo enumerate_support(const Sample& s, bool require_integral = true) {
  if (s.d_x == 0) throw_input("x-empty", "sample has no x columns");
  SupportInfo info;
  std::map<std::string, int> index;
  info.row_code.resize(static_cast<std::size_t>(s.n));
  for (int i = 0; i < s.n; ++i) {
    if (require_integral) {
      for (int j = 0; j < s.d_x; ++j) {
        const double v = s.x(i, j);
        if (std::isfinite(v) && v != std::floor(v)) {
          throw_input("support-not-integral",
                      "full-support mode requires integer-valued or text x cells");
        }
      }
    }
    const std::string key = s.x_key(i);
    auto [it, inserted] = index.emplace(key, 0);
    if (inserted) it->second = -1;  // assigned after sorting
  }
  int k = 0;
  for (auto& [key, code] : index) {
    code = k++;
    info.keys.push_back(key);
  }
  info.count1.assign(info.keys.size(), 0);
  info.count0.assign(info.keys.size(), 0);
  info.values.resize(info.keys.size());
  for (int i = 0; i < s.n; ++i) {
    const int code = index[s.x_key(i)];
    info.row_code[static_cast<std::size_t>(i)] = code;
    if (s.d[static_cast<std::size_t>(i)]) {
      ++info.count1[static_cast<std::size_t>(code)];
    } else {
      ++info.count0[static_cast<std::size_t>(code)];
    }
    if (info.values[static_cast<std::size_t>(code)].size() == 0) {
      info.values[static_cast<std::size_t>(code)] = s.x.row(i).transpose();
    }
  }
  return info;
}

// Identified selection lower bound: H^2 between the X marginals of the two
// completeness groups, 1 - sum_k sqrt(P(x_k|D=0) P(x_k|D=1)). Support cells
// present in only one group contribute zero to the Bhattacharyya sum and are
// reported back to the caller.
struct HellingerBound {
  double value = 0.0;
  std::vector<std::string> one_sided_cells;
};

inline HellingerBound hellinger_lower_bound(const Sample& s) {
  if (s.d_x == 0) {
    throw_input("x-empty", "hellinger lower bound needs at least one x column");
  }
  const SupportInfo info = enumerate_support(s, false);
  double bc = 0.0;
  HellingerBound out;
  for (int k = 0; k < info.K(); ++k) {
    const double p1 = static_cast<double>(info.count1[static_cast<std::size_t>(k)]) / s.n1;
    const double p0 = static_cast<double>(info.count0[static_cast<std::size_t>(k)]) / s.n0;
    if (p1 == 0.0 || p0 == 0.0) {
      out.one_sided_cells.push_back(info.keys[static_cast<std::size_t>(k)]);
      continue;
    }
    bc += std::sqrt(p1 * p0);
  }
  out.value = 1.0 - bc;
  return out;
}

// Both sides of the squared-Hellinger interpretation identity for a finite
// joint distribution over (z, d): the direct H^2(P0, P1) and
// 1 - E[sqrt(Var(D|Z))]/sqrt(Var(D)). Used as a property-test oracle.
inline std::pair<double, double> hellinger_from_joint(const Eigen::VectorXd& mass_d1,
                                                      const Eigen::VectorXd& mass_d0) {
  if (mass_d1.size() != mass_d0.size()) {
    throw_input("joint-shape", "the two mass vectors must have equal length");
  }
  const double p1 = mass_d1.sum();
  const double p0 = mass_d0.sum();
  if (std::fabs(p1 + p0 - 1.0) > 1e-12) throw_input("joint-mass", "joint must sum to 1");
  if (p1 <= 0.0 || p0 <= 0.0) throw_input("joint-degenerate", "need 0 < P(D=1) < 1");
  double bc = 0.0;
  double e_sd = 0.0;
  for (Eigen::Index z = 0; z < mass_d1.size(); ++z) {
    const double m = mass_d1[z] + mass_d0[z];
    if (m <= 0.0) throw_input("joint-empty-atom", "atom with zero marginal mass");
    bc += std::sqrt((mass_d0[z] / p0) * (mass_d1[z] / p1));
    const double pi = mass_d1[z] / m;
    e_sd += m * std::sqrt(pi * (1.0 - pi));
  }
  const double direct = 1.0 - bc;
  const double via_variance = 1.0 - e_sd / std::sqrt(p1 * p0);
  return {direct, via_variance};
}

}  // namespace breakdown
