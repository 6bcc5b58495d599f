#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "bagcal/error.hpp"
#include "bagcal/matrixops.hpp"

namespace bagcal::cli {

inline constexpr std::string_view kCli = "cli";

struct Diagnostics {
  Index rows = 0;
  Index aux_columns = 0;
  Index response_columns = 0;
  std::vector<std::string> binary_columns;
  std::vector<std::string> ignored_columns;
  bool has_inclusion_probs = false;
};

/// A unit-level file: first column unit ids, "x_" auxiliaries, "y_"
/// responses, optional "pi" inclusion probabilities. Names keep their prefix.
/// Lines starting with '#' are metadata and skipped.
struct Dataset {
  std::vector<std::string> ids;
  DataMatrix aux;
  std::vector<std::string> response_names;
  Matrix responses;
  std::optional<Vector> inclusion_probs;
  Diagnostics diagnostics;

  Index rows() const noexcept { return static_cast<Index>(ids.size()); }

  /// True when every unit was observed with certainty (no pi column, or pi = 1).
  bool is_census() const {
    return !inclusion_probs || (inclusion_probs->array() == 1.0).all();
  }
};

/// Shortest decimal form that round-trips a double ("%.17g").
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] inline void parse_error(Index line, Index column, const std::string& what) {
  throw Error(kCli, Errc::ParseError, "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what);
}

/// Splits one CSV record; double quotes protect commas, "" escapes a quote.
inline std::vector<std::string> split_record(const std::string& line, Index line_no) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
      was_quoted = true;
    } else if (ch == ',') {
      out.push_back(was_quoted ? cell : trim(cell));
      cell.clear();
      was_quoted = false;
    } else {
      cell.push_back(ch);
    }
  }
  if (quoted) parse_error(line_no, static_cast<Index>(out.size()) + 1, "unterminated quoted field");
  out.push_back(was_quoted ? cell : trim(cell));
  return out;
}

inline std::optional<double> parse_number(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline bool is_missing_token(const std::string& s) {
  return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan" || s == "." || s == "?";
}

}  // namespace detail

/// Parses a unit-level CSV. Errors name the line (1-based, header = 1) and
/// column (1-based).
inline Dataset parse_csv(std::istream& in) {
  std::string line;
  Index line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (!t.empty() && t[0] != '#') {
      header = detail::split_record(line, line_no);
      break;
    }
  }
  if (header.empty()) detail::parse_error(1, 1, "missing header row");
  const Index header_line = line_no;

  enum class Role { id, aux, response, pi, ignored };
  std::vector<Role> roles(header.size(), Role::ignored);
  Dataset ds;
  std::vector<Index> aux_cols, resp_cols;
  Index pi_col = -1;
  bool any_tagged = false;
  for (std::size_t j = 0; j < header.size(); ++j) {
    const std::string& h = header[j];
    if (h.empty()) detail::parse_error(header_line, static_cast<Index>(j) + 1, "empty column name");
    if (j == 0) {
      roles[j] = Role::id;
    } else if (h.rfind("x_", 0) == 0 && h.size() > 2) {
      roles[j] = Role::aux;
      aux_cols.push_back(static_cast<Index>(j));
      ds.aux.column_names.push_back(h);
      any_tagged = true;
    } else if (h.rfind("y_", 0) == 0 && h.size() > 2) {
      roles[j] = Role::response;
      resp_cols.push_back(static_cast<Index>(j));
      ds.response_names.push_back(h);
      any_tagged = true;
    } else if (h == "pi") {
      if (pi_col >= 0) detail::parse_error(header_line, static_cast<Index>(j) + 1, "duplicate pi column");
      roles[j] = Role::pi;
      pi_col = static_cast<Index>(j);
      any_tagged = true;
    } else {
      ds.diagnostics.ignored_columns.push_back(h);
    }
  }
  {
    std::set<std::string> seen;
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (!seen.insert(header[j]).second) {
        detail::parse_error(header_line, static_cast<Index>(j) + 1, "duplicate column name '" + header[j] + "'");
      }
    }
  }
  if (!any_tagged) {
    // A numeric first record is data, not a header.
    const bool numeric = header.size() > 1 && detail::parse_number(header[1]).has_value();
    detail::parse_error(header_line, numeric ? 2 : 1,
                        numeric ? "missing header row" : "header has no x_, y_ or pi columns");
  }

  std::vector<std::vector<double>> aux(aux_cols.size()), resp(resp_cols.size());
  std::vector<double> pi;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (const std::string t = detail::trim(line); t.empty() || t[0] == '#') continue;
    const std::vector<std::string> cells = detail::split_record(line, line_no);
    if (cells.size() != header.size()) {
      detail::parse_error(line_no, static_cast<Index>(std::min(cells.size(), header.size())) + 1,
                          "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(cells.size()));
    }
    if (cells[0].empty()) detail::parse_error(line_no, 1, "empty unit id");
    if (!ids.insert(cells[0]).second) {
      throw Error(kCli, Errc::DuplicateUnitId, "unit id '" + cells[0] + "' repeated on line " + std::to_string(line_no));
    }
    ds.ids.push_back(cells[0]);
    auto number = [&](std::size_t j) {
      const std::string& cell = cells[j];
      const std::string where = "line " + std::to_string(line_no) + ", column " + std::to_string(j + 1) + " (" + header[j] + ")";
      if (detail::is_missing_token(cell)) throw Error(kCli, Errc::MissingValue, where + ": missing value");
      const auto v = detail::parse_number(cell);
      if (!v) throw Error(kCli, Errc::NonNumericCell, where + ": '" + cell + "' is not a number");
      return *v;
    };
    for (std::size_t a = 0; a < aux_cols.size(); ++a) aux[a].push_back(number(static_cast<std::size_t>(aux_cols[a])));
    for (std::size_t r = 0; r < resp_cols.size(); ++r) resp[r].push_back(number(static_cast<std::size_t>(resp_cols[r])));
    if (pi_col >= 0) {
      const double p = number(static_cast<std::size_t>(pi_col));
      if (!(p > 0.0 && p <= 1.0)) {
        throw Error(kCli, Errc::OutOfRange,
                    "line " + std::to_string(line_no) + ": inclusion probability " + cells[static_cast<std::size_t>(pi_col)] +
                        " outside (0, 1]");
      }
      pi.push_back(p);
    }
  }

  const auto n = static_cast<Index>(ds.ids.size());
  ds.aux.values.resize(n, static_cast<Index>(aux_cols.size()));
  for (std::size_t a = 0; a < aux.size(); ++a) {
    bool binary = n > 0;
    for (Index k = 0; k < n; ++k) {
      const double v = aux[a][static_cast<std::size_t>(k)];
      ds.aux.values(k, static_cast<Index>(a)) = v;
      binary = binary && (v == 0.0 || v == 1.0);
    }
    if (binary) ds.diagnostics.binary_columns.push_back(ds.aux.column_names[a]);
  }
  ds.responses.resize(n, static_cast<Index>(resp_cols.size()));
  for (std::size_t r = 0; r < resp.size(); ++r) {
    for (Index k = 0; k < n; ++k) ds.responses(k, static_cast<Index>(r)) = resp[r][static_cast<std::size_t>(k)];
  }
  if (pi_col >= 0) ds.inclusion_probs = Eigen::Map<const Vector>(pi.data(), n);
  ds.diagnostics.rows = n;
  ds.diagnostics.aux_columns = static_cast<Index>(aux_cols.size());
  ds.diagnostics.response_columns = static_cast<Index>(resp_cols.size());
  ds.diagnostics.has_inclusion_probs = pi_col >= 0;
  return ds;
}

inline Dataset ingest_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(kCli, Errc::IoError, "cannot open " + path.string());
  return parse_csv(in);
}

/// Known totals: a two-column CSV "variable,total". The population size is
/// the row named N.
struct KnownTotals {
  std::vector<std::string> names;
  Vector totals;
  double population_size = 0.0;
};

inline KnownTotals ingest_totals(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(kCli, Errc::IoError, "cannot open " + path.string());
  std::string line;
  Index line_no = 0;
  KnownTotals kt;
  std::vector<double> values;
  bool have_n = false;
  bool header_seen = false;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_record(line, line_no);
    if (cells.size() != 2) detail::parse_error(line_no, 1, "totals file needs exactly two fields per row");
    if (!header_seen) {
      header_seen = true;
      if (!detail::parse_number(cells[1])) continue;  // header row
    }
    const auto v = detail::parse_number(cells[1]);
    if (!v) {
      throw Error(kCli, Errc::NonNumericCell, "line " + std::to_string(line_no) + ", column 2: '" + cells[1] + "' is not a number");
    }
    if (!seen.insert(cells[0]).second) detail::parse_error(line_no, 1, "variable '" + cells[0] + "' repeated");
    if (cells[0] == "N") {
      kt.population_size = *v;
      have_n = true;
    } else {
      kt.names.push_back(cells[0]);
      values.push_back(*v);
    }
  }
  if (!header_seen) detail::parse_error(1, 1, "missing header row");
  if (!have_n || !(kt.population_size > 0.0)) {
    throw Error(kCli, Errc::InvalidConfig, "totals file must contain a positive population size row 'N'");
  }
  kt.totals = Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
  return kt;
}

}  // namespace bagcal::cli
