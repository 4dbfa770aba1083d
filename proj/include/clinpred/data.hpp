#pragma once

// Cohort ingestion, label construction and the stratified 50/20/30 split.

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "clinpred/common.hpp"

namespace clinpred {

enum class ColumnKind { numeric, categorical_text };

inline std::string to_string(ColumnKind k) {
  return k == ColumnKind::numeric ? "numeric" : "categorical";
}

inline ColumnKind parse_column_kind(std::string_view s) {
  if (s == "numeric") return ColumnKind::numeric;
  if (s == "categorical") return ColumnKind::categorical_text;
  throw ConfigError("unknown column kind '" + std::string(s) + "'");
}

// One feature column. Exactly one of `numbers` / `texts` is populated,
// according to `kind`; std::nullopt marks a missing cell.
struct RawColumn {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
  std::vector<std::optional<double>> numbers;
  std::vector<std::optional<std::string>> texts;

  std::size_t size() const {
    return kind == ColumnKind::numeric ? numbers.size() : texts.size();
  }
  bool missing(std::size_t row) const {
    return kind == ColumnKind::numeric ? !numbers[row].has_value() : !texts[row].has_value();
  }
};

// Maps columns of the cohort file to semantic roles. List-valued keys use
// '|' as separator because the source column names contain commas.
struct SchemaConfig {
  std::string label_sars_cov_2 = "SARS-Cov-2 exam result";
  std::vector<std::string> label_admission = {"Patient addmited to regular ward (1=yes, 0=no)"};
  std::vector<std::string> label_icu = {"Patient addmited to intensive care unit (1=yes, 0=no)"};
  std::string age_column = "Patient age quantile";
  std::string positive_token = "positive";
  std::optional<std::string> id_column = "Patient ID";
  // Non-label columns that still carry outcome information.
  std::vector<std::string> exclude = {"Patient addmited to semi-intensive unit (1=yes, 0=no)"};
  // Kind overrides; all other columns are inferred (numeric iff every
  // non-empty cell parses as a number).
  std::vector<std::string> numeric_columns;
  std::vector<std::string> categorical_columns;

  static SchemaConfig from_key_values(const std::map<std::string, std::string>& kv) {
    SchemaConfig s;
    for (const auto& [key, value] : kv) {
      if (key == "label_sars_cov_2") s.label_sars_cov_2 = value;
      else if (key == "label_admission") s.label_admission = split_list(value);
      else if (key == "label_icu") s.label_icu = split_list(value);
      else if (key == "age_column") s.age_column = value;
      else if (key == "positive_token") s.positive_token = value;
      else if (key == "id_column") s.id_column = value.empty() ? std::nullopt : std::optional(value);
      else if (key == "exclude") s.exclude = split_list(value);
      else if (key == "numeric_columns") s.numeric_columns = split_list(value);
      else if (key == "categorical_columns") s.categorical_columns = split_list(value);
      else throw ConfigError("unknown schema key '" + key + "'");
    }
    if (s.label_admission.empty() || s.label_icu.empty())
      throw ConfigError("label_admission and label_icu need at least one column");
    return s;
  }

  static SchemaConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read schema config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_key_values(parse_key_values(ss.str()));
  }
};

struct CohortTable {
  std::vector<RawColumn> columns;
  std::vector<std::uint8_t> y_sars_cov_2;
  std::vector<std::uint8_t> y_admission;
  std::vector<std::uint8_t> y_icu;
  std::vector<int> age_quantile;
  std::vector<std::string> ids;  // empty when the file has no id column

  std::size_t size() const { return age_quantile.size(); }

  const std::vector<std::uint8_t>& labels(Task t) const {
    switch (t) {
      case Task::sars_cov_2: return y_sars_cov_2;
      case Task::admission: return y_admission;
      case Task::icu: return y_icu;
    }
    return y_sars_cov_2;
  }

  const RawColumn* find(std::string_view name) const {
    for (const auto& c : columns)
      if (c.name == name) return &c;
    return nullptr;
  }

  CohortTable select_rows(const std::vector<std::size_t>& rows) const {
    CohortTable out;
    out.columns.reserve(columns.size());
    for (const auto& c : columns) {
      RawColumn r{c.name, c.kind, {}, {}};
      if (c.kind == ColumnKind::numeric) {
        r.numbers.reserve(rows.size());
        for (auto i : rows) r.numbers.push_back(c.numbers[i]);
      } else {
        r.texts.reserve(rows.size());
        for (auto i : rows) r.texts.push_back(c.texts[i]);
      }
      out.columns.push_back(std::move(r));
    }
    for (auto i : rows) {
      out.y_sars_cov_2.push_back(y_sars_cov_2[i]);
      out.y_admission.push_back(y_admission[i]);
      out.y_icu.push_back(y_icu[i]);
      out.age_quantile.push_back(age_quantile[i]);
      if (!ids.empty()) out.ids.push_back(ids[i]);
    }
    return out;
  }
};

// ------------------------------------------------------------
// delimited text reader
// ------------------------------------------------------------

namespace detail {

// RFC 4180 style: comma separated, '"' quoting with "" escapes, CRLF or LF.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"': in_quotes = true; any = true; break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        any = true;
        break;
      case '\r': break;
      case '\n':
        if (any || !field.empty()) {
          row.push_back(std::move(field));
          rows.push_back(std::move(row));
        }
        row.clear();
        field.clear();
        any = false;
        break;
      default: field.push_back(c); any = true;
    }
  }
  if (in_quotes) throw IngestionError("unterminated quoted field at end of file");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

// Locale-independent; the whole (trimmed) cell must be consumed.
inline std::optional<double> parse_number(std::string_view s) {
  double v = 0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (b != e && *b == '+') ++b;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::uint8_t parse_label(const std::string& cell, const std::string& positive_token,
                                std::size_t row, const std::string& column) {
  std::string lower = cell;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (cell == positive_token || lower == "1" || lower == "1.0" || lower == "true" ||
      lower == "t" || lower == "yes")
    return 1;
  if (lower == "0" || lower == "0.0" || lower == "false" || lower == "f" || lower == "no" ||
      lower == "negative")
    return 0;
  throw IngestionError("row " + std::to_string(row) + ", column '" + column +
                       "': unrecognised label value '" + cell + "'");
}

}  // namespace detail

// Builds a CohortTable from delimited text. `row` numbers in errors are
// 1-based data rows (the header is row 0).
inline CohortTable parse_cohort(std::string_view text, const SchemaConfig& schema) {
  auto rows = detail::parse_csv(text);
  if (rows.empty()) throw IngestionError("empty cohort: no header row");
  const auto header = rows.front();
  const std::size_t n = rows.size() - 1;
  if (n == 0) throw IngestionError("empty cohort");

  std::map<std::string, std::size_t> index;
  for (std::size_t j = 0; j < header.size(); ++j) index[trim(header[j])] = j;
  auto require = [&](const std::string& col) {
    auto it = index.find(col);
    if (it == index.end()) throw ConfigError("schema column not found in cohort file: '" + col + "'");
    return it->second;
  };

  for (std::size_t r = 1; r < rows.size(); ++r)
    if (rows[r].size() != header.size())
      throw IngestionError("row " + std::to_string(r) + ": expected " +
                           std::to_string(header.size()) + " fields, got " +
                           std::to_string(rows[r].size()));

  auto cell = [&](std::size_t r, std::size_t j) { return trim(rows[r + 1][j]); };

  CohortTable out;
  std::set<std::size_t> non_features;

  auto build_label = [&](const std::vector<std::string>& cols, std::vector<std::uint8_t>& y) {
    y.assign(n, 0);
    for (const auto& col : cols) {
      auto j = require(col);
      non_features.insert(j);
      for (std::size_t r = 0; r < n; ++r) {
        auto v = cell(r, j);
        if (v.empty())
          throw IngestionError("row " + std::to_string(r + 1) + ", column '" + col +
                               "': missing label");
        y[r] = static_cast<std::uint8_t>(y[r] | detail::parse_label(v, schema.positive_token, r + 1, col));
      }
    }
  };
  build_label({schema.label_sars_cov_2}, out.y_sars_cov_2);
  build_label(schema.label_admission, out.y_admission);
  build_label(schema.label_icu, out.y_icu);

  {
    auto j = require(schema.age_column);
    out.age_quantile.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
      auto v = detail::parse_number(cell(r, j));
      if (!v || *v != std::floor(*v))
        throw IngestionError("row " + std::to_string(r + 1) + ", column '" + schema.age_column +
                             "': age quantile must be an integer");
      out.age_quantile[r] = static_cast<int>(*v);
    }
  }
  if (schema.id_column) {
    auto it = index.find(*schema.id_column);
    if (it != index.end()) {
      non_features.insert(it->second);
      for (std::size_t r = 0; r < n; ++r) out.ids.push_back(cell(r, it->second));
    }
  }
  for (const auto& col : schema.exclude) non_features.insert(require(col));
  for (const auto& col : schema.numeric_columns) require(col);
  for (const auto& col : schema.categorical_columns) require(col);

  auto listed = [](const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
  };

  for (std::size_t j = 0; j < header.size(); ++j) {
    if (non_features.count(j)) continue;
    RawColumn col;
    col.name = trim(header[j]);
    bool forced_numeric = listed(schema.numeric_columns, col.name);
    bool forced_text = listed(schema.categorical_columns, col.name);
    bool numeric = !forced_text;
    if (numeric && !forced_numeric) {
      for (std::size_t r = 0; r < n && numeric; ++r) {
        auto v = cell(r, j);
        if (!v.empty() && !detail::parse_number(v)) numeric = false;
      }
    }
    if (numeric) {
      col.kind = ColumnKind::numeric;
      col.numbers.resize(n);
      for (std::size_t r = 0; r < n; ++r) {
        auto v = cell(r, j);
        if (v.empty()) continue;
        auto x = detail::parse_number(v);
        if (!x)
          throw IngestionError("row " + std::to_string(r + 1) + ", column '" + col.name +
                               "': cannot parse '" + v + "' as a number");
        col.numbers[r] = *x;
      }
    } else {
      col.kind = ColumnKind::categorical_text;
      col.texts.resize(n);
      for (std::size_t r = 0; r < n; ++r) {
        auto v = cell(r, j);
        if (!v.empty()) col.texts[r] = std::move(v);
      }
    }
    out.columns.push_back(std::move(col));
  }
  return out;
}

inline CohortTable load_cohort(const std::string& path, const SchemaConfig& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open cohort file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_cohort(ss.str(), schema);
}

// ------------------------------------------------------------
// stratified split
// ------------------------------------------------------------

enum class Fold : std::uint8_t { train = 0, validation = 1, test = 2 };

inline std::string to_string(Fold f) {
  switch (f) {
    case Fold::train: return "train";
    case Fold::validation: return "validation";
    case Fold::test: return "test";
  }
  return "?";
}

struct SplitRatios {
  double train = 0.5;
  double validation = 0.2;
  double test = 0.3;
  std::array<double, 3> as_array() const { return {train, validation, test}; }
};

struct FoldAssignment {
  std::vector<Fold> fold;
  std::uint64_t seed = 0;

  std::vector<std::size_t> indices(Fold f) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold.size(); ++i)
      if (fold[i] == f) out.push_back(i);
    return out;
  }
  std::array<std::size_t, 3> sizes() const {
    std::array<std::size_t, 3> s{0, 0, 0};
    for (auto f : fold) ++s[static_cast<int>(f)];
    return s;
  }
  // Compact text form: one character per patient (t/v/s).
  std::string encode() const {
    std::string s;
    s.reserve(fold.size());
    for (auto f : fold) s.push_back("tvs"[static_cast<int>(f)]);
    return s;
  }
  static FoldAssignment decode(std::string_view s, std::uint64_t seed) {
    FoldAssignment a;
    a.seed = seed;
    for (char c : s) {
      if (c == 't') a.fold.push_back(Fold::train);
      else if (c == 'v') a.fold.push_back(Fold::validation);
      else if (c == 's') a.fold.push_back(Fold::test);
      else throw IngestionError("corrupt fold assignment");
    }
    return a;
  }
};

namespace detail {

// Largest-remainder rounding of n * ratios; the result sums to n.
inline std::array<long, 3> apportion(long n, const std::array<double, 3>& ratios) {
  std::array<long, 3> out{};
  std::array<double, 3> rem{};
  long assigned = 0;
  for (int k = 0; k < 3; ++k) {
    double exact = static_cast<double>(n) * ratios[k];
    double snapped = std::round(exact);
    if (std::abs(exact - snapped) < 1e-9) exact = snapped;
    out[k] = static_cast<long>(std::floor(exact));
    rem[k] = exact - static_cast<double>(out[k]);
    assigned += out[k];
  }
  while (assigned < n) {
    int best = 0;
    for (int k = 1; k < 3; ++k)
      if (rem[k] > rem[best]) best = k;
    ++out[best];
    rem[best] = -1;
    ++assigned;
  }
  return out;
}

struct Stratum {
  std::vector<std::size_t> members;
  std::array<long, 3> alloc{};
  std::array<double, 3> frac{};
  std::array<bool, 3> extra{};
  int group = 0;
};

// Hands out each stratum's rounding leftovers (at most one extra patient per
// fold) so that the group's fold totals hit `target`. Leftovers go by a
// seeded draw weighted by the fractional allocation, preferring folds that
// are still below target.
inline void balance_group(std::vector<Stratum*>& strata, std::array<long, 3> target,
                          std::mt19937_64& rng) {
  std::array<long, 3> demand = target;
  for (auto* s : strata)
    for (int k = 0; k < 3; ++k) demand[k] -= s->alloc[k];

  std::shuffle(strata.begin(), strata.end(), rng);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (auto* s : strata) {
    long leftover = static_cast<long>(s->members.size()) - s->alloc[0] - s->alloc[1] - s->alloc[2];
    for (long u = 0; u < leftover; ++u) {
      std::array<double, 3> w{};
      bool any_demand = false;
      for (int k = 0; k < 3; ++k)
        if (!s->extra[k] && s->frac[k] > 0 && demand[k] > 0) any_demand = true;
      double total = 0;
      for (int k = 0; k < 3; ++k) {
        bool ok = !s->extra[k] && s->frac[k] > 0 && (!any_demand || demand[k] > 0);
        w[k] = ok ? s->frac[k] : 0.0;
        total += w[k];
      }
      double x = unif(rng) * total;
      int pick = 2;
      for (int k = 0; k < 3; ++k) {
        if (w[k] <= 0) continue;
        pick = k;
        if (x < w[k]) break;
        x -= w[k];
      }
      s->extra[pick] = true;
      ++s->alloc[pick];
      --demand[pick];
    }
  }

  // Repair: move an extra from an over-full fold to an under-full one within
  // a stratum where both moves keep the allocation at floor/ceil.
  for (int guard = 0; guard < 64; ++guard) {
    int under = -1, over = -1;
    for (int k = 0; k < 3; ++k) {
      if (demand[k] > 0 && under < 0) under = k;
      if (demand[k] < 0 && over < 0) over = k;
    }
    if (under < 0 || over < 0) break;
    bool moved = false;
    for (auto* s : strata) {
      if (s->extra[over] && !s->extra[under] && s->frac[under] > 0) {
        s->extra[over] = false;
        --s->alloc[over];
        s->extra[under] = true;
        ++s->alloc[under];
        ++demand[over];
        --demand[under];
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
}

}  // namespace detail

// Stratifies on (age quantile, SARS-CoV-2, admission, ICU). Every stratum
// gets floor or ceil of its exact ratio share per fold; leftovers are
// balanced so that fold totals match the apportioned cohort size, with the
// SARS-CoV-2 positive group balanced on its own so that the positive
// subcohort inherits near-exact proportions.
inline FoldAssignment stratified_split(const CohortTable& cohort, SplitRatios ratios,
                                       std::uint64_t seed) {
  const auto r = ratios.as_array();
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9 || r[0] < 0 || r[1] < 0 || r[2] < 0)
    throw ConfigError("split ratios must be non-negative and sum to 1");
  const std::size_t n = cohort.size();
  if (n == 0) throw PipelineError("cannot split an empty cohort");

  std::map<std::tuple<int, int, int, int>, detail::Stratum> strata;
  for (std::size_t i = 0; i < n; ++i) {
    auto key = std::make_tuple(cohort.age_quantile[i], int(cohort.y_sars_cov_2[i]),
                               int(cohort.y_admission[i]), int(cohort.y_icu[i]));
    auto& s = strata[key];
    s.members.push_back(i);
    s.group = cohort.y_sars_cov_2[i];
  }

  std::mt19937_64 rng(seed);
  std::array<long, 3> group_size{0, 0, 0};
  std::vector<detail::Stratum*> groups[2];
  for (auto& [key, s] : strata) {
    std::shuffle(s.members.begin(), s.members.end(), rng);
    const double m = static_cast<double>(s.members.size());
    for (int k = 0; k < 3; ++k) {
      double exact = m * r[k];
      double snapped = std::round(exact);
      if (std::abs(exact - snapped) < 1e-9) exact = snapped;
      s.alloc[k] = static_cast<long>(std::floor(exact));
      s.frac[k] = exact - static_cast<double>(s.alloc[k]);
    }
    groups[s.group].push_back(&s);
    group_size[s.group] += static_cast<long>(s.members.size());
  }

  auto total_target = detail::apportion(static_cast<long>(n), r);
  auto positive_target = detail::apportion(group_size[1], r);
  std::array<long, 3> negative_target{};
  for (int k = 0; k < 3; ++k) negative_target[k] = total_target[k] - positive_target[k];

  detail::balance_group(groups[1], positive_target, rng);
  detail::balance_group(groups[0], negative_target, rng);

  FoldAssignment out;
  out.seed = seed;
  out.fold.assign(n, Fold::train);
  for (auto& [key, s] : strata) {
    std::size_t pos = 0;
    for (int k = 0; k < 3; ++k)
      for (long c = 0; c < s.alloc[k]; ++c) out.fold[s.members[pos++]] = static_cast<Fold>(k);
  }
  return out;
}

// Restricts to SARS-CoV-2 positive patients, keeping each patient's fold.
inline std::pair<CohortTable, FoldAssignment> subcohort_positive(const CohortTable& cohort,
                                                                 const FoldAssignment& folds) {
  if (folds.fold.size() != cohort.size())
    throw PipelineError("fold assignment does not match cohort size");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < cohort.size(); ++i)
    if (cohort.y_sars_cov_2[i] == 1) rows.push_back(i);
  if (rows.empty()) throw PipelineError("no positive patients");
  FoldAssignment sub;
  sub.seed = folds.seed;
  for (auto i : rows) sub.fold.push_back(folds.fold[i]);
  return {cohort.select_rows(rows), std::move(sub)};
}

}  // namespace clinpred
