#pragma once

// Training-fold preprocessing: drop near-empty columns, one-hot discrete
// columns (with an explicit missing category), standardize continuous
// columns, impute them by chained ridge regressions and append missingness
// indicators. Everything is fitted on the training fold and applied
// unchanged to the other folds.

#include <Eigen/Dense>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "clinpred/common.hpp"
#include "clinpred/data.hpp"
#include "json.hpp"

namespace clinpred {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kPreprocessorSchemaVersion = 1;
inline constexpr const char* kMissingCategory = "<missing>";
inline constexpr const char* kMissingSuffix = " MISSING";

struct PreprocessOptions {
  int n_chained_iterations = 10;
  // A column is discrete iff it has fewer than this many distinct observed
  // training values (text columns are always discrete).
  std::size_t discrete_max_unique = 6;
  double drop_missing_fraction = 0.998;
  double ridge = 1e-3;
  // Iterated-Tikhonov refinement steps on each chained regression.
  int ridge_refinement_steps = 3;
  double std_floor = 1e-12;
};

struct DiscreteEncoding {
  std::string column;
  ColumnKind source_kind = ColumnKind::categorical_text;
  std::vector<std::string> categories;  // observed, sorted; missing category is implicit last
};

struct ContinuousStats {
  std::string column;
  double mean = 0;
  double std = 1;
  bool inert = false;  // std below floor: standardizes to 0
};

// z_target = intercept + sum_k coef[k] * z_k over the continuous columns
// (coef[target] is always 0).
struct ImputationModel {
  double intercept = 0;
  std::vector<double> coef;
};

enum class FeatureRole { one_hot, continuous, missing_indicator };

struct FeatureInfo {
  FeatureRole role;
  std::string source;    // raw column name
  std::string category;  // one-hot only
};

struct PreprocessorState {
  int schema_version = kPreprocessorSchemaVersion;
  std::vector<std::pair<std::string, ColumnKind>> input_columns;
  std::vector<std::string> dropped;
  std::vector<DiscreteEncoding> discrete;
  std::vector<ContinuousStats> continuous;
  std::vector<ImputationModel> impute_models;  // aligned with `continuous`
  std::vector<std::size_t> impute_order;       // indices into `continuous`
  int n_chained_iterations = 10;
  std::vector<std::string> feature_layout;

  std::vector<FeatureInfo> feature_info() const {
    std::vector<FeatureInfo> out;
    for (const auto& d : discrete) {
      for (const auto& c : d.categories) out.push_back({FeatureRole::one_hot, d.column, c});
      out.push_back({FeatureRole::one_hot, d.column, kMissingCategory});
    }
    for (const auto& c : continuous) out.push_back({FeatureRole::continuous, c.column, {}});
    for (const auto& c : continuous) out.push_back({FeatureRole::missing_indicator, c.column, {}});
    return out;
  }

  std::size_t n_features() const { return feature_layout.size(); }
};

struct FeatureMatrix {
  Matrix values;
  std::vector<std::string> names;
  MaskMatrix missing_mask;  // rows x continuous columns; 1 = imputed

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
};

// Canonical category key of a numeric discrete value.
inline std::string numeric_category(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// ------------------------------------------------------------
// fitting
// ------------------------------------------------------------

inline std::set<std::string> fit_drop_rule(const CohortTable& train,
                                           double max_missing_fraction = 0.998) {
  if (train.size() == 0) throw PipelineError("empty training fold");
  std::set<std::string> out;
  const double n = static_cast<double>(train.size());
  for (const auto& c : train.columns) {
    std::size_t missing = 0;
    for (std::size_t i = 0; i < c.size(); ++i) missing += c.missing(i);
    if (static_cast<double>(missing) / n > max_missing_fraction) out.insert(c.name);
  }
  return out;
}

struct FeatureKinds {
  std::set<std::string> discrete;
  std::set<std::string> continuous;
};

inline FeatureKinds classify_feature_kinds(const CohortTable& train,
                                           const std::set<std::string>& dropped = {},
                                           std::size_t discrete_max_unique = 6) {
  FeatureKinds k;
  for (const auto& c : train.columns) {
    if (dropped.count(c.name)) continue;
    if (c.kind == ColumnKind::categorical_text) {
      k.discrete.insert(c.name);
      continue;
    }
    std::set<double> distinct;
    for (const auto& v : c.numbers)
      if (v) distinct.insert(*v);
    (distinct.size() < discrete_max_unique ? k.discrete : k.continuous).insert(c.name);
  }
  return k;
}

namespace detail {

// Solves (G + ridge * P) b = rhs, P = identity except the intercept (index 0),
// then refines toward the unregularized solution with iterated Tikhonov steps.
// Well-conditioned systems converge to least squares; directions with
// near-zero curvature stay damped.
inline Vector ridge_solve(const Eigen::MatrixXd& gram, const Vector& rhs, double ridge,
                          int refinement_steps) {
  Eigen::MatrixXd reg = gram;
  for (Eigen::Index k = 1; k < reg.rows(); ++k) reg(k, k) += ridge;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(reg);
  Vector b = ldlt.solve(rhs);
  for (int s = 0; s < refinement_steps; ++s) b += ldlt.solve(rhs - gram * b);
  return b;
}

inline double standardize(double v, const ContinuousStats& s) {
  return s.inert ? 0.0 : (v - s.mean) / s.std;
}

}  // namespace detail

inline PreprocessorState fit_preprocessor(const CohortTable& train,
                                          const PreprocessOptions& opt = {}) {
  if (train.size() == 0) throw PipelineError("empty training fold");
  const std::size_t n = train.size();
  PreprocessorState st;
  st.n_chained_iterations = opt.n_chained_iterations;
  for (const auto& c : train.columns) st.input_columns.emplace_back(c.name, c.kind);

  auto dropped = fit_drop_rule(train, opt.drop_missing_fraction);
  st.dropped.assign(dropped.begin(), dropped.end());
  auto kinds = classify_feature_kinds(train, dropped, opt.discrete_max_unique);

  std::vector<const RawColumn*> cont_cols;
  for (const auto& c : train.columns) {
    if (kinds.discrete.count(c.name)) {
      DiscreteEncoding enc{c.name, c.kind, {}};
      if (c.kind == ColumnKind::numeric) {
        std::set<double> values;
        for (const auto& v : c.numbers)
          if (v) values.insert(*v);
        for (double v : values) enc.categories.push_back(numeric_category(v));
      } else {
        std::set<std::string> values;
        for (const auto& v : c.texts)
          if (v) values.insert(*v);
        enc.categories.assign(values.begin(), values.end());
      }
      st.discrete.push_back(std::move(enc));
    } else if (kinds.continuous.count(c.name)) {
      cont_cols.push_back(&c);
    }
  }

  // Population mean/std over observed training values.
  const std::size_t nc = cont_cols.size();
  std::vector<std::size_t> observed(nc, 0);
  for (std::size_t j = 0; j < nc; ++j) {
    const auto& col = *cont_cols[j];
    double sum = 0;
    for (const auto& v : col.numbers)
      if (v) {
        sum += *v;
        ++observed[j];
      }
    if (observed[j] == 0)
      throw PipelineError("continuous column '" + col.name + "' has no observed training values");
    double mean = sum / static_cast<double>(observed[j]);
    double ss = 0;
    for (const auto& v : col.numbers)
      if (v) ss += (*v - mean) * (*v - mean);
    double sd = std::sqrt(ss / static_cast<double>(observed[j]));
    st.continuous.push_back({col.name, mean, sd, sd < opt.std_floor});
  }

  // Chained equations in standardized space, starting from the mean (0).
  Matrix z = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(nc));
  std::vector<std::vector<std::size_t>> obs_rows(nc), miss_rows(nc);
  for (std::size_t j = 0; j < nc; ++j) {
    const auto& col = *cont_cols[j];
    for (std::size_t i = 0; i < n; ++i) {
      if (col.numbers[i]) {
        z(i, j) = detail::standardize(*col.numbers[i], st.continuous[j]);
        obs_rows[j].push_back(i);
      } else {
        miss_rows[j].push_back(i);
      }
    }
  }

  st.impute_order.resize(nc);
  std::iota(st.impute_order.begin(), st.impute_order.end(), std::size_t{0});
  std::stable_sort(st.impute_order.begin(), st.impute_order.end(),
                   [&](std::size_t a, std::size_t b) { return observed[a] > observed[b]; });
  st.impute_models.assign(nc, ImputationModel{0.0, std::vector<double>(nc, 0.0)});

  const auto p = static_cast<Eigen::Index>(nc);  // intercept + (nc - 1) predictors
  for (int iter = 0; iter < opt.n_chained_iterations && nc > 0; ++iter) {
    for (std::size_t target : st.impute_order) {
      const auto& rows = obs_rows[target];
      Eigen::MatrixXd design(static_cast<Eigen::Index>(rows.size()), p);
      Vector y(static_cast<Eigen::Index>(rows.size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        design(r, 0) = 1.0;
        Eigen::Index c = 1;
        for (std::size_t k = 0; k < nc; ++k)
          if (k != target) design(r, c++) = z(rows[r], k);
        y(r) = z(rows[r], target);
      }
      Eigen::MatrixXd gram = design.transpose() * design;
      Vector rhs = design.transpose() * y;
      Vector beta = detail::ridge_solve(gram, rhs, opt.ridge, opt.ridge_refinement_steps);

      auto& model = st.impute_models[target];
      model.intercept = beta(0);
      Eigen::Index c = 1;
      for (std::size_t k = 0; k < nc; ++k) model.coef[k] = (k == target) ? 0.0 : beta(c++);

      for (std::size_t i : miss_rows[target]) {
        double pred = model.intercept;
        for (std::size_t k = 0; k < nc; ++k) pred += model.coef[k] * z(i, k);
        z(i, target) = pred;
      }
    }
  }

  for (const auto& d : st.discrete) {
    for (const auto& c : d.categories) st.feature_layout.push_back(d.column + "=" + c);
    st.feature_layout.push_back(d.column + "=" + kMissingCategory);
  }
  for (const auto& c : st.continuous) st.feature_layout.push_back(c.column);
  for (const auto& c : st.continuous) st.feature_layout.push_back(c.column + kMissingSuffix);

  std::set<std::string> unique(st.feature_layout.begin(), st.feature_layout.end());
  if (unique.size() != st.feature_layout.size())
    throw PipelineError("preprocessed feature names are not unique");
  return st;
}

// ------------------------------------------------------------
// application
// ------------------------------------------------------------

inline FeatureMatrix apply_preprocessor(const PreprocessorState& st, const CohortTable& fold) {
  // The fold must carry exactly the fitted input columns.
  std::map<std::string, const RawColumn*> by_name;
  for (const auto& c : fold.columns) by_name[c.name] = &c;
  std::vector<std::string> problems;
  std::set<std::string> expected;
  for (const auto& [name, kind] : st.input_columns) {
    expected.insert(name);
    auto it = by_name.find(name);
    if (it == by_name.end()) problems.push_back("missing column '" + name + "'");
    else if (it->second->kind != kind) problems.push_back("kind differs for '" + name + "'");
  }
  for (const auto& c : fold.columns)
    if (!expected.count(c.name)) problems.push_back("unexpected column '" + c.name + "'");
  if (!problems.empty()) {
    std::string msg = "schema mismatch:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw SchemaMismatchError(msg);
  }

  const auto n = static_cast<Eigen::Index>(fold.size());
  const std::size_t nc = st.continuous.size();
  FeatureMatrix out;
  out.names = st.feature_layout;
  out.values = Matrix::Zero(n, static_cast<Eigen::Index>(st.feature_layout.size()));
  out.missing_mask = MaskMatrix::Zero(n, static_cast<Eigen::Index>(nc));

  Eigen::Index col = 0;
  for (const auto& d : st.discrete) {
    const RawColumn& raw = *by_name.at(d.column);
    std::map<std::string, Eigen::Index> slot;
    for (std::size_t c = 0; c < d.categories.size(); ++c)
      slot[d.categories[c]] = static_cast<Eigen::Index>(c);
    const auto missing_slot = static_cast<Eigen::Index>(d.categories.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index s = missing_slot;
      std::optional<std::string> key;
      if (raw.kind == ColumnKind::numeric) {
        if (raw.numbers[i]) key = numeric_category(*raw.numbers[i]);
      } else {
        key = raw.texts[i];
      }
      if (key) {
        auto it = slot.find(*key);
        if (it != slot.end()) s = it->second;  // unseen categories fall back to missing
      }
      out.values(i, col + s) = 1.0;
    }
    col += missing_slot + 1;
  }

  const Eigen::Index cont_begin = col;
  const Eigen::Index ind_begin = cont_begin + static_cast<Eigen::Index>(nc);
  std::vector<const RawColumn*> raw_cont(nc);
  for (std::size_t j = 0; j < nc; ++j) raw_cont[j] = by_name.at(st.continuous[j].column);

  std::vector<double> z(nc);
  std::vector<std::uint8_t> miss(nc);
  for (Eigen::Index i = 0; i < n; ++i) {
    bool any_missing = false;
    for (std::size_t j = 0; j < nc; ++j) {
      const auto& v = raw_cont[j]->numbers[i];
      miss[j] = !v.has_value();
      z[j] = v ? detail::standardize(*v, st.continuous[j]) : 0.0;
      any_missing |= miss[j] != 0;
    }
    if (any_missing) {
      for (int iter = 0; iter < st.n_chained_iterations; ++iter)
        for (std::size_t target : st.impute_order) {
          if (!miss[target]) continue;
          const auto& m = st.impute_models[target];
          double pred = m.intercept;
          for (std::size_t k = 0; k < nc; ++k) pred += m.coef[k] * z[k];
          z[target] = pred;
        }
    }
    for (std::size_t j = 0; j < nc; ++j) {
      out.values(i, cont_begin + static_cast<Eigen::Index>(j)) = z[j];
      out.values(i, ind_begin + static_cast<Eigen::Index>(j)) = miss[j];
      out.missing_mask(i, static_cast<Eigen::Index>(j)) = miss[j];
    }
  }
  return out;
}

// ------------------------------------------------------------
// serialization
// ------------------------------------------------------------

inline nlohmann::json to_json(const PreprocessorState& st) {
  using nlohmann::json;
  json j;
  j["schema_version"] = st.schema_version;
  j["n_chained_iterations"] = st.n_chained_iterations;
  j["input_columns"] = json::array();
  for (const auto& [name, kind] : st.input_columns)
    j["input_columns"].push_back({{"name", name}, {"kind", to_string(kind)}});
  j["dropped"] = st.dropped;
  j["discrete"] = json::array();
  for (const auto& d : st.discrete)
    j["discrete"].push_back({{"column", d.column},
                             {"source_kind", to_string(d.source_kind)},
                             {"categories", d.categories}});
  j["continuous"] = json::array();
  for (std::size_t k = 0; k < st.continuous.size(); ++k) {
    const auto& c = st.continuous[k];
    j["continuous"].push_back({{"column", c.column},
                               {"mean", c.mean},
                               {"std", c.std},
                               {"inert", c.inert},
                               {"intercept", st.impute_models[k].intercept},
                               {"coef", st.impute_models[k].coef}});
  }
  j["impute_order"] = st.impute_order;
  j["feature_layout"] = st.feature_layout;
  return j;
}

inline PreprocessorState preprocessor_from_json(const nlohmann::json& j) {
  PreprocessorState st;
  st.schema_version = j.at("schema_version").get<int>();
  if (st.schema_version != kPreprocessorSchemaVersion)
    throw SchemaMismatchError("unsupported preprocessor schema version " +
                              std::to_string(st.schema_version));
  st.n_chained_iterations = j.at("n_chained_iterations").get<int>();
  for (const auto& c : j.at("input_columns"))
    st.input_columns.emplace_back(c.at("name").get<std::string>(),
                                  parse_column_kind(c.at("kind").get<std::string>()));
  st.dropped = j.at("dropped").get<std::vector<std::string>>();
  for (const auto& d : j.at("discrete"))
    st.discrete.push_back({d.at("column").get<std::string>(),
                           parse_column_kind(d.at("source_kind").get<std::string>()),
                           d.at("categories").get<std::vector<std::string>>()});
  for (const auto& c : j.at("continuous")) {
    st.continuous.push_back({c.at("column").get<std::string>(), c.at("mean").get<double>(),
                             c.at("std").get<double>(), c.at("inert").get<bool>()});
    st.impute_models.push_back(
        {c.at("intercept").get<double>(), c.at("coef").get<std::vector<double>>()});
  }
  st.impute_order = j.at("impute_order").get<std::vector<std::size_t>>();
  st.feature_layout = j.at("feature_layout").get<std::vector<std::string>>();
  return st;
}

}  // namespace clinpred
