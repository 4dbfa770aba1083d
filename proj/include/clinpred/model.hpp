#pragma once

// One train/predict contract over the five model families, and the
// self-contained ModelArtifact file format.

#include <algorithm>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "clinpred/common.hpp"
#include "clinpred/hyperparams.hpp"
#include "clinpred/models/boosting.hpp"
#include "clinpred/models/forest.hpp"
#include "clinpred/models/logistic.hpp"
#include "clinpred/models/mlp.hpp"
#include "clinpred/models/svm.hpp"
#include "clinpred/preprocess.hpp"
#include "json.hpp"

namespace clinpred {

inline constexpr int kArtifactFormatVersion = 1;

// Degenerate model for single-class training labels.
struct ConstantModel {
  double score = 0.5;
  std::vector<double> predict(const Matrix& x) const {
    return std::vector<double>(static_cast<std::size_t>(x.rows()), score);
  }
};

using LearnedState =
    std::variant<LogisticModel, MlpModel, RandomForestModel, SvmModel, BoostedTreesModel, ConstantModel>;

struct ModelArtifact {
  Family family = Family::lr;
  Hyperparams hyperparams;
  LearnedState state;
  std::uint64_t train_seed = 0;
  Task task = Task::sars_cov_2;
  PreprocessorState preprocessor;
  double validation_auc = 0.0;
  std::optional<double> operating_threshold;  // set once evaluated
  std::vector<std::string> warnings;

  bool is_constant() const { return std::holds_alternative<ConstantModel>(state); }
};

struct TrainingData {
  const Matrix& x_train;
  const std::vector<std::uint8_t>& y_train;
  const Matrix& x_val;
  const std::vector<std::uint8_t>& y_val;
};

// `workers` only parallelizes inside a single fit (forest trees); results
// do not depend on it.
inline ModelArtifact train_model(const Hyperparams& hp, const TrainingData& data, std::uint64_t seed,
                                 Task task = Task::sars_cov_2, std::size_t workers = 1) {
  validate(hp);
  if (static_cast<std::size_t>(data.x_train.rows()) != data.y_train.size() ||
      static_cast<std::size_t>(data.x_val.rows()) != data.y_val.size())
    throw PipelineError("feature rows and label lengths differ");
  if (data.x_train.rows() == 0) throw PipelineError("empty training fold");

  ModelArtifact a;
  a.family = hp.family;
  a.hyperparams = hp;
  a.train_seed = seed;
  a.task = task;

  const auto pos = std::count(data.y_train.begin(), data.y_train.end(), 1);
  if (pos == 0 || pos == static_cast<long>(data.y_train.size())) {
    a.state = ConstantModel{pos == 0 ? 0.0 : 1.0};
    a.warnings.push_back("single-class training labels: constant-score model");
    return a;
  }

  Warnings w;
  switch (hp.family) {
    case Family::lr:
      a.state = LogisticModel::fit(data.x_train, data.y_train, {hp.real("C")});
      break;
    case Family::nn: {
      MlpModel::Options o;
      o.hidden_units = hp.integer("hidden_units");
      o.layers = hp.integer("layers");
      o.activation = parse_activation(hp.text("activation"));
      o.batch_size = hp.integer("batch_size");
      o.l2 = hp.real("l2");
      o.learning_rate = hp.real("learning_rate");
      o.dropout = hp.real("dropout");
      a.state = MlpModel::fit(data.x_train, data.y_train, data.x_val, data.y_val, o, seed);
      break;
    }
    case Family::rf:
      a.state = RandomForestModel::fit(data.x_train, data.y_train,
                                       {hp.integer("trees"), hp.integer("depth"), workers}, seed);
      break;
    case Family::svm: {
      SvmModel::Options o;
      o.C = hp.real("C");
      o.kernel = parse_kernel(hp.text("kernel"));
      o.degree = static_cast<int>(hp.integer("degree"));
      a.state = SvmModel::fit(data.x_train, data.y_train, data.x_val, data.y_val, o, w);
      break;
    }
    case Family::xgb: {
      BoostedTreesModel::Options o;
      o.subsample = hp.real("subsample");
      o.max_depth = hp.integer("max_depth");
      o.gamma = hp.real("gamma");
      o.learning_rate = hp.real("learning_rate");
      o.l1 = hp.real("l1");
      o.l2 = hp.real("l2");
      o.rounds = hp.integer("rounds");
      a.state = BoostedTreesModel::fit(data.x_train, data.y_train, o, seed);
      break;
    }
  }
  a.warnings = std::move(w.items);
  return a;
}

// Scores a matrix already in the artifact's feature layout.
inline std::vector<double> predict_features(const ModelArtifact& a, const Matrix& x) {
  auto scores = std::visit([&](const auto& m) { return m.predict(x); }, a.state);
  for (auto& s : scores) s = std::clamp(s, 0.0, 1.0);
  return scores;
}

inline std::vector<double> predict(const ModelArtifact& a, const FeatureMatrix& x) {
  if (x.names != a.preprocessor.feature_layout) {
    std::string msg = "feature layout mismatch:";
    std::set<std::string> have(x.names.begin(), x.names.end());
    std::set<std::string> want(a.preprocessor.feature_layout.begin(), a.preprocessor.feature_layout.end());
    for (const auto& n : want)
      if (!have.count(n)) msg += " missing '" + n + "';";
    for (const auto& n : have)
      if (!want.count(n)) msg += " unexpected '" + n + "';";
    if (have == want) msg += " column order differs";
    throw SchemaMismatchError(msg);
  }
  return predict_features(a, x.values);
}

// ------------------------------------------------------------
// serialization
// ------------------------------------------------------------

inline nlohmann::json to_json(const ModelArtifact& a) {
  nlohmann::json j;
  j["format_version"] = kArtifactFormatVersion;
  j["family"] = to_string(a.family);
  j["hyperparams"] = to_json(a.hyperparams);
  j["train_seed"] = a.train_seed;
  j["task"] = to_string(a.task);
  j["validation_auc"] = a.validation_auc;
  j["operating_threshold"] = a.operating_threshold ? nlohmann::json(*a.operating_threshold) : nlohmann::json();
  j["warnings"] = a.warnings;
  j["preprocessor"] = to_json(a.preprocessor);
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ConstantModel>) {
          j["state_kind"] = "constant";
          j["state"] = {{"score", m.score}};
        } else {
          j["state_kind"] = to_string(a.family);
          j["state"] = m.to_json();
        }
      },
      a.state);
  return j;
}

inline ModelArtifact artifact_from_json(const nlohmann::json& j) {
  if (j.at("format_version").get<int>() != kArtifactFormatVersion)
    throw SchemaMismatchError("unsupported artifact format version");
  ModelArtifact a;
  a.family = parse_family(j.at("family").get<std::string>());
  a.hyperparams = hyperparams_from_json(a.family, j.at("hyperparams"));
  a.train_seed = j.at("train_seed").get<std::uint64_t>();
  a.task = parse_task(j.at("task").get<std::string>());
  a.validation_auc = j.at("validation_auc").get<double>();
  if (!j.at("operating_threshold").is_null()) a.operating_threshold = j.at("operating_threshold").get<double>();
  a.warnings = j.at("warnings").get<std::vector<std::string>>();
  a.preprocessor = preprocessor_from_json(j.at("preprocessor"));
  const auto kind = j.at("state_kind").get<std::string>();
  const auto& s = j.at("state");
  if (kind == "constant") a.state = ConstantModel{s.at("score").get<double>()};
  else if (kind == "lr") a.state = LogisticModel::from_json(s);
  else if (kind == "nn") a.state = MlpModel::from_json(s);
  else if (kind == "rf") a.state = RandomForestModel::from_json(s);
  else if (kind == "svm") a.state = SvmModel::from_json(s);
  else if (kind == "xgb") a.state = BoostedTreesModel::from_json(s);
  else throw SchemaMismatchError("unknown model state kind '" + kind + "'");
  return a;
}

inline std::string serialize_artifact(const ModelArtifact& a) { return to_json(a).dump(); }

inline ModelArtifact deserialize_artifact(std::string_view text) {
  return artifact_from_json(nlohmann::json::parse(text));
}

inline void save_artifact(const ModelArtifact& a, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError("cannot write artifact " + path);
  out << serialize_artifact(a);
}

inline ModelArtifact load_artifact(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError("cannot read artifact " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_artifact(ss.str());
}

}  // namespace clinpred
