#pragma once

// End-to-end run: split -> preprocess -> search -> evaluate -> explain ->
// report -> manifest. Every stage persists its outputs under the output
// directory together with a marker keyed by the run fingerprint, so an
// interrupted run resumes from the last completed stage.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "clinpred/common.hpp"
#include "clinpred/config.hpp"
#include "clinpred/data.hpp"
#include "clinpred/explain.hpp"
#include "clinpred/metrics.hpp"
#include "clinpred/model.hpp"
#include "clinpred/preprocess.hpp"
#include "clinpred/report.hpp"
#include "clinpred/tuner.hpp"
#include "json.hpp"

namespace clinpred {

namespace fs = std::filesystem;

inline constexpr int kManifestFormatVersion = 1;
inline constexpr SplitRatios kDefaultSplit{0.5, 0.2, 0.3};

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw PipelineError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes through a temporary file so a crash never leaves a torn output.
inline void write_file(const fs::path& p, std::string_view content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw PipelineError("cannot write " + p.string());
    out << content;
    if (!out) throw PipelineError("cannot write " + p.string());
  }
  fs::rename(tmp, p);
}

// Search ledgers carry wall times; they are hashed with that column blanked.
inline std::string stable_content_hash(const fs::path& p) {
  std::string text = read_file(p);
  if (p.filename().string().ends_with(".ledger.tsv")) {
    std::string out;
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t eol = text.find('\n', pos);
      if (eol == std::string::npos) eol = text.size();
      std::string line = text.substr(pos, eol - pos);
      pos = eol + 1;
      std::size_t start = 0;
      int col = 0;
      std::string kept;
      for (std::size_t k = 0; k <= line.size(); ++k) {
        if (k == line.size() || line[k] == '\t') {
          if (col != 5) kept += line.substr(start, k - start);
          kept += k == line.size() ? "\n" : "\t";
          start = k + 1;
          ++col;
        }
      }
      out += kept;
    }
    text = std::move(out);
  }
  return content_hash(text);
}

// Only the evaluation and importance stages may read the test fold.
class TestFoldAudit {
 public:
  void record(const std::string& stage) {
    if (stage != "evaluate" && stage != "explain")
      throw PipelineError("stage '" + stage + "' attempted to read the test fold");
    ++reads_[stage];
  }
  void restore(const std::string& stage, std::size_t n) { reads_[stage] += n; }
  const std::map<std::string, std::size_t>& reads() const { return reads_; }

 private:
  std::map<std::string, std::size_t> reads_;
};

struct SelectedCandidate {
  std::size_t run_index = 0;
  double validation_auc = 0;
};

struct TaskContext {
  Task task = Task::sars_cov_2;
  CohortTable train, validation, test;
  std::optional<PreprocessorState> preprocessor;
  std::optional<FeatureMatrix> x_train, x_validation;
  std::map<Family, ModelArtifact> artifacts;
  std::map<Family, SelectedCandidate> selected;
  std::map<Family, EvalReport> evaluations;
  std::map<Family, std::size_t> test_evaluations;
  std::optional<Family> headline;
  std::optional<ImportanceReport> importance;
};

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config) : config_(std::move(config)), out_(config_.out) {
    if (config_.n_runs < 1 || config_.n_bootstrap < 2 || config_.workers < 1 || config_.n_chained_iterations < 1)
      throw ConfigError("n_runs, workers and n_chained_iterations must be positive; bootstrap at least 2");
    guarded("load", [&] {
      cohort_bytes_ = read_file(config_.cohort);
      if (!config_.schema.empty()) {
        schema_bytes_ = read_file(config_.schema);
        schema_ = SchemaConfig::from_key_values(parse_key_values(schema_bytes_));
      }
      cohort_ = parse_cohort(cohort_bytes_, schema_);
    });
    nlohmann::json fp = config_snapshot(config_);
    fp["cohort_hash"] = content_hash(cohort_bytes_);
    fp["schema_hash"] = content_hash(schema_bytes_);
    fingerprint_ = content_hash(fp.dump());
  }

  const PipelineConfig& config() const { return config_; }
  const CohortTable& cohort() const { return cohort_; }
  const fs::path& out_dir() const { return out_; }
  const std::string& fingerprint() const { return fingerprint_; }
  const TestFoldAudit& audit() const { return audit_; }
  const FoldAssignment& folds() const { return folds_; }
  TaskContext& task(Task t) { return tasks_.at(t); }

  void split() {
    if (split_done_) return;
    guarded("split", [&] {
      auto marker = load_marker("split");
      if (marker) {
        auto j = nlohmann::json::parse(read_file(out_ / "split.json"));
        folds_ = FoldAssignment::decode(j.at("folds").get<std::string>(), j.at("seed").get<std::uint64_t>());
        if (folds_.fold.size() != cohort_.size()) throw PipelineError("stored split does not match the cohort");
      } else {
        folds_ = stratified_split(cohort_, kDefaultSplit, derive_seed(config_.seed, "split"));
      }
      build_task_contexts();
      if (!marker) {
        write_file(out_ / "split.json", split_json().dump(1));
        mark_done("split", {});
      }
    });
    split_done_ = true;
  }

  void preprocess() {
    if (preprocess_done_) return;
    split();
    for (auto t : config_.tasks) {
      guarded("preprocess", [&] {
        auto& ctx = tasks_.at(t);
        const std::string name = "preprocess_" + to_string(t);
        const fs::path path = out_ / "preprocess" / (to_string(t) + ".json");
        if (load_marker(name)) {
          ctx.preprocessor = preprocessor_from_json(nlohmann::json::parse(read_file(path)));
        } else {
          PreprocessOptions opt;
          opt.n_chained_iterations = config_.n_chained_iterations;
          ctx.preprocessor = fit_preprocessor(ctx.train, opt);
          write_file(path, to_json(*ctx.preprocessor).dump());
          mark_done(name, {});
        }
        ctx.x_train = apply_preprocessor(*ctx.preprocessor, ctx.train);
        ctx.x_validation = apply_preprocessor(*ctx.preprocessor, ctx.validation);
      });
    }
    preprocess_done_ = true;
  }

  void search() {
    if (search_done_) return;
    preprocess();
    for (auto t : config_.tasks)
      for (auto f : config_.families) guarded("search", [&] { search_one(t, f); });
    search_done_ = true;
  }

  void evaluate() {
    if (evaluate_done_) return;
    search();
    for (auto t : config_.tasks) guarded("evaluate", [&] { evaluate_task(t); });
    evaluate_done_ = true;
  }

  void explain() {
    if (explain_done_) return;
    evaluate();
    for (auto t : config_.tasks) guarded("explain", [&] { explain_task(t); });
    explain_done_ = true;
  }

  void report() {
    explain();
    guarded("report", [&] {
      for (auto t : config_.tasks) {
        auto& ctx = tasks_.at(t);
        std::vector<std::pair<Family, EvalReport>> rows(ctx.evaluations.begin(), ctx.evaluations.end());
        write_file(report_path(t), format_task_table(rows));
      }
    });
  }

  // Runs every stage and writes the manifest.
  nlohmann::json run() {
    report();
    nlohmann::json m;
    guarded("manifest", [&] { m = write_manifest(); });
    return m;
  }

  nlohmann::json write_manifest() {
    nlohmann::json hashed;
    hashed["config"] = config_snapshot(config_);
    hashed["cohort_hash"] = content_hash(cohort_bytes_);
    hashed["schema_hash"] = content_hash(schema_bytes_);
    hashed["n_patients"] = cohort_.size();
    hashed["split"] = file_entry("split.json");
    nlohmann::json tasks = nlohmann::json::object();
    for (auto t : config_.tasks) {
      auto& ctx = tasks_.at(t);
      if (!ctx.headline || !ctx.importance) throw PipelineError("manifest requested before all stages completed");
      nlohmann::json tj;
      auto sizes = fold_sizes(ctx);
      tj["fold_sizes"] = sizes;
      tj["fold_positives"] = fold_positives(ctx, t);
      tj["preprocessor"] = file_entry(rel(out_ / "preprocess" / (to_string(t) + ".json")));
      nlohmann::json models = nlohmann::json::array();
      for (auto f : config_.families) {
        const auto& ev = ctx.evaluations.at(f);
        nlohmann::json mj;
        mj["family"] = to_string(f);
        mj["run_index"] = ctx.selected.at(f).run_index;
        mj["validation_auc"] = ctx.selected.at(f).validation_auc;
        mj["hyperparams"] = to_json(ctx.artifacts.at(f).hyperparams);
        mj["test_auc"] = ev.get(Metric::auc).point;
        mj["test_evaluations"] = ctx.test_evaluations.at(f);
        mj["artifact"] = file_entry(rel(artifact_path(t, f)));
        mj["ledger"] = file_entry(rel(ledger_path(t, f)));
        mj["evaluation"] = file_entry(rel(evaluation_path(t, f)));
        models.push_back(mj);
      }
      tj["models"] = models;
      tj["best_by_validation"] = to_string(best_by_validation(t));
      tj["headline"] = {{"family", to_string(*ctx.headline)},
                        {"artifact", rel(artifact_path(t, *ctx.headline))}};
      tj["importance"] = file_entry(rel(importance_path(t, ".json")));
      tj["importance_table"] = file_entry(rel(importance_path(t, ".tsv")));
      tj["report"] = file_entry(rel(report_path(t)));
      tasks[to_string(t)] = tj;
    }
    hashed["tasks"] = tasks;
    hashed["test_fold_access"] = audit_.reads();
    hashed["warnings"] = warnings_.items;

    nlohmann::json m;
    m["format_version"] = kManifestFormatVersion;
    m["hashed"] = hashed;
    m["manifest_hash"] = content_hash(hashed.dump());
    std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    m["volatile"] = {{"created_utc", stamp},
                     {"out_dir", fs::absolute(out_).string()},
                     {"workers", config_.workers},
                     {"stage_seconds", stage_seconds_}};
    write_file(out_ / "manifest.json", m.dump(1));
    return m;
  }

  Family best_by_validation(Task t) const {
    const auto& ctx = tasks_.at(t);
    std::optional<Family> best;
    for (auto f : config_.families)
      if (!best || ctx.selected.at(f).validation_auc > ctx.selected.at(*best).validation_auc) best = f;
    return *best;
  }

  // Test-fold features, applied on demand and logged in the audit.
  FeatureMatrix test_features(Task t, const std::string& stage) {
    audit_.record(stage);
    auto& ctx = tasks_.at(t);
    return apply_preprocessor(*ctx.preprocessor, ctx.test);
  }

  fs::path artifact_path(Task t, Family f) const { return out_ / "artifacts" / to_string(t) / (to_string(f) + ".json"); }
  fs::path ledger_path(Task t, Family f) const {
    return out_ / "search" / to_string(t) / (to_string(f) + ".ledger.tsv");
  }
  fs::path evaluation_path(Task t, Family f) const {
    return out_ / "evaluation" / to_string(t) / (to_string(f) + ".json");
  }
  fs::path importance_path(Task t, const std::string& ext) const { return out_ / "importance" / (to_string(t) + ext); }
  fs::path report_path(Task t) const { return out_ / "report" / (to_string(t) + ".tsv"); }

 private:
  template <typename Fn>
  void guarded(const std::string& stage, Fn&& fn) {
    auto start = std::chrono::steady_clock::now();
    try {
      fn();
    } catch (const std::exception& e) {
      std::string msg = "[" + stage + "] " + e.what();
      try {
        write_file(out_ / "FAILED", msg + "\n");
      } catch (...) {
      }
      if (dynamic_cast<const ConfigError*>(&e)) throw ConfigError(msg);
      if (dynamic_cast<const SchemaMismatchError*>(&e)) throw SchemaMismatchError(msg);
      throw PipelineError(msg);
    }
    stage_seconds_[stage] =
        stage_seconds_.value(stage, 0.0) +
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }

  std::string rel(const fs::path& p) const { return fs::relative(p, out_).generic_string(); }

  nlohmann::json file_entry(const std::string& relative) const {
    return {{"path", relative}, {"hash", stable_content_hash(out_ / relative)}};
  }

  std::optional<nlohmann::json> load_marker(const std::string& name) {
    const fs::path p = out_ / "stages" / (name + ".json");
    if (!fs::exists(p)) return std::nullopt;
    auto j = nlohmann::json::parse(read_file(p));
    if (j.value("fingerprint", "") != fingerprint_) return std::nullopt;
    for (const auto& w : j.value("warnings", std::vector<std::string>{})) warnings_.add(w);
    return j;
  }

  void mark_done(const std::string& name, nlohmann::json extra, const std::vector<std::string>& warnings = {}) {
    extra["fingerprint"] = fingerprint_;
    extra["warnings"] = warnings;
    for (const auto& w : warnings) warnings_.add(w);
    write_file(out_ / "stages" / (name + ".json"), extra.dump(1));
    fs::remove(out_ / "FAILED");
  }

  void build_task_contexts() {
    tasks_.clear();
    auto [positive, positive_folds] = subcohort_positive(cohort_, folds_);
    for (auto t : config_.tasks) {
      const CohortTable& base = t == Task::sars_cov_2 ? cohort_ : positive;
      const FoldAssignment& f = t == Task::sars_cov_2 ? folds_ : positive_folds;
      TaskContext ctx;
      ctx.task = t;
      ctx.train = base.select_rows(f.indices(Fold::train));
      ctx.validation = base.select_rows(f.indices(Fold::validation));
      ctx.test = base.select_rows(f.indices(Fold::test));
      if (ctx.train.size() == 0) throw PipelineError(to_string(t) + ": empty training fold");
      tasks_.emplace(t, std::move(ctx));
    }
  }

  static std::array<std::size_t, 3> fold_sizes(const TaskContext& c) {
    return {c.train.size(), c.validation.size(), c.test.size()};
  }
  static std::array<std::size_t, 3> fold_positives(const TaskContext& c, Task t) {
    auto count = [&](const CohortTable& x) {
      const auto& y = x.labels(t);
      return static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
    };
    return {count(c.train), count(c.validation), count(c.test)};
  }

  nlohmann::json split_json() const {
    nlohmann::json j;
    j["seed"] = folds_.seed;
    j["folds"] = folds_.encode();
    for (const auto& [t, ctx] : tasks_)
      j["tasks"][to_string(t)] = {{"sizes", fold_sizes(ctx)}, {"positives", fold_positives(ctx, t)}};
    return j;
  }

  void search_one(Task t, Family f) {
    auto& ctx = tasks_.at(t);
    const std::string name = "search_" + to_string(t) + "_" + to_string(f);
    if (auto m = load_marker(name)) {
      ctx.artifacts[f] = load_artifact(artifact_path(t, f).string());
      ctx.selected[f] = {m->at("run_index").get<std::size_t>(), m->at("validation_auc").get<double>()};
      return;
    }
    SearchSpec spec{f, config_.n_runs, derive_seed(config_.seed, "search/" + to_string(t) + "/" + to_string(f)), t};
    const auto& y_train = ctx.train.labels(t);
    const auto& y_val = ctx.validation.labels(t);
    DevelopmentFolds dev{*ctx.x_train, y_train, *ctx.x_validation, y_val, *ctx.preprocessor};
    Warnings w;
    auto candidates = run_search(spec, dev, config_.workers, &w);
    write_file(ledger_path(t, f), format_ledger(spec, candidates));
    const auto& best = select_best(candidates);
    for (const auto& msg : best.warnings)
      w.add(to_string(f) + "/" + to_string(t) + " run " + std::to_string(best.run_index) + ": " + msg);
    ctx.artifacts[f] = *best.artifact;
    ctx.selected[f] = {best.run_index, best.validation_auc};
    write_file(artifact_path(t, f), serialize_artifact(ctx.artifacts[f]));
    mark_done(name, {{"run_index", best.run_index}, {"validation_auc", best.validation_auc}}, w.items);
  }

  void evaluate_task(Task t) {
    auto& ctx = tasks_.at(t);
    const std::string name = "evaluate_" + to_string(t);
    if (auto m = load_marker(name)) {
      for (auto f : config_.families) {
        ctx.evaluations[f] = eval_report_from_json(nlohmann::json::parse(read_file(evaluation_path(t, f))));
        ctx.test_evaluations[f] = m->at("test_evaluations").at(to_string(f)).get<std::size_t>();
        ctx.artifacts[f] = load_artifact(artifact_path(t, f).string());
      }
      ctx.headline = parse_family(m->at("headline").get<std::string>());
      audit_.restore("evaluate", m->at("test_reads").get<std::size_t>());
      return;
    }
    const FeatureMatrix x_test = test_features(t, "evaluate");
    const auto& y_val = ctx.validation.labels(t);
    const auto& y_test = ctx.test.labels(t);
    const std::uint64_t boot_seed = derive_seed(config_.seed, "bootstrap/" + to_string(t));
    nlohmann::json counts;
    for (auto f : config_.families) {
      auto& a = ctx.artifacts.at(f);
      ScoredSet val{predict(a, *ctx.x_validation), y_val};
      ScoredSet test{predict(a, x_test), y_test};
      ctx.evaluations[f] = clinpred::evaluate(val, test, config_.n_bootstrap, boot_seed);
      ctx.test_evaluations[f] = 1;
      counts[to_string(f)] = 1;
      a.operating_threshold = ctx.evaluations[f].operating_threshold;
    }
    // Headline: highest test AUC, earlier family on ties.
    Family head = config_.families.front();
    for (auto f : config_.families)
      if (ctx.evaluations[f].get(Metric::auc).point > ctx.evaluations[head].get(Metric::auc).point) head = f;
    ctx.headline = head;
    for (auto f : config_.families) {
      auto& r = ctx.evaluations[f];
      r.compared_against = to_string(head);
      if (f == head) continue;
      for (auto m : kAllMetrics)
        r.significance[static_cast<int>(m)] =
            pairwise_significance(ctx.evaluations[head].samples_of(m), r.samples_of(m), config_.alpha);
    }
    for (auto f : config_.families) {
      const auto& r = ctx.evaluations[f];
      write_file(evaluation_path(t, f), to_json(r).dump());
      auto stem = out_ / "evaluation" / to_string(t) / to_string(f);
      write_file(stem.string() + ".roc.tsv", format_roc_table(r.roc));
      write_file(stem.string() + ".pr.tsv", format_pr_table(r.pr));
      write_file(artifact_path(t, f), serialize_artifact(ctx.artifacts[f]));
    }
    mark_done(name, {{"headline", to_string(head)}, {"test_reads", 1}, {"test_evaluations", counts}});
  }

  void explain_task(Task t) {
    auto& ctx = tasks_.at(t);
    const std::string name = "explain_" + to_string(t);
    if (auto m = load_marker(name)) {
      ctx.importance = importance_from_json(nlohmann::json::parse(read_file(importance_path(t, ".json"))));
      audit_.restore("explain", m->at("test_reads").get<std::size_t>());
      return;
    }
    const FeatureMatrix x_test = test_features(t, "explain");
    const auto& a = ctx.artifacts.at(*ctx.headline);
    ctx.importance = marginal_importance(a, x_test, ctx.test.labels(t), config_.workers);
    auto grouped = grouped_importance(*ctx.importance, *ctx.preprocessor);
    write_file(importance_path(t, ".json"), to_json(*ctx.importance).dump());
    write_file(importance_path(t, ".tsv"), format_importance_table(grouped, kImportanceDisplayCut));
    write_file(importance_path(t, ".all.tsv"), format_importance_table(grouped));
    std::vector<std::string> w;
    if (ctx.importance->degenerate) w.push_back(to_string(t) + ": every importance contribution was 0; uniform importances reported");
    mark_done(name, {{"test_reads", 1}}, w);
  }

  PipelineConfig config_;
  fs::path out_;
  std::string cohort_bytes_, schema_bytes_;
  SchemaConfig schema_;
  CohortTable cohort_;
  std::string fingerprint_;
  FoldAssignment folds_;
  std::map<Task, TaskContext> tasks_;
  TestFoldAudit audit_;
  Warnings warnings_;
  nlohmann::json stage_seconds_ = nlohmann::json::object();
  bool split_done_ = false, preprocess_done_ = false, search_done_ = false, evaluate_done_ = false,
       explain_done_ = false;
};

inline nlohmann::json run_pipeline(const PipelineConfig& config) {
  Pipeline p(config);
  return p.run();
}

// Problems found when re-hashing a manifest and the files it references;
// empty when everything matches.
inline std::vector<std::string> verify_manifest(const fs::path& manifest_path) {
  std::vector<std::string> problems;
  auto m = nlohmann::json::parse(read_file(manifest_path));
  const fs::path root = manifest_path.parent_path();
  if (content_hash(m.at("hashed").dump()) != m.at("manifest_hash").get<std::string>())
    problems.push_back("manifest hash does not match its content");
  std::function<void(const nlohmann::json&)> walk = [&](const nlohmann::json& j) {
    if (j.is_object()) {
      if (j.contains("path") && j.contains("hash") && j.size() == 2) {
        const fs::path p = root / j.at("path").get<std::string>();
        if (!fs::exists(p)) problems.push_back("missing file " + p.string());
        else if (stable_content_hash(p) != j.at("hash").get<std::string>())
          problems.push_back("hash mismatch for " + p.string());
        return;
      }
      for (const auto& [k, v] : j.items()) walk(v);
    } else if (j.is_array()) {
      for (const auto& v : j) walk(v);
    }
  };
  walk(m.at("hashed"));
  return problems;
}

}  // namespace clinpred
