#pragma once

// Random hyperparameter search per (family, task) and validation-AUC model
// selection. Nothing here receives test-fold data.

#include <chrono>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "clinpred/common.hpp"
#include "clinpred/hyperparams.hpp"
#include "clinpred/metrics.hpp"
#include "clinpred/model.hpp"

namespace clinpred {

struct SearchSpec {
  Family family = Family::lr;
  std::size_t n_runs = 30;
  std::uint64_t seed = 0;
  Task task = Task::sars_cov_2;
};

// Training and validation folds only.
struct DevelopmentFolds {
  const FeatureMatrix& train;
  const std::vector<std::uint8_t>& y_train;
  const FeatureMatrix& validation;
  const std::vector<std::uint8_t>& y_validation;
  const PreprocessorState& preprocessor;
};

struct CandidateRecord {
  Hyperparams hyperparams;
  double validation_auc = 0;
  std::size_t run_index = 0;
  bool failed = false;
  std::string failure;
  double wall_seconds = 0;
  std::vector<std::string> warnings;
  std::shared_ptr<ModelArtifact> artifact;
};

// AUC on validation scores; 0.5 (with a warning) when the labels hold a
// single class.
inline double validation_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels,
                             std::vector<std::string>& warnings) {
  ScoredSet s{scores, labels};
  if (s.positives() == 0 || s.negatives() == 0) {
    warnings.push_back("single-class validation labels: validation AUC set to 0.5");
    return 0.5;
  }
  return roc_auc(s);
}

inline std::uint64_t run_seed(const SearchSpec& spec, std::size_t run_index) {
  return spec.seed + run_index;
}

inline CandidateRecord run_candidate(const SearchSpec& spec, std::size_t run_index, const DevelopmentFolds& folds) {
  const auto seed = run_seed(spec, run_index);
  CandidateRecord rec;
  rec.run_index = run_index;
  rec.hyperparams = sample_hyperparams(spec.family, derive_seed(seed, "hyperparams"));
  auto start = std::chrono::steady_clock::now();
  try {
    auto artifact = std::make_shared<ModelArtifact>(
        train_model(rec.hyperparams,
                    {folds.train.values, folds.y_train, folds.validation.values, folds.y_validation},
                    derive_seed(seed, "train"), spec.task));
    artifact->preprocessor = folds.preprocessor;
    rec.warnings = artifact->warnings;
    rec.validation_auc = validation_auc(predict(*artifact, folds.validation), folds.y_validation, rec.warnings);
    artifact->validation_auc = rec.validation_auc;
    artifact->warnings = rec.warnings;
    rec.artifact = std::move(artifact);
  } catch (const TrainingDivergedError& e) {
    rec.failed = true;
    rec.failure = e.what();
    rec.validation_auc = 0;
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

// Trains spec.n_runs candidates; results are in run_index order regardless
// of how many workers run them.
inline std::vector<CandidateRecord> run_search(const SearchSpec& spec, const DevelopmentFolds& folds,
                                               std::size_t workers = 1, Warnings* warnings = nullptr) {
  if (spec.n_runs < 1) throw ConfigError("n_runs must be at least 1");
  std::vector<CandidateRecord> out(spec.n_runs);
  parallel_for(spec.n_runs, workers, [&](std::size_t r) { out[r] = run_candidate(spec, r, folds); });
  std::size_t failed = 0;
  for (const auto& c : out) failed += c.failed;
  if (warnings && 2 * failed >= spec.n_runs)
    warnings->add("WARNING: " + std::to_string(failed) + " of " + std::to_string(spec.n_runs) + " " +
                  to_string(spec.family) + "/" + to_string(spec.task) + " runs failed");
  return out;
}

// Highest validation AUC; ties go to the lower run index.
inline const CandidateRecord& select_best(const std::vector<CandidateRecord>& candidates) {
  if (candidates.empty()) throw PipelineError("selection error: no candidates");
  const CandidateRecord* best = nullptr;
  for (const auto& c : candidates) {
    if (c.failed) continue;
    if (!best || c.validation_auc > best->validation_auc ||
        (c.validation_auc == best->validation_auc && c.run_index < best->run_index))
      best = &c;
  }
  if (!best) throw PipelineError("selection error: every candidate failed");
  return *best;
}

inline constexpr const char* kLedgerHeader =
    "family\ttask\trun_index\thyperparams\tvalidation_auc\twall_seconds\tfailed";

// One row per run. `with_timing = false` blanks the wall-time column, which
// is the form used for content hashing.
inline std::string format_ledger(const SearchSpec& spec, const std::vector<CandidateRecord>& candidates,
                                 bool with_timing = true) {
  std::string out = std::string(kLedgerHeader) + "\n";
  char buf[64];
  for (const auto& c : candidates) {
    out += to_string(spec.family) + "\t" + to_string(spec.task) + "\t" + std::to_string(c.run_index) + "\t" +
           describe(c.hyperparams) + "\t";
    std::snprintf(buf, sizeof buf, "%.17g", c.validation_auc);
    out += buf;
    out += "\t";
    if (with_timing) {
      std::snprintf(buf, sizeof buf, "%.3f", c.wall_seconds);
      out += buf;
    }
    out += std::string("\t") + (c.failed ? "1" : "0") + "\n";
  }
  return out;
}

}  // namespace clinpred
