// Acceptance gate: one PASS/FAIL line per criterion.
//
//   acceptance                 all twelve criteria
//   acceptance --group core    criteria 6-12 (no external data)
//   acceptance --group cohort  criteria 1-5 (public cohort CSV required)
//
// The cohort is read from $CLINPRED_COHORT (default data/dataset.csv);
// $CLINPRED_WORKERS sets the worker count for the cohort runs.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <random>
#include <string>
#include <thread>

#include "../unit/pipeline_support.hpp"
#include "clinpred/explain.hpp"
#include "clinpred/metrics.hpp"
#include "clinpred/model.hpp"

using namespace clinpred;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ------------------------------------------------------------------
// criteria 6-12
// ------------------------------------------------------------------

Outcome metric_oracles() {
  std::mt19937_64 rng(606);
  std::uniform_int_distribution<std::size_t> size(2, 50);
  double worst = 0;
  for (int k = 0; k < 200; ++k) {
    auto s = random_scored_set(rng, size(rng), k % 2 == 0);
    worst = std::max({worst, std::abs(roc_auc(s) - concordance_auc(s)), std::abs(aupr(s) - scan_aupr(s)),
                      std::abs(spec_at_95_sens(s) - scan_spec_at_95(s))});
  }
  return {worst <= 1e-9, "200 sets, max abs difference " + fmt("%.3g", worst) + " (tolerance 1e-9)"};
}

Outcome bootstrap_coverage() {
  // Positives ~ N(mu, 1), negatives ~ N(0, 1): true AUC = Phi(mu / sqrt 2).
  const double mu = 1.0;
  const double truth = 0.5 * std::erfc(-mu / 2.0);
  std::mt19937_64 rng(707);
  std::normal_distribution<double> g(0, 1);
  int covered = 0;
  const int trials = 500;
  for (int t = 0; t < trials; ++t) {
    ScoredSet s;
    for (int i = 0; i < 200; ++i) {
      const bool pos = i < 60;
      s.scores.push_back(g(rng) + (pos ? mu : 0.0));
      s.labels.push_back(pos);
    }
    auto r = bootstrap_ci(s, [](const ScoredSet& x) { return roc_auc(x); }, 100, derive_seed(707, t));
    covered += r.ci.low <= truth && truth <= r.ci.high;
  }
  const double rate = covered / double(trials);
  return {rate >= 0.90 && rate <= 0.99,
          "coverage " + fmt("%.3f", rate) + " over 500 trials of 100-sample CIs (required 0.90-0.99)"};
}

Outcome nn_gradient() {
  double worst = 0;
  for (long layers : {1L, 2L})
    for (std::uint64_t seed : {1ull, 2ull, 3ull})
      worst = std::max(worst, nn_gradient_max_rel_error(Activation::elu, layers, seed, 1e-5));
  return {worst < 1e-4, "max relative error " + fmt("%.3g", worst) + " (ELU, eps 1e-5, required < 1e-4)"};
}

Outcome preprocessing_invariants() {
  SyntheticOptions o;
  o.patients = 1500;
  o.blood_panel_rate = 0.3;
  auto cohort = parse_cohort(synthetic_cohort_csv(o, 909), SchemaConfig{});
  auto folds = stratified_split(cohort, kDefaultSplit, 909);
  auto train = cohort.select_rows(folds.indices(Fold::train));
  auto st = fit_preprocessor(train);
  std::vector<std::string> problems;

  auto x_train = apply_preprocessor(st, train);
  double worst_moment = 0;
  for (std::size_t j = 0; j < st.continuous.size(); ++j) {
    const auto& s = st.continuous[j];
    const auto& raw = *train.find(s.column);
    const auto it = std::find(x_train.names.begin(), x_train.names.end(), s.column);
    const auto col = static_cast<Eigen::Index>(it - x_train.names.begin());
    double sum = 0, sq = 0, n = 0;
    for (std::size_t r = 0; r < train.size(); ++r) {
      if (!raw.numbers[r]) continue;
      const double v = x_train.values(static_cast<Eigen::Index>(r), col);
      const double expect = s.inert ? 0.0 : (*raw.numbers[r] - s.mean) / s.std;
      if (v != expect) problems.push_back("observed value altered in " + s.column);
      sum += v, sq += v * v, n += 1;
    }
    if (s.inert) continue;
    const double mean = sum / n;
    worst_moment = std::max({worst_moment, std::abs(mean), std::abs(std::sqrt(sq / n - mean * mean) - 1)});
  }
  if (worst_moment > 1e-9) problems.push_back("standardized moments off by " + fmt("%.3g", worst_moment));

  for (auto f : {Fold::train, Fold::validation, Fold::test}) {
    auto fold = cohort.select_rows(folds.indices(f));
    auto x = apply_preprocessor(st, fold);
    auto again = apply_preprocessor(st, fold);
    if (!x.values.allFinite()) problems.push_back("non-finite output");
    if (!(x.values.array() == again.values.array()).all()) problems.push_back("apply not bit-exact");
    for (const auto& d : st.discrete)
      for (Eigen::Index r = 0; r < x.values.rows(); ++r) {
        double s = 0;
        for (std::size_t j = 0; j < x.cols(); ++j)
          if (x.names[j].rfind(d.column + "=", 0) == 0) s += x.values(r, static_cast<Eigen::Index>(j));
        if (s != 1.0) {
          problems.push_back("one-hot group " + d.column + " sums to " + fmt("%g", s));
          break;
        }
      }
  }
  std::string detail = std::to_string(st.continuous.size()) + " continuous, " + std::to_string(st.discrete.size()) +
                       " discrete columns; max moment error " + fmt("%.3g", worst_moment);
  if (!problems.empty()) detail += "; " + problems.front();
  return {problems.empty(), detail};
}

Outcome pipeline_determinism() {
  TempDir d("acceptance_det");
  write_file(d / "cohort.csv", small_cohort_csv(200, 10));
  auto a = run_pipeline(small_config(d / "cohort.csv", d / "a", 1));
  auto b = run_pipeline(small_config(d / "cohort.csv", d / "b", 2));
  const auto ha = a.at("manifest_hash").get<std::string>(), hb = b.at("manifest_hash").get<std::string>();
  return {ha == hb, "manifest hashes " + ha.substr(0, 12) + " / " + hb.substr(0, 12)};
}

Outcome sampling_conformance() {
  auto r = hyperparam_sampling_check(10000, 1111);
  const bool pass = r.min_p > 0.01 && std::abs(r.dropout_mean - 0.125) <= 0.005;
  return {pass, "min chi-square p " + fmt("%.3f", r.min_p) + " (" + r.worst_param + "), dropout mean " +
                    fmt("%.4f", r.dropout_mean)};
}

Outcome artifact_round_trip() {
  std::mt19937_64 rng(1212);
  std::normal_distribution<double> g(0, 1);
  auto make = [&](Eigen::Index n, Matrix& x, std::vector<std::uint8_t>& y) {
    x = Matrix(n, 6);
    y.clear();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < 6; ++j) x(i, j) = g(rng);
      y.push_back(x(i, 0) - x(i, 1) + 0.5 * g(rng) > 0);
    }
  };
  Matrix xt, xv, fixture;
  std::vector<std::uint8_t> yt, yv, yf;
  make(200, xt, yt);
  make(80, xv, yv);
  make(100, fixture, yf);
  std::size_t checked = 0;
  for (auto f : kAllFamilies) {
    for (std::uint64_t s = 0; s < 3; ++s) {
      auto a = train_model(sample_hyperparams(f, derive_seed(1212, s)), {xt, yt, xv, yv}, s);
      a.operating_threshold = 0.5;
      auto back = deserialize_artifact(serialize_artifact(a));
      if (predict_features(a, fixture) != predict_features(back, fixture))
        return {false, to_string(f) + " predictions changed after reload"};
      ++checked;
    }
  }
  return {true, std::to_string(checked) + " artifacts over 5 families, 100-row fixture bit-identical"};
}

// ------------------------------------------------------------------
// criteria 1-5
// ------------------------------------------------------------------

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? v : fallback;
}

struct CohortRuns {
  std::string error;
  std::vector<nlohmann::json> manifests;
  std::vector<fs::path> outs;
};

CohortRuns run_cohort(const std::string& path) {
  CohortRuns r;
  const std::size_t workers = std::stoul(env_or("CLINPRED_WORKERS", std::to_string(std::max(1u, std::thread::hardware_concurrency()))));
  const fs::path root = env_or("CLINPRED_ACCEPTANCE_OUT", (fs::temp_directory_path() / "clinpred_acceptance").string());
  for (std::uint64_t seed : {2020ull, 2021ull, 2022ull}) {
    PipelineConfig c;
    c.cohort = path;
    c.seed = seed;
    c.workers = workers;
    c.out = (root / ("seed_" + std::to_string(seed))).string();
    auto start = std::chrono::steady_clock::now();
    r.manifests.push_back(run_pipeline(c));
    r.outs.push_back(c.out);
    std::cerr << "cohort run seed " << seed << ": "
              << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() << " s\n";
  }
  return r;
}

double model_test_auc(const nlohmann::json& task, const std::string& family) {
  for (const auto& m : task.at("models"))
    if (m.at("family") == family) return m.at("test_auc").get<double>();
  throw PipelineError("family " + family + " missing from manifest");
}

Outcome split_reproduction(const CohortTable& cohort) {
  const double target_rate[3] = {9.85, 9.92, 9.92};
  const std::size_t target_size[3] = {2822, 1129, 1693};
  double worst_rate = 0;
  long worst_size = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto f = stratified_split(cohort, kDefaultSplit, derive_seed(seed, "split"));
    for (int k = 0; k < 3; ++k) {
      auto idx = f.indices(static_cast<Fold>(k));
      std::size_t pos = 0;
      for (auto i : idx) pos += cohort.y_sars_cov_2[i];
      worst_size = std::max(worst_size, std::labs(long(idx.size()) - long(target_size[k])));
      worst_rate = std::max(worst_rate, std::abs(100.0 * pos / double(idx.size()) - target_rate[k]));
    }
  }
  return {worst_size <= 1 && worst_rate <= 0.15,
          "20 seeds: max fold size deviation " + std::to_string(worst_size) + ", max positive-rate deviation " +
              fmt("%.3f", worst_rate) + " pp"};
}

Outcome task_auc(const CohortRuns& runs, const std::string& task, bool by_validation, double low, double high) {
  std::string detail;
  bool pass = true;
  for (std::size_t k = 0; k < runs.manifests.size(); ++k) {
    const auto& tj = runs.manifests[k].at("hashed").at("tasks").at(task);
    const std::string fam = by_validation ? tj.at("best_by_validation").get<std::string>()
                                          : tj.at("headline").at("family").get<std::string>();
    const double auc = model_test_auc(tj, fam);
    pass &= auc >= low && auc <= high;
    detail += (k ? ", " : "") + fam + " " + fmt("%.3f", auc);
  }
  return {pass, "test AUC per seed: " + detail};
}

Outcome importance_sanity(const CohortRuns& runs) {
  bool pass = true;
  std::string detail;
  for (std::size_t k = 0; k < runs.outs.size(); ++k) {
    const auto table = read_file(runs.outs[k] / "importance" / "sars_cov_2.tsv");
    const auto hit = table.find(std::string(kMissingSuffix) + "\t");
    pass &= hit != std::string::npos;
    std::string name = "none";
    if (hit != std::string::npos) {
      auto bol = table.rfind('\n', hit) + 1;
      name = table.substr(bol, hit - bol) + kMissingSuffix;
    }
    detail += (k ? ", " : "") + name;
  }
  return {pass, "first missing indicator in top 10 per seed: " + detail};
}

// ------------------------------------------------------------------

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> check;
};

bool report(const Criterion& c) {
  Outcome o;
  auto start = std::chrono::steady_clock::now();
  try {
    o = c.check();
  } catch (const std::exception& e) {
    o = {false, std::string("error: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%s %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
  return o.pass;
}

}  // namespace

int main(int argc, char** argv) {
  std::string group = "all";
  for (int i = 1; i < argc; ++i)
    if (std::string(argv[i]) == "--group" && i + 1 < argc) group = argv[++i];
  if (group != "all" && group != "core" && group != "cohort") {
    std::cerr << "usage: acceptance [--group all|core|cohort]\n";
    return 2;
  }

  bool ok = true;
  if (group != "core") {
    const std::string path = env_or("CLINPRED_COHORT", "data/dataset.csv");
    std::optional<CohortTable> cohort;
    std::optional<CohortRuns> runs;
    std::string missing;
    if (!fs::exists(path)) missing = "cohort file not found: " + path;
    else {
      try {
        cohort = parse_cohort(read_file(path), SchemaConfig{});
      } catch (const std::exception& e) {
        missing = std::string("cohort file unreadable: ") + e.what();
      }
    }
    auto need_cohort = [&]() -> const CohortTable& {
      if (!cohort) throw PipelineError(missing);
      return *cohort;
    };
    auto need_runs = [&]() -> const CohortRuns& {
      need_cohort();
      if (!runs) runs = run_cohort(path);
      return *runs;
    };
    std::vector<Criterion> cohort_criteria = {
        {1, "cohort split reproduction", [&] { return split_reproduction(need_cohort()); }},
        {2, "task (i) best-by-validation test AUC in [0.60, 0.72]",
         [&] { return task_auc(need_runs(), "sars_cov_2", true, 0.60, 0.72); }},
        {3, "task (ii) headline test AUC >= 0.80", [&] { return task_auc(need_runs(), "admission", false, 0.80, 1.0); }},
        {4, "task (iii) headline test AUC >= 0.90", [&] { return task_auc(need_runs(), "icu", false, 0.90, 1.0); }},
        {5, "task (i) missing indicator in top-10 importance", [&] { return importance_sanity(need_runs()); }},
    };
    for (const auto& c : cohort_criteria) ok &= report(c);
  }
  if (group != "cohort") {
    std::vector<Criterion> core = {
        {6, "metric oracle equivalence", metric_oracles},
        {7, "bootstrap coverage", bootstrap_coverage},
        {8, "NN gradient check", nn_gradient},
        {9, "preprocessing invariant suite", preprocessing_invariants},
        {10, "pipeline determinism", pipeline_determinism},
        {11, "hyperparameter sampling conformance", sampling_conformance},
        {12, "artifact round-trip", artifact_round_trip},
    };
    for (const auto& c : core) ok &= report(c);
  }
  return ok ? 0 : 1;
}
