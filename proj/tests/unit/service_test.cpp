#include <gtest/gtest.h>

#include "clinpred/service.hpp"
#include "pipeline_support.hpp"

using namespace clinpred;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

class Service : public ::testing::Test {
 protected:
  static inline TempDir* dir = nullptr;
  static inline ServiceModels* models = nullptr;

  static void SetUpTestSuite() {
    dir = new TempDir("service");
    write_file(*dir / "cohort.csv", small_cohort_csv());
    run_pipeline(small_config(*dir / "cohort.csv", *dir / "out"));
    models = new ServiceModels(ServiceModels::from_manifest(dir->path / "out" / "manifest.json"));
  }
  static void TearDownTestSuite() {
    delete models;
    delete dir;
  }

  static nlohmann::json score(const nlohmann::json& req, int expect_status = 200) {
    auto r = handle_score(*models, req.dump());
    EXPECT_EQ(r.status, expect_status) << r.body;
    return nlohmann::json::parse(r.body);
  }

  static nlohmann::json to_wire(const RawRecord& rec) {
    nlohmann::json f = nlohmann::json::object();
    for (const auto& [k, v] : rec) {
      if (auto d = std::get_if<double>(&v)) f[k] = *d;
      else if (auto s = std::get_if<std::string>(&v)) f[k] = *s;
      else f[k] = nullptr;
    }
    return f;
  }
};

}  // namespace

TEST_F(Service, KnownRecordMatchesBatchPredictions) {
  Pipeline p(small_config(dir->path / "cohort.csv", dir->path / "out"));
  p.split();
  const auto& test = p.task(Task::sars_cov_2).test;
  for (std::size_t r = 0; r < test.size(); r += 5) {
    RawRecord merged;
    for (const auto& [t, a] : models->artifacts) {
      auto rec = record_of(test, r, a.preprocessor);
      merged.insert(rec.begin(), rec.end());
    }
    auto body = score({{"schema_version", 1}, {"features", to_wire(merged)}});
    ASSERT_EQ(body.at("status"), "ok");
    for (const auto& [t, a] : models->artifacts) {
      const auto batch = predict(a, apply_preprocessor(a.preprocessor, test.select_rows({r})));
      const auto& res = body.at("results").at(to_string(t));
      EXPECT_EQ(res.at("probability").get<double>(), batch[0]);
      double total = 0;
      for (const auto& e : res.at("attributions")) total += std::abs(e.at("delta").get<double>());
      if (!res.at("degenerate").get<bool>()) EXPECT_NEAR(total, 1.0, 1e-6);
      ASSERT_TRUE(res.at("operating_threshold").is_number());
      EXPECT_EQ(res.at("triage").get<bool>(),
                res.at("probability").get<double>() >= res.at("operating_threshold").get<double>());
      EXPECT_EQ(body.at("model_versions").at(to_string(t)), models->versions.at(t));
    }
  }
}

TEST_F(Service, UnknownFeatureIsInvalidInput) {
  auto body = score({{"schema_version", 1}, {"features", {{"Hematocrit", 0.1}, {"Blood type", "A"}}}}, 400);
  EXPECT_EQ(body.at("status"), "invalid input");
  EXPECT_EQ(body.at("error").at("key"), "Blood type");
}

TEST_F(Service, KindMismatchAndEnvelopeErrors) {
  EXPECT_EQ(score({{"schema_version", 1}, {"features", {{"Hematocrit", "high"}}}}, 400)["error"]["key"], "Hematocrit");
  EXPECT_EQ(score({{"schema_version", 2}, {"features", nlohmann::json::object()}}, 400)["error"]["key"],
            "schema_version");
  EXPECT_EQ(score({{"schema_version", 1}, {"extra", 1}}, 400)["error"]["key"], "extra");
  EXPECT_EQ(score({{"schema_version", 1}, {"tasks", {"flu"}}}, 400)["error"]["key"], "tasks");
  EXPECT_EQ(score({{"schema_version", 1}, {"tasks", nlohmann::json::array()}}, 400)["error"]["key"], "tasks");
  auto r = handle_score(*models, "{not json");
  EXPECT_EQ(r.status, 400);
}

TEST_F(Service, EmptyFeatureMapIsDegenerate) {
  auto body = score({{"schema_version", 1}, {"features", nlohmann::json::object()}});
  ASSERT_EQ(body.at("results").size(), 3u);
  for (const auto& [t, res] : body.at("results").items()) {
    EXPECT_TRUE(res.at("degenerate").get<bool>());
    double p = res.at("probability").get<double>();
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
  EXPECT_TRUE(body.at("metadata").at("attribution_method").is_string());
}

TEST_F(Service, NullMeansMissing) {
  auto a = score({{"schema_version", 1}, {"features", {{"Hematocrit", nullptr}}}, {"tasks", {"icu"}}});
  auto b = score({{"schema_version", 1}, {"features", nlohmann::json::object()}, {"tasks", {"icu"}}});
  EXPECT_EQ(a.at("results"), b.at("results"));
  EXPECT_EQ(a.at("results").size(), 1u);
}

TEST_F(Service, IdenticalRequestsGiveIdenticalBodies) {
  nlohmann::json req = {{"schema_version", 1}, {"features", {{"Hematocrit", -0.4}, {"Influenza B", "detected"}}}};
  EXPECT_EQ(handle_score(*models, req.dump()).body, handle_score(*models, req.dump()).body);
}

TEST_F(Service, SchemaListsFeatures) {
  auto r = handle_schema(*models);
  ASSERT_EQ(r.status, 200);
  auto j = nlohmann::json::parse(r.body);
  EXPECT_EQ(j.at("schema_version"), 1);
  std::map<std::string, nlohmann::json> by_name;
  for (const auto& f : j.at("features")) by_name[f.at("name")] = f;
  ASSERT_TRUE(by_name.count("Hematocrit"));
  EXPECT_EQ(by_name["Hematocrit"]["kind"], "numeric");
  EXPECT_EQ(by_name["Influenza A"]["kind"], "categorical");
  EXPECT_EQ(by_name["Influenza A"]["categories"], (nlohmann::json{"detected", "not_detected"}));
  EXPECT_EQ(by_name["Mycoplasma pneumoniae"]["ignored_by"].size(), 3u);
}

TEST_F(Service, HealthReportsVersions) {
  auto j = nlohmann::json::parse(handle_health(*models).body);
  EXPECT_EQ(j.at("status"), "ok");
  EXPECT_EQ(j.at("model_versions").size(), 3u);
  EXPECT_GE(j.at("uptime_seconds").get<double>(), 0.0);
}

TEST_F(Service, MissingManifestRefusesToStart) {
  EXPECT_THROW(ServiceModels::from_manifest(dir->path / "nope" / "manifest.json"), PipelineError);
}
