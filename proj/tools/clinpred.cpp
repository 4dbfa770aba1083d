// clinpred: command-line front end for the prediction pipeline.

#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "clinpred/pipeline.hpp"
#include "clinpred/scoring.hpp"
#include "clinpred/service.hpp"
#include "clinpred/synthetic.hpp"

using namespace clinpred;

namespace {

struct PipelineFlags {
  std::string config;
  std::map<std::string, std::string> values;
};

void add_pipeline_flags(CLI::App* cmd, PipelineFlags& f) {
  cmd->add_option("--config", f.config, "key = value config file");
  auto opt = [&](const std::string& flag, const std::string& key, const std::string& help) {
    cmd->add_option_function<std::string>(flag, [&f, key](const std::string& v) { f.values[key] = v; }, help);
  };
  opt("--cohort", "cohort", "cohort CSV file");
  opt("--schema", "schema", "schema config file (column names, label tokens)");
  opt("--seed", "seed", "root seed");
  opt("--out", "out", "output directory");
  opt("--workers", "workers", "worker threads");
  opt("--task", "task", "sars_cov_2|admission|icu|all (comma list allowed)");
  opt("--family", "family", "lr|nn|rf|svm|xgb|all (comma list allowed)");
  opt("--runs", "n_runs", "random-search runs per family");
  opt("--bootstrap", "bootstrap", "bootstrap resamples");
  opt("--chained-iterations", "n_chained_iterations", "chained-equation imputation passes");
}

void print_warnings(const nlohmann::json& manifest) {
  for (const auto& w : manifest.at("hashed").at("warnings")) std::cerr << "WARNING: " << w.get<std::string>() << "\n";
}

RawRecord record_from_json(const nlohmann::json& j) {
  RawRecord r;
  for (const auto& [k, v] : j.items()) {
    if (v.is_null()) r[k] = std::monostate{};
    else if (v.is_number()) r[k] = v.get<double>();
    else if (v.is_string()) r[k] = v.get<std::string>();
    else throw ValidationError(k, "feature '" + k + "' must be a number, string or null");
  }
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clinical prediction pipeline: split, preprocess, search, evaluate, explain, report, score, serve"};
  app.require_subcommand(1);

  PipelineFlags flags;
  const std::vector<std::pair<std::string, std::string>> stages = {
      {"split", "stratified train/validation/test split"},
      {"preprocess", "fit and persist per-task preprocessors"},
      {"search", "random hyperparameter search and model selection"},
      {"evaluate", "single test-fold evaluation of every selected model"},
      {"explain", "test-fold feature importance for each headline model"},
      {"report", "per-task comparison tables"},
      {"run", "every stage, then the manifest"}};
  std::map<std::string, CLI::App*> stage_cmds;
  for (const auto& [name, help] : stages) {
    auto* c = app.add_subcommand(name, help);
    add_pipeline_flags(c, flags);
    stage_cmds[name] = c;
  }

  auto* score_cmd = app.add_subcommand("score", "score one record with a saved artifact");
  std::string artifact_path, record_path;
  std::size_t top_k = 10;
  score_cmd->add_option("--artifact", artifact_path, "model artifact file")->required();
  score_cmd->add_option("--record", record_path, "JSON object of feature values (null = missing); '-' reads stdin")
      ->required();
  score_cmd->add_option("--top", top_k, "attribution entries to print (0 = all)");

  auto* serve_cmd = app.add_subcommand("serve", "serve headline models over HTTP");
  std::string manifest_path = "out/manifest.json", host = "127.0.0.1";
  int port = 8080;
  serve_cmd->add_option("--manifest", manifest_path, "run manifest");
  serve_cmd->add_option("--host", host, "bind address");
  serve_cmd->add_option("--port", port, "bind port");

  auto* verify_cmd = app.add_subcommand("verify", "re-hash a manifest and the files it names");
  verify_cmd->add_option("--manifest", manifest_path, "run manifest");

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic cohort in the public column layout");
  SyntheticOptions synth;
  std::uint64_t synth_seed = 1;
  std::string synth_out = "synthetic.csv";
  synth_cmd->add_option("--patients", synth.patients, "number of patients");
  synth_cmd->add_option("--prevalence", synth.prevalence, "SARS-CoV-2 positive fraction");
  synth_cmd->add_option("--seed", synth_seed, "generator seed");
  synth_cmd->add_option("--out", synth_out, "output CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    for (const auto& [name, cmd] : stage_cmds) {
      if (!cmd->parsed()) continue;
      Pipeline p(resolve_config(flags.config, flags.values));
      if (name == "split") p.split();
      else if (name == "preprocess") p.preprocess();
      else if (name == "search") p.search();
      else if (name == "evaluate") p.evaluate();
      else if (name == "explain") p.explain();
      else if (name == "report") p.report();
      else {
        auto m = p.run();
        print_warnings(m);
        std::cout << "manifest " << (p.out_dir() / "manifest.json").string() << " hash "
                  << m.at("manifest_hash").get<std::string>() << "\n";
        for (const auto& [task, tj] : m.at("hashed").at("tasks").items())
          std::cout << task << ": headline " << tj.at("headline").at("family").get<std::string>() << "\n";
        return 0;
      }
      std::cout << name << " complete in " << p.out_dir().string() << "\n";
      return 0;
    }
    if (score_cmd->parsed()) {
      auto a = load_artifact(artifact_path);
      std::string text = record_path == "-" ? std::string(std::istreambuf_iterator<char>(std::cin), {})
                                            : read_file(record_path);
      auto r = score_record(a, record_from_json(nlohmann::json::parse(text)), top_k);
      nlohmann::json out = {{"probability", r.probability}, {"degenerate", r.degenerate}};
      out["operating_threshold"] = r.operating_threshold ? nlohmann::json(*r.operating_threshold) : nlohmann::json();
      for (const auto& e : r.attributions) out["attributions"].push_back({{"feature", e.feature}, {"delta", e.delta}});
      std::cout << out.dump(2) << "\n";
      return 0;
    }
    if (serve_cmd->parsed()) {
      auto models = ServiceModels::from_manifest(manifest_path);
      std::cerr << "serving " << models.artifacts.size() << " models on " << host << ":" << port << "\n";
      serve(models, host, port);
      return 0;
    }
    if (verify_cmd->parsed()) {
      auto problems = verify_manifest(manifest_path);
      for (const auto& p : problems) std::cerr << p << "\n";
      std::cout << (problems.empty() ? "manifest ok" : "manifest FAILED verification") << "\n";
      return problems.empty() ? 0 : 1;
    }
    if (synth_cmd->parsed()) {
      write_file(synth_out, synthetic_cohort_csv(synth, synth_seed));
      std::cout << "wrote " << synth.patients << " patients to " << synth_out << "\n";
      return 0;
    }
  } catch (const ValidationError& e) {
    std::cerr << "invalid input (" << e.key << "): " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
