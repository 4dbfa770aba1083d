#pragma once

// Local HTTP scoring service over the per-task headline artifacts named in
// a run manifest. Request handlers are plain functions of (models, body) so
// they can be exercised without a socket.

#include <chrono>
#include <filesystem>
#include <map>
#include <set>
#include <string>

#include "clinpred/pipeline.hpp"
#include "clinpred/scoring.hpp"
#include "httplib.h"
#include "json.hpp"

namespace clinpred {

inline constexpr int kWireSchemaVersion = 1;

inline constexpr const char* kAttributionNote =
    "attributions are signed changes in this record's predicted probability when each feature is masked "
    "(continuous value set to the training mean, indicator or category set to absent), normalized so the "
    "listed absolute values sum to 1; they use no labels and differ from the test-fold loss-based "
    "importance tables";

struct ServiceModels {
  std::map<Task, ModelArtifact> artifacts;
  std::map<Task, std::string> versions;  // artifact content hashes
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  static ServiceModels from_manifest(const std::filesystem::path& manifest_path) {
    ServiceModels s;
    nlohmann::json m;
    try {
      m = nlohmann::json::parse(read_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
      throw PipelineError("manifest is not valid JSON: " + std::string(e.what()));
    }
    const auto root = manifest_path.parent_path();
    for (const auto& [task_name, tj] : m.at("hashed").at("tasks").items()) {
      const Task t = parse_task(task_name);
      const auto rel = tj.at("headline").at("artifact").get<std::string>();
      const auto path = root / rel;
      try {
        s.artifacts.emplace(t, load_artifact(path.string()));
      } catch (const std::exception& e) {
        throw PipelineError("cannot load headline artifact " + path.string() + ": " + e.what());
      }
      s.versions[t] = stable_content_hash(path);
    }
    if (s.artifacts.empty()) throw PipelineError("manifest names no headline artifacts");
    return s;
  }
};

struct HttpReply {
  int status = 200;
  std::string body;
};

namespace detail {

inline HttpReply invalid_input(const std::string& key, const std::string& message) {
  nlohmann::json j = {{"schema_version", kWireSchemaVersion},
                      {"status", "invalid input"},
                      {"error", {{"key", key}, {"message", message}}}};
  return {400, j.dump()};
}

inline RawRecord parse_features(const nlohmann::json& features, const ServiceModels& models) {
  std::map<std::string, ColumnKind> kinds;
  for (const auto& [t, a] : models.artifacts)
    for (const auto& [name, kind] : a.preprocessor.input_columns) kinds.emplace(name, kind);
  RawRecord r;
  for (const auto& [key, v] : features.items()) {
    auto it = kinds.find(key);
    if (it == kinds.end()) throw ValidationError(key, "unknown feature '" + key + "'");
    if (v.is_null()) r[key] = std::monostate{};
    else if (it->second == ColumnKind::numeric && v.is_number()) r[key] = v.get<double>();
    else if (it->second == ColumnKind::categorical_text && v.is_string()) r[key] = v.get<std::string>();
    else
      throw ValidationError(key, "feature '" + key + "' expects " +
                                     (it->second == ColumnKind::numeric ? "a number" : "a category string") +
                                     " or null");
  }
  return r;
}

}  // namespace detail

inline HttpReply handle_score(const ServiceModels& models, const std::string& body) {
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    return detail::invalid_input("", "request body is not valid JSON");
  }
  if (!req.is_object()) return detail::invalid_input("", "request body must be a JSON object");
  if (!req.contains("schema_version") || !req["schema_version"].is_number_integer() ||
      req["schema_version"].get<int>() != kWireSchemaVersion)
    return detail::invalid_input("schema_version", "schema_version must be " + std::to_string(kWireSchemaVersion));
  for (const auto& [key, v] : req.items())
    if (key != "schema_version" && key != "features" && key != "tasks")
      return detail::invalid_input(key, "unknown request field '" + key + "'");

  std::vector<Task> tasks;
  if (req.contains("tasks")) {
    if (!req["tasks"].is_array()) return detail::invalid_input("tasks", "tasks must be an array");
    for (const auto& t : req["tasks"]) {
      if (!t.is_string()) return detail::invalid_input("tasks", "task names must be strings");
      Task task;
      try {
        task = parse_task(t.get<std::string>());
      } catch (const ConfigError&) {
        return detail::invalid_input("tasks", "unknown task '" + t.get<std::string>() + "'");
      }
      if (!models.artifacts.count(task)) return detail::invalid_input("tasks", "task '" + to_string(task) + "' is not served");
      if (std::find(tasks.begin(), tasks.end(), task) == tasks.end()) tasks.push_back(task);
    }
    if (tasks.empty()) return detail::invalid_input("tasks", "at least one task must be requested");
  } else {
    for (const auto& [t, a] : models.artifacts) tasks.push_back(t);
  }

  nlohmann::json features = req.value("features", nlohmann::json::object());
  if (!features.is_object()) return detail::invalid_input("features", "features must be an object");

  nlohmann::json results = nlohmann::json::object(), versions = nlohmann::json::object();
  try {
    const RawRecord record = detail::parse_features(features, models);
    for (auto t : tasks) {
      const auto& a = models.artifacts.at(t);
      const ScoreResult r = score_record(a, record, 10);
      nlohmann::json attr = nlohmann::json::array();
      for (const auto& e : r.attributions) attr.push_back({{"feature", e.feature}, {"delta", e.delta}});
      nlohmann::json tj = {{"probability", r.probability}, {"attributions", attr}, {"degenerate", r.degenerate}};
      tj["operating_threshold"] = r.operating_threshold ? nlohmann::json(*r.operating_threshold) : nlohmann::json();
      tj["triage"] = r.operating_threshold ? nlohmann::json(r.probability >= *r.operating_threshold) : nlohmann::json();
      results[to_string(t)] = tj;
      versions[to_string(t)] = models.versions.at(t);
    }
  } catch (const ValidationError& e) {
    return detail::invalid_input(e.key, e.what());
  }
  nlohmann::json out = {{"schema_version", kWireSchemaVersion},
                        {"status", "ok"},
                        {"results", results},
                        {"model_versions", versions},
                        {"metadata", {{"attribution_method", kAttributionNote}}}};
  return {200, out.dump()};
}

inline HttpReply handle_schema(const ServiceModels& models) {
  nlohmann::json features = nlohmann::json::array();
  std::map<std::string, std::size_t> slot;
  for (const auto& [t, a] : models.artifacts) {
    const auto& st = a.preprocessor;
    std::set<std::string> dropped(st.dropped.begin(), st.dropped.end());
    for (const auto& [name, kind] : st.input_columns) {
      auto [it, fresh] = slot.emplace(name, features.size());
      if (fresh)
        features.push_back({{"name", name},
                            {"kind", kind == ColumnKind::numeric ? "numeric" : "categorical"},
                            {"categories", nlohmann::json::array()},
                            {"unit", nullptr},
                            {"ignored_by", nlohmann::json::array()}});
      if (dropped.count(name)) features[it->second]["ignored_by"].push_back(to_string(t));
    }
    for (const auto& d : st.discrete) {
      auto& cats = features[slot.at(d.column)]["categories"];
      for (const auto& c : d.categories)
        if (std::find(cats.begin(), cats.end(), c) == cats.end()) cats.push_back(c);
    }
  }
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& [t, a] : models.artifacts) tasks.push_back(to_string(t));
  return {200, nlohmann::json({{"schema_version", kWireSchemaVersion}, {"tasks", tasks}, {"features", features}}).dump()};
}

inline HttpReply handle_health(const ServiceModels& models) {
  nlohmann::json versions = nlohmann::json::object();
  for (const auto& [t, h] : models.versions) versions[to_string(t)] = h;
  const double uptime =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - models.started).count();
  return {200, nlohmann::json({{"schema_version", kWireSchemaVersion},
                               {"status", "ok"},
                               {"model_versions", versions},
                               {"uptime_seconds", uptime}})
                   .dump()};
}

inline void install_routes(httplib::Server& server, const ServiceModels& models) {
  auto reply = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  server.Post("/score", [&models, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_score(models, req.body));
  });
  server.Get("/schema", [&models, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, handle_schema(models));
  });
  server.Get("/health", [&models, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, handle_health(models));
  });
}

// Blocks until the server stops.
inline void serve(const ServiceModels& models, const std::string& host, int port) {
  httplib::Server server;
  install_routes(server, models);
  if (!server.listen(host, port)) throw PipelineError("cannot bind " + host + ":" + std::to_string(port));
}

}  // namespace clinpred
