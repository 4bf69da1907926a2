/* Copyright 2026 The ragflow Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "ragflow/ragflow.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "harness.hpp"

struct rf_pipeline {
  std::shared_ptr<const ragflow::PipelineGraph> graph;
};

struct rf_deployment {
  ragflow::Deployment d;
};

namespace {

using ragflow::Error;
using ragflow::ErrorCode;
using ragflow::Json;

thread_local std::string g_last_error;

rf_status Fail(rf_status status, const std::string& msg) {
  g_last_error = msg;
  return status;
}

rf_status StatusOf(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return RF_INVALID_ARGUMENT;
    case ErrorCode::kParse: return RF_PARSE;
    case ErrorCode::kValidation: return RF_VALIDATION;
    case ErrorCode::kInfeasible: return RF_INFEASIBLE;
    case ErrorCode::kBudgetExhausted: return RF_BUDGET_EXHAUSTED;
    case ErrorCode::kIo: return RF_IO;
    case ErrorCode::kInternal: return RF_INTERNAL;
  }
  return RF_INTERNAL;
}

// Runs `fn`, mapping exceptions to status codes; no exception crosses the
// C boundary.
template <typename Fn>
rf_status Guard(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return RF_OK;
  } catch (const Error& e) {
    return Fail(StatusOf(e.code()), e.what());
  } catch (const Json::exception& e) {
    return Fail(RF_PARSE, e.what());
  } catch (const std::bad_alloc&) {
    return Fail(RF_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return Fail(RF_INTERNAL, e.what());
  } catch (...) {
    return Fail(RF_INTERNAL, "unknown error");
  }
}

char* Dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void Require(const void* p, const char* what) {
  if (p == nullptr) throw Error(ErrorCode::kInvalidArgument, std::string(what) + " is null");
}

Json ParseArg(const char* text, const char* what) {
  Require(text, what);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kParse, std::string(what) + ": " + e.what());
  }
}

}  // namespace

extern "C" {

const char* rf_version(void) { return "1.0.0"; }

int rf_schema_version(void) { return ragflow::kSchemaVersion; }

const char* rf_status_name(rf_status status) {
  switch (status) {
    case RF_OK: return "ok";
    case RF_INVALID_ARGUMENT: return "invalid_argument";
    case RF_PARSE: return "parse";
    case RF_VALIDATION: return "validation";
    case RF_INFEASIBLE: return "infeasible";
    case RF_BUDGET_EXHAUSTED: return "budget_exhausted";
    case RF_IO: return "io";
    case RF_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* rf_last_error(void) { return g_last_error.c_str(); }

void rf_free_string(char* s) { std::free(s); }

rf_status rf_pipeline_parse(const char* json, rf_pipeline** out) {
  return Guard([&] {
    Require(json, "json");
    Require(out, "out");
    *out = nullptr;
    auto graph = std::make_shared<const ragflow::PipelineGraph>(ragflow::PipelineGraph::Parse(json));
    *out = new rf_pipeline{std::move(graph)};
  });
}

void rf_pipeline_free(rf_pipeline* pipeline) { delete pipeline; }

rf_status rf_pipeline_to_json(const rf_pipeline* pipeline, char** out_json) {
  return Guard([&] {
    Require(pipeline, "pipeline");
    Require(out_json, "out_json");
    *out_json = Dup(pipeline->graph->ToJson().dump());
  });
}

rf_status rf_pipeline_node_count(const rf_pipeline* pipeline, size_t* out) {
  return Guard([&] {
    Require(pipeline, "pipeline");
    Require(out, "out");
    *out = pipeline->graph->size();
  });
}

rf_status rf_pipeline_visit_rates(const rf_pipeline* pipeline, char** out_json) {
  return Guard([&] {
    Require(pipeline, "pipeline");
    Require(out_json, "out_json");
    Json doc = ragflow::ExpectedVisitRates(*pipeline->graph);
    *out_json = Dup(doc.dump());
  });
}

rf_status rf_deploy(const rf_pipeline* pipeline, const char* truth_json, const char* resources,
                    uint64_t profile_seed, int budget_ms, rf_deployment** out) {
  return Guard([&] {
    Require(pipeline, "pipeline");
    Require(resources, "resources");
    Require(out, "out");
    *out = nullptr;
    auto truth = ragflow::TruthSpecFromJson(ParseArg(truth_json, "truth_json"));
    ragflow::ProfileOptions po;
    po.seed = profile_seed;
    ragflow::SolveOptions so;
    if (budget_ms > 0) so.budget = std::chrono::milliseconds(budget_ms);
    auto d = std::make_unique<rf_deployment>();
    d->d = ragflow::Deploy(pipeline->graph, truth, ragflow::ParseResources(resources), po, so);
    *out = d.release();
  });
}

void rf_deployment_free(rf_deployment* deployment) { delete deployment; }

rf_status rf_deployment_plan(const rf_deployment* deployment, char** out_json) {
  return Guard([&] {
    Require(deployment, "deployment");
    Require(out_json, "out_json");
    Json doc = ragflow::PlanToJson(deployment->d.problem, deployment->d.plan);
    doc["schema_version"] = ragflow::kSchemaVersion;
    *out_json = Dup(doc.dump());
  });
}

rf_status rf_deployment_profiles(const rf_deployment* deployment, char** out_json) {
  return Guard([&] {
    Require(deployment, "deployment");
    Require(out_json, "out_json");
    Json doc = Json::object();
    for (const auto& cp : deployment->d.profiles) {
      Json points = Json::array();
      for (const auto& p : cp.points) points.push_back(ragflow::ProfilePointToJson(p));
      doc[cp.node][cp.kind] = {{"max_batch", cp.max_batch},
                               {"probes", cp.probes()},
                               {"points", std::move(points)},
                               {"fit", cp.fit.ToJson()}};
    }
    *out_json = Dup(doc.dump());
  });
}

rf_status rf_simulate(const rf_deployment* deployment, const char* scenario_json,
                      char** out_report_json) {
  return Guard([&] {
    Require(deployment, "deployment");
    Require(out_report_json, "out_report_json");
    auto scenario = ragflow::ScenarioConfig::FromJson(ParseArg(scenario_json, "scenario_json"));
    const auto& d = deployment->d;
    auto result = ragflow::Simulate(d.problem, d.plan, ragflow::TruthTable(d.truth), scenario);
    *out_report_json = Dup(result.report.ToJson().dump());
  });
}

rf_status rf_template(const char* name, char** out_json) {
  return Guard([&] {
    Require(name, "name");
    Require(out_json, "out_json");
    auto t = ragflow::LoadTemplate(name);
    Json doc = {{"name", t.name},
                {"pipeline", t.pipeline},
                {"truth", ragflow::TruthSpecToJson(t.truth)},
                {"resources", ragflow::ResourcesToJson(t.resources)},
                {"scenario", t.scenario.ToJson()}};
    *out_json = Dup(doc.dump());
  });
}

rf_status rf_command(const char* name, const char* options_json, char** out_summary) {
  return Guard([&] {
    Require(name, "name");
    Require(out_summary, "out_summary");
    *out_summary = nullptr;
    Json options = options_json ? ParseArg(options_json, "options_json") : Json::object();
    if (!options.is_object()) throw Error(ErrorCode::kInvalidArgument, "options must be an object");
    std::string cmd = name;
    std::string summary;
    if (cmd == "profile") {
      summary = ragflow::RunProfileCommand(options);
    } else if (cmd == "plan") {
      summary = ragflow::RunPlanCommand(options);
    } else if (cmd == "simulate") {
      summary = ragflow::RunSimulateCommand(options);
    } else if (cmd == "ablate") {
      summary = ragflow::RunAblateCommand(options);
    } else if (cmd == "report") {
      summary = ragflow::RunReportCommand(options);
    } else if (cmd == "template") {
      summary = ragflow::RunTemplateCommand(options);
    } else {
      throw Error(ErrorCode::kInvalidArgument, "unknown command \"" + cmd + "\"");
    }
    *out_summary = Dup(summary);
  });
}

}  // extern "C"
