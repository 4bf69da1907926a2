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

#include "scenarios.hpp"

#include <utility>

namespace ragflow {
namespace {

Json NodeDoc(const std::string& id, const std::string& kind,
             std::vector<std::string> affinity) {
  return {{"id", id}, {"kind", kind}, {"affinity", std::move(affinity)}};
}

Json SeqDoc(const std::string& from, const std::string& to) {
  return {{"from", from}, {"to", to}, {"kind", "sequential"}};
}

Json CondDoc(const std::string& from, const std::string& to, double p) {
  return {{"from", from}, {"to", to}, {"kind", "conditional"}, {"p", p}};
}

TruthEntry Amortized(double c0, double c1, int max_batch, double noise) {
  TruthEntry e;
  e.model.shape = AmortizedBatch{c0, c1};
  e.model.noise = noise;
  e.max_batch = max_batch;
  return e;
}

TruthEntry Saturated(double c0, double c1, double knee, int max_batch, double noise) {
  TruthEntry e;
  e.model.shape = Saturating{c0, c1, knee};
  e.model.noise = noise;
  e.max_batch = max_batch;
  return e;
}

TruthEntry Sublin(double c, double alpha, int max_batch, double noise) {
  TruthEntry e;
  e.model.shape = Sublinear{c, alpha};
  e.model.noise = noise;
  e.max_batch = max_batch;
  return e;
}

constexpr double kNoise = 0.1;

// Grader-bound corrective pipeline: 30% of queries are rewritten and sent to
// web search before augmentation.
ScenarioTemplate Crag() {
  ScenarioTemplate t;
  t.name = "crag";
  t.pipeline = {
      {"nodes",
       {NodeDoc("retrieve", "retriever", {"cpu"}), NodeDoc("grade", "grader", {"gpu"}),
        NodeDoc("rewrite", "rewriter", {"gpu"}), NodeDoc("websearch", "websearch", {"cpu"}),
        NodeDoc("augment", "augmenter", {"cpu"}), NodeDoc("generate", "generator", {"gpu"})}},
      {"edges",
       {SeqDoc("retrieve", "grade"), CondDoc("grade", "augment", 0.7),
        CondDoc("grade", "rewrite", 0.3), SeqDoc("rewrite", "websearch"),
        SeqDoc("websearch", "augment"), SeqDoc("augment", "generate")}},
      {"entry", "retrieve"},
      {"exits", {"generate"}}};
  t.resources = {{"cpu", 4}, {"gpu", 6}};
  t.truth["retrieve"]["cpu"] = Amortized(0.02, 0.004, 32, kNoise);
  t.truth["grade"]["gpu"] = Amortized(0.12, 0.03, 16, kNoise);
  t.truth["rewrite"]["gpu"] = Amortized(0.05, 0.01, 16, kNoise);
  t.truth["websearch"]["cpu"] = Saturated(0.1, 0.01, 8, 16, kNoise);
  t.truth["augment"]["cpu"] = Amortized(0.01, 0.002, 32, kNoise);
  t.truth["generate"]["gpu"] = Amortized(0.2, 0.005, 32, kNoise);
  t.scenario.arrival_rate_rps = 66.0;
  t.scenario.duration_s = 120.0;
  t.scenario.slo_s = 1.6;
  return t;
}

// Memory-augmented linear pipeline dominated by a large fixed generation cost.
ScenarioTemplate Memorag() {
  ScenarioTemplate t;
  t.name = "memorag";
  t.pipeline = {{"nodes",
                 {NodeDoc("memorize", "custom", {"gpu"}), NodeDoc("retrieve", "retriever", {"cpu"}),
                  NodeDoc("augment", "augmenter", {"cpu", "gpu"}),
                  NodeDoc("generate", "generator", {"gpu"})}},
                {"edges",
                 {SeqDoc("memorize", "retrieve"), SeqDoc("retrieve", "augment"),
                  SeqDoc("augment", "generate")}},
                {"entry", "memorize"},
                {"exits", {"generate"}}};
  t.resources = {{"cpu", 4}, {"gpu", 6}};
  t.truth["memorize"]["gpu"] = Amortized(0.1, 0.005, 32, kNoise);
  t.truth["retrieve"]["cpu"] = Amortized(0.05, 0.005, 32, kNoise);
  t.truth["augment"]["*"] = Amortized(0.02, 0.002, 32, kNoise);
  t.truth["generate"]["gpu"] = Amortized(2.0, 0.02, 32, kNoise);
  t.scenario.arrival_rate_rps = 40.0;
  t.scenario.duration_s = 300.0;
  t.scenario.slo_s = 15.0;
  return t;
}

// Interleaved retrieval and reasoning, looping until an answer or 10 steps.
ScenarioTemplate Ircot() {
  ScenarioTemplate t;
  t.name = "ircot";
  t.pipeline = {{"nodes",
                 {NodeDoc("retrieve", "retriever", {"cpu"}),
                  NodeDoc("reason", "generator", {"gpu"})}},
                {"edges",
                 {SeqDoc("retrieve", "reason"),
                  {{"from", "reason"},
                   {"to", "retrieve"},
                   {"kind", "recursive_back"},
                   {"max_depth", 10},
                   {"p", 0.5}}}},
                {"entry", "retrieve"},
                {"exits", {"reason"}}};
  t.resources = {{"cpu", 2}, {"gpu", 4}};
  t.truth["retrieve"]["cpu"] = Amortized(0.02, 0.004, 32, kNoise);
  t.truth["reason"]["gpu"] = Amortized(0.15, 0.01, 32, kNoise);
  t.scenario.arrival_rate_rps = 60.0;
  t.scenario.duration_s = 120.0;
  t.scenario.slo_s = 5.0;
  return t;
}

// Entity extraction, graph search and generation in a straight line.
ScenarioTemplate Hipporag() {
  ScenarioTemplate t;
  t.name = "hipporag";
  t.pipeline = {{"nodes",
                 {NodeDoc("extract", "custom", {"gpu"}),
                  NodeDoc("graph_search", "retriever", {"cpu"}),
                  NodeDoc("generate", "generator", {"gpu"})}},
                {"edges", {SeqDoc("extract", "graph_search"), SeqDoc("graph_search", "generate")}},
                {"entry", "extract"},
                {"exits", {"generate"}}};
  t.resources = {{"cpu", 2}, {"gpu", 4}};
  t.truth["extract"]["gpu"] = Amortized(0.08, 0.005, 32, kNoise);
  t.truth["graph_search"]["cpu"] = Sublin(0.05, 0.6, 32, kNoise);
  t.truth["generate"]["gpu"] = Amortized(0.3, 0.01, 32, kNoise);
  t.scenario.arrival_rate_rps = 100.0;
  t.scenario.duration_s = 120.0;
  t.scenario.slo_s = 3.0;
  return t;
}

}  // namespace

Json TruthSpecToJson(const TruthSpec& spec) {
  Json components = Json::object();
  for (const auto& [node, kinds] : spec) {
    Json per_kind = Json::object();
    for (const auto& [kind, entry] : kinds) {
      Json e = entry.model.ToJson();
      e["max_batch"] = entry.max_batch;
      per_kind[kind] = std::move(e);
    }
    components[node] = std::move(per_kind);
  }
  return {{"components", std::move(components)}};
}

TruthSpec TruthSpecFromJson(const Json& doc) {
  if (!doc.is_object() || !doc.contains("components") || !doc["components"].is_object()) {
    throw Error(ErrorCode::kParse, "ground truth: expected an object with \"components\"");
  }
  TruthSpec spec;
  for (const auto& [node, kinds] : doc["components"].items()) {
    if (!kinds.is_object()) {
      throw Error(ErrorCode::kParse, "ground truth: components." + node + " must be an object");
    }
    for (const auto& [kind, e] : kinds.items()) {
      const std::string where = "ground truth: components." + node + "." + kind;
      if (!e.is_object()) throw Error(ErrorCode::kParse, where + " must be an object");
      TruthEntry entry;
      entry.model = GroundTruthLatency::FromJson(e);
      auto mb = e.find("max_batch");
      if (mb == e.end() || !mb->is_number_integer()) {
        throw Error(ErrorCode::kParse, where + ".max_batch must be an integer");
      }
      entry.max_batch = mb->get<int>();
      if (entry.max_batch < 1) throw Error(ErrorCode::kValidation, where + ".max_batch must be >= 1");
      spec[node][kind] = std::move(entry);
    }
  }
  return spec;
}

GroundTruthTable TruthTable(const TruthSpec& spec) {
  GroundTruthTable table;
  for (const auto& [node, kinds] : spec) {
    for (const auto& [kind, entry] : kinds) table[node][kind] = entry.model;
  }
  return table;
}

const TruthEntry* FindTruth(const TruthSpec& spec, const std::string& node,
                            const std::string& kind) {
  auto n = spec.find(node);
  if (n == spec.end()) return nullptr;
  auto k = n->second.find(kind);
  if (k == n->second.end()) k = n->second.find("*");
  return k == n->second.end() ? nullptr : &k->second;
}

std::vector<std::string> TemplateNames() { return {"crag", "hipporag", "ircot", "memorag"}; }

ScenarioTemplate LoadTemplate(std::string_view name) {
  if (name == "crag") return Crag();
  if (name == "memorag") return Memorag();
  if (name == "ircot") return Ircot();
  if (name == "hipporag") return Hipporag();
  throw Error(ErrorCode::kInvalidArgument, "unknown scenario template \"" + std::string(name) +
                                               "\" (expected crag, hipporag, ircot or memorag)");
}

}  // namespace ragflow
