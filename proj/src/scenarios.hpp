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

#ifndef RAGFLOW_SCENARIOS_HPP_
#define RAGFLOW_SCENARIOS_HPP_

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "latency.hpp"
#include "pipeline.hpp"
#include "simulator.hpp"

namespace ragflow {

// Synthetic service behind one (component, resource kind) pair.
struct TruthEntry {
  GroundTruthLatency model;
  // Largest batch the service accepts (m_{i,k}).
  int max_batch = 1;
};

// Keyed by node id, then kind name ("*" matches any kind in the affinity).
using TruthSpec = std::map<std::string, std::map<std::string, TruthEntry>>;

Json TruthSpecToJson(const TruthSpec& spec);
TruthSpec TruthSpecFromJson(const Json& doc);
GroundTruthTable TruthTable(const TruthSpec& spec);
// Entry for (node, kind), honouring the "*" wildcard; null when absent.
const TruthEntry* FindTruth(const TruthSpec& spec, const std::string& node,
                            const std::string& kind);

// Topology plus synthetic latencies standing in for one served pipeline.
struct ScenarioTemplate {
  std::string name;
  Json pipeline;
  std::vector<ResourceKind> resources;
  TruthSpec truth;
  ScenarioConfig scenario;
};

std::vector<std::string> TemplateNames();
// One of "crag", "memorag", "ircot", "hipporag".
ScenarioTemplate LoadTemplate(std::string_view name);

}  // namespace ragflow

#endif  // RAGFLOW_SCENARIOS_HPP_
