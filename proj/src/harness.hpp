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

#ifndef RAGFLOW_HARNESS_HPP_
#define RAGFLOW_HARNESS_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "allocator.hpp"
#include "latency.hpp"
#include "pipeline.hpp"
#include "scenarios.hpp"
#include "simulator.hpp"

namespace ragflow {

struct ProfileOptions {
  std::uint64_t seed = 1;
  // Ground-truth evaluations averaged per probe.
  int samples = 5;
  double threshold = kDefaultImprovementThreshold;
  // Every replica serves its own batch, so replicas scale throughput.
  ReplicaRule rule = ReplicaRule::kParallel;
};

struct ComponentProfile {
  std::string node;
  std::string kind;
  int max_batch = 1;
  std::vector<ProfilePoint> points;
  PwlFit fit;

  int probes() const { return static_cast<int>(points.size()); }
};

Json ProfilePointToJson(const ProfilePoint& p);
ProfilePoint ProfilePointFromJson(const Json& doc);

// Profiles every (node, kind) pair in the affinity against its ground truth
// and fits a piecewise-linear model. Ordered by node id, then kind.
std::vector<ComponentProfile> ProfileAll(const PipelineGraph& g, const TruthSpec& truth,
                                         const ProfileOptions& options);
FitTable FitsOf(const std::vector<ComponentProfile>& profiles);

// A profiled and planned pipeline ready to simulate.
struct Deployment {
  std::shared_ptr<const PipelineGraph> graph;
  TruthSpec truth;
  std::vector<ComponentProfile> profiles;
  AllocationProblem problem;
  AllocationPlan plan;
};

Deployment Deploy(std::shared_ptr<const PipelineGraph> graph, const TruthSpec& truth,
                  const std::vector<ResourceKind>& resources, const ProfileOptions& profile,
                  const SolveOptions& solve = {});

// Worker count: RAGFLOW_THREADS when set to a positive integer, otherwise the
// hardware concurrency; never more than `jobs` and never below 1.
int WorkerCount(std::size_t jobs);

// Runs fn(0..jobs-1) on a worker pool. Every job runs even if another fails;
// the lowest-index failure is rethrown.
void ParallelFor(std::size_t jobs, const std::function<void(std::size_t)>& fn);

// Canonical JSON text with a trailing newline.
std::string DumpJson(const Json& doc);
std::string ReadFile(const std::string& path);
// Creates parent directories as needed.
void WriteFile(const std::string& path, const std::string& data);

struct AblationRow {
  std::string config;
  Toggles toggles;
  double throughput = 0.0;
  // Relative to the previous row; 1 for the baseline.
  double multiplier = 1.0;
};

// Saturating-load ablation: baseline, +batching, +pipelining, +allocation.
// Throughput averaged over `repeats` seeds starting at scenario.seed.
std::vector<AblationRow> Ablate(const Deployment& d, const ScenarioConfig& scenario,
                                int repeats);
// Arrival rate that saturates every ablation configuration.
double SaturatingRate(const Deployment& d);

// Command entry points. `options` is the JSON form of the command line; each
// returns a human-readable summary and writes artifacts under options.out.
std::string RunProfileCommand(const Json& options);
std::string RunPlanCommand(const Json& options);
std::string RunSimulateCommand(const Json& options);
std::string RunAblateCommand(const Json& options);
std::string RunReportCommand(const Json& options);
std::string RunTemplateCommand(const Json& options);

}  // namespace ragflow

#endif  // RAGFLOW_HARNESS_HPP_
