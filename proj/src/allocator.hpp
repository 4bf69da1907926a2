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

#ifndef RAGFLOW_ALLOCATOR_HPP_
#define RAGFLOW_ALLOCATOR_HPP_

#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "latency.hpp"
#include "pipeline.hpp"

namespace ragflow {

enum class FlowMode {
  // Intake bounded by predecessor output scaled by fanout and branch
  // probability; objective normalised by expected visit rate.
  kWeighted,
  // Plain predecessor batch sums, unit visit rates.
  kStrict,
};

// Joint batch-size / replica allocation instance. Rows are pipeline nodes in
// declaration order, columns are resource kinds sorted by name.
struct AllocationProblem {
  std::shared_ptr<const PipelineGraph> graph;
  std::vector<ResourceKind> kinds;
  // m_{i,k}; zero when node i cannot run on kind k.
  std::vector<std::vector<int>> max_batch;
  // T_i on kind k; present exactly where max_batch > 0.
  std::vector<std::vector<std::optional<PwlFit>>> latency;
  std::vector<double> visit_rates;
  // Per graph edge: items delivered per item processed at the source.
  std::vector<double> edge_weights;
  FlowMode flow = FlowMode::kWeighted;

  std::size_t nodes() const { return max_batch.size(); }
  int total_resources() const;
  std::optional<std::size_t> KindIndex(std::string_view name) const;
  void Validate() const;
};

// Fits keyed by node id, then by resource kind name. A "*" kind entry
// applies to every kind in the node's affinity without its own fit.
using FitTable = std::map<std::string, std::map<std::string, PwlFit>>;

AllocationProblem MakeProblem(std::shared_ptr<const PipelineGraph> graph,
                              std::vector<ResourceKind> kinds,
                              const FitTable& fits,
                              FlowMode flow = FlowMode::kWeighted);

struct AllocationPlan {
  std::vector<std::vector<int>> batch;     // b_{i,k}
  std::vector<std::vector<int>> replicas;  // a_{i,k}
  double objective_throughput = 0.0;
  std::string bottleneck;
  // Relaxation bound and relative gap; gap 0 means proven optimal.
  double upper_bound = 0.0;
  double gap = 0.0;

  int total_replicas() const;
  bool operator==(const AllocationPlan&) const = default;
};

// Throughput of node i in requests/second (visit-rate normalised).
double NodeThroughput(const AllocationProblem& p, std::size_t node,
                      const std::vector<int>& batch_row,
                      const std::vector<int>& replica_row);

// Recomputes objective and bottleneck from the matrices.
void ScorePlan(const AllocationProblem& p, AllocationPlan& plan);

// Every violated constraint, one message each; empty when the plan is valid.
std::vector<std::string> ValidatePlan(const AllocationProblem& p,
                                      const AllocationPlan& plan);

struct SolveOptions {
  std::chrono::milliseconds budget{10000};
  // Feasible starting incumbent; the result is never worse.
  std::optional<AllocationPlan> warm_start;
};

AllocationPlan SolveMaxThroughput(const AllocationProblem& p,
                                  const SolveOptions& options = {});

// Exhaustive oracle. Ties: fewer replicas, then lexicographically smaller b.
AllocationPlan BruteForceSolve(const AllocationProblem& p);
double BruteForceSearchSpace(const AllocationProblem& p);
inline constexpr double kBruteForceLimit = 1e8;

// The same problem with one more unit of `kind` (added if unknown).
AllocationProblem WithExtraUnit(const AllocationProblem& p, std::string_view kind);

AllocationPlan ReplanWithExtra(const AllocationProblem& p,
                               const AllocationPlan& plan,
                               std::string_view kind,
                               const SolveOptions& options = {});

// Min-max stage latency: split a total batch and a machine budget over
// stages minimising the slowest stage.
struct MinMaxProblem {
  int total_batch = 1;
  int machines = 1;
  std::vector<PwlFit> stage_time;
};

struct MinMaxSolution {
  std::vector<int> batch;
  std::vector<int> machines;
  double z = 0.0;  // max_i f_i(b_i, m_i)
};

MinMaxSolution SolveMinMaxLatency(const MinMaxProblem& p);

// Table-style rows {component, kind, batch, replicas} plus objective fields.
Json PlanToJson(const AllocationProblem& p, const AllocationPlan& plan);
AllocationPlan PlanFromJson(const AllocationProblem& p, const Json& doc);

}  // namespace ragflow

#endif  // RAGFLOW_ALLOCATOR_HPP_
