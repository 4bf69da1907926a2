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

#ifndef RAGFLOW_SIMULATOR_HPP_
#define RAGFLOW_SIMULATOR_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "allocator.hpp"
#include "latency.hpp"
#include "pipeline.hpp"
#include "scheduler.hpp"

namespace ragflow {

// Ground truth keyed by node id, then resource kind ("*" matches any kind).
using GroundTruthTable = std::map<std::string, std::map<std::string, GroundTruthLatency>>;

const GroundTruthLatency& TruthFor(const GroundTruthTable& table, const std::string& node,
                                   const std::string& kind);

struct Toggles {
  bool batching = true;
  bool pipelining = true;
  bool component_allocation = true;

  bool operator==(const Toggles&) const = default;
};

enum class ArrivalProcess { kPoisson, kDeterministic };

// From `start_s` on, arrivals follow `rate_rps`.
struct RatePhase {
  double start_s = 0.0;
  double rate_rps = 0.0;
};

struct ScenarioConfig {
  double arrival_rate_rps = 1.0;
  double duration_s = 60.0;
  double slo_s = 10.0;
  std::uint64_t seed = 1;
  double query_len_mu = 5.0;
  double query_len_sigma = 0.5;
  // 0 dispatches whatever is queued as soon as a replica is idle.
  double batch_timeout_s = 0.0;
  ArrivalProcess arrivals = ArrivalProcess::kPoisson;
  std::vector<RatePhase> schedule;
  Toggles toggles;
  MitigationOptions mitigation;

  void Validate() const;
  double RateAt(double t) const;
  Json ToJson() const;
  static ScenarioConfig FromJson(const Json& doc);
};

ScenarioConfig ToggleFeatures(ScenarioConfig scenario, const Toggles& toggles);

// Every kind's units dealt round-robin over the nodes that can use it, in
// topological order; per-replica batch limit is the node's max batch.
AllocationPlan UniformPlan(const AllocationProblem& p);

enum class RequestStatus { kInFlight, kCompleted, kViolated };

struct TraceEntry {
  std::size_t node = 0;
  // Replica index within the node's station; -1 until started.
  int replica = -1;
  double enqueue_t = 0.0;
  double start_t = 0.0;
  double finish_t = 0.0;
};

struct Request {
  std::uint64_t id = 0;
  double arrival_time = 0.0;
  int query_len = 1;
  std::vector<TraceEntry> trace;
  // Execution states of live items, parallel to `live_items`.
  std::vector<std::size_t> states;
  std::vector<std::uint64_t> live_items;
  double slo_deadline = 0.0;
  Priority priority = Priority::kNormal;
  RequestStatus status = RequestStatus::kInFlight;
  double admitted_time = -1.0;
  double completion_time = -1.0;

  double latency() const { return completion_time - arrival_time; }
  Json ToJson(const PipelineGraph& g) const;
};

struct StationMetrics {
  std::string node;
  double utilization = 0.0;
  double mean_queue_length = 0.0;
  std::int64_t batches = 0;
  std::int64_t items = 0;
  int replicas = 0;
};

struct BucketMetrics {
  double t = 0.0;
  std::int64_t arrivals = 0;
  std::int64_t completions = 0;
  std::int64_t violations = 0;
  double p50 = 0.0;
  double p95 = 0.0;
  std::vector<double> utilization;
};

struct MetricsReport {
  double duration_s = 0.0;
  std::int64_t arrivals = 0;
  std::int64_t admitted = 0;
  std::int64_t completions = 0;
  // Completions after their deadline.
  std::int64_t late = 0;
  // Unfinished requests already past their deadline at the horizon.
  std::int64_t overdue = 0;
  std::int64_t in_flight = 0;
  std::int64_t rejected = 0;
  double throughput = 0.0;
  double goodput = 0.0;
  // (late + overdue) / (completions + overdue).
  double slo_violation_rate = 0.0;
  double p50 = 0.0;
  double p95 = 0.0;
  double p99 = 0.0;
  double mean_latency = 0.0;
  std::vector<StationMetrics> stations;
  std::vector<BucketMetrics> series;
  std::vector<Action> actions_log;

  Json ToJson() const;
  std::string ToCsv() const;
};

// Wall-clock spent in prediction and routing calls. Not part of the report,
// which must stay bit-identical across runs.
struct SchedulerStats {
  std::int64_t predictions = 0;
  std::int64_t routes = 0;
  double seconds = 0.0;

  double mean_call_seconds() const {
    auto n = predictions + routes;
    return n == 0 ? 0.0 : seconds / static_cast<double>(n);
  }
};

struct SimulationResult {
  MetricsReport report;
  std::vector<Request> requests;
  SchedulerStats stats;
};

SimulationResult Simulate(const AllocationProblem& problem, const AllocationPlan& plan,
                          const GroundTruthTable& truth, const ScenarioConfig& scenario);

}  // namespace ragflow

#endif  // RAGFLOW_SIMULATOR_HPP_
