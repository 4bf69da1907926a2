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

#ifndef RAGFLOW_SCHEDULER_HPP_
#define RAGFLOW_SCHEDULER_HPP_

#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "allocator.hpp"
#include "pipeline.hpp"

namespace ragflow {

// Lower value dequeues first.
enum class Priority : int { kEscalated = 0, kNormal = 1 };

enum class EstimatorMode { kEwma, kCumulative };

struct EstimatorOptions {
  double alpha = 0.1;
  EstimatorMode mode = EstimatorMode::kEwma;
  // Relative change of a node mean that invalidates the remaining-path table.
  double refresh_threshold = 0.05;
};

struct RemainingPath {
  int min_hops = 0;
  int max_hops = 0;
  // Expected residence time from entering this state to leaving the
  // pipeline, including the current node.
  double mean_remaining = 0.0;
  // As mean_remaining, from residence observed by escalated items.
  double escalated_remaining = 0.0;
  // Service time alone along the quickest way out: no queueing, no further
  // loops, cheapest conditional branch.
  double min_service = 0.0;
};

// Per-node residence-time means plus a remaining-path table over execution
// states, rebuilt lazily when a mean drifts past the refresh threshold.
class RunningAverageEstimator {
 public:
  explicit RunningAverageEstimator(std::shared_ptr<const PipelineGraph> graph,
                                   EstimatorOptions options = {});

  void Update(std::size_t node, double observed);
  // Residence of an escalated item; nodes without such samples fall back to
  // the overall mean.
  void UpdateEscalated(std::size_t node, double observed);
  // Service time (start to finish of the batch) observed at `node`.
  void UpdateService(std::size_t node, double observed);
  double mean(std::size_t node) const { return mean_[node]; }
  double service_mean(std::size_t node) const { return service_[node]; }
  std::int64_t count(std::size_t node) const { return count_[node]; }

  const RemainingPath& Remaining(std::size_t state);
  const StateSpace& space() const { return space_; }
  const PipelineGraph& graph() const { return *graph_; }
  std::int64_t rebuilds() const { return rebuilds_; }

 private:
  void Rebuild();

  std::shared_ptr<const PipelineGraph> graph_;
  StateSpace space_;
  EstimatorOptions options_;
  std::vector<double> mean_;
  std::vector<std::int64_t> count_;
  std::vector<double> escalated_;
  std::vector<std::int64_t> escalated_count_;
  std::vector<double> service_;
  std::vector<std::int64_t> service_count_;
  std::vector<double> snapshot_;
  std::vector<double> escalated_snapshot_;
  std::vector<double> service_snapshot_;
  std::vector<RemainingPath> table_;
  bool stale_ = true;
  std::int64_t rebuilds_ = 0;
};

// What the scheduler sees of an in-flight request.
struct RequestView {
  std::uint64_t id = 0;
  double arrival_time = 0.0;
  // Absolute completion deadline.
  double slo_deadline = 0.0;
  // Execution states of the request's live items.
  std::span<const std::size_t> states;
  // Escalated requests are judged by escalated residence times.
  bool escalated = false;
};

struct Prediction {
  bool at_risk = false;
  double expected_remaining = 0.0;
  // Largest min_service over the live items.
  double min_remaining = 0.0;
};

// Expected remaining is the largest table entry over the live items; the
// request is at risk when now + remaining passes its deadline.
Prediction PredictViolation(RunningAverageEstimator& est, const RequestView& req,
                            double now);

struct MitigationOptions {
  bool enabled = false;
  bool escalate = true;
  bool pause = true;
  bool autoscale = false;
  double cooldown_s = 5.0;
  std::chrono::milliseconds replan_budget{2000};
  std::map<std::string, int> spare;
  EstimatorOptions estimator;

  Json ToJson() const;
  static MitigationOptions FromJson(const Json& doc);
};

struct Action {
  double t = 0.0;
  std::string action;  // escalate | pause | resume | autoscale
  std::optional<std::uint64_t> request;
  std::string node;
  std::string kind;

  Json ToJson() const;
  bool operator==(const Action&) const = default;
};

struct MitigationState {
  bool admission_open = true;
  std::set<std::uint64_t> at_risk;
  bool autoscale_enabled = false;
  std::map<std::string, int> spare_pool;
  std::vector<Action> actions_log;
  double last_autoscale = -std::numeric_limits<double>::infinity();
  std::unordered_set<std::uint64_t> escalated;
};

// Allocation the autoscaler replans from; replaced after each scale-up.
struct Capacity {
  AllocationProblem problem;
  AllocationPlan plan;
};

struct AutoscaleDirective {
  std::string node;
  std::string kind;
  AllocationPlan plan;
};

struct Directives {
  std::vector<std::uint64_t> escalate;
  bool pause = false;
  bool resume = false;
  std::optional<AutoscaleDirective> autoscale;

  bool empty() const { return escalate.empty() && !pause && !resume && !autoscale; }
};

// One full pass: re-predicts every in-flight request, then applies
// escalation, admission and autoscale rules.
Directives Mitigate(MitigationState& state, RunningAverageEstimator& est,
                    std::span<const RequestView> in_flight, double now,
                    const MitigationOptions& options, Capacity* capacity);

// Queue of item ids at one station: escalated items first, then FIFO.
class StationQueue {
 public:
  void Push(std::uint64_t item, Priority priority, double enqueue_t);
  void Escalate(std::uint64_t item);
  std::vector<std::uint64_t> PopBatch(int limit);
  std::size_t size() const { return order_.size(); }
  bool empty() const { return order_.empty(); }
  // Enqueue time of the longest-waiting item; queue must be non-empty.
  double oldest() const;

 private:
  struct Entry {
    std::uint64_t item;
    double enqueue_t;
  };
  std::uint64_t next_seq_ = 0;
  std::set<std::pair<int, std::uint64_t>> order_;
  std::map<std::uint64_t, Entry> by_seq_;
  std::unordered_map<std::uint64_t, std::pair<int, std::uint64_t>> key_;
};

struct ReplicaView {
  double busy_until = 0.0;
  bool idle = true;
  int batch_limit = 1;
};

struct DispatchDecision {
  std::size_t replica = 0;
  std::vector<std::uint64_t> items;
};

// Least-loaded idle replica (earliest busy-until, then lowest index) takes a
// batch of up to its limit from the queue.
std::optional<std::size_t> PickReplica(std::span<const ReplicaView> replicas);
std::optional<DispatchDecision> Route(std::span<const ReplicaView> replicas,
                                      StationQueue& queue);

// Incremental scheduler used by the simulator. Requests are re-predicted
// when they move and when their projected risk time passes, so each call
// costs a table lookup plus a heap operation.
class OnlineScheduler {
 public:
  OnlineScheduler(std::shared_ptr<const PipelineGraph> graph, MitigationOptions options,
                  std::optional<Capacity> capacity);

  RunningAverageEstimator& estimator() { return est_; }
  const MitigationState& state() const { return state_; }
  const MitigationOptions& options() const { return options_; }
  std::int64_t predictions() const { return predictions_; }

  void Observe(std::size_t node, double residence, double service, bool escalated) {
    est_.Update(node, residence);
    if (escalated) est_.UpdateEscalated(node, residence);
    est_.UpdateService(node, service);
  }
  bool escalated(std::uint64_t id) const { return state_.escalated.count(id) > 0; }
  void Track(const RequestView& req, double now);
  void Forget(std::uint64_t id, double now);
  Directives Step(double now,
                  const std::function<std::optional<RequestView>(std::uint64_t)>& lookup);

 private:
  struct Due {
    double key;
    std::uint64_t id;
    std::uint64_t version;
    bool operator>(const Due& o) const {
      return std::tie(key, id, version) > std::tie(o.key, o.id, o.version);
    }
  };

  RunningAverageEstimator est_;
  MitigationOptions options_;
  MitigationState state_;
  std::optional<Capacity> capacity_;
  std::unordered_map<std::uint64_t, std::uint64_t> version_;
  std::priority_queue<Due, std::vector<Due>, std::greater<>> due_;
  Directives pending_;
  std::int64_t predictions_ = 0;
};

}  // namespace ragflow

#endif  // RAGFLOW_SCHEDULER_HPP_
