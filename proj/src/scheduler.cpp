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

#include "scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace ragflow {

namespace {

void Log(MitigationState& state, double t, std::string action,
         std::optional<std::uint64_t> request = std::nullopt, std::string node = {},
         std::string kind = {}) {
  state.actions_log.push_back({t, std::move(action), request, std::move(node), std::move(kind)});
}

void MarkRisk(MitigationState& state, const MitigationOptions& options, std::uint64_t id,
              bool at_risk, double now, Directives& out) {
  if (!at_risk) {
    state.at_risk.erase(id);
    return;
  }
  if (!state.at_risk.insert(id).second) return;
  if (options.escalate && state.escalated.insert(id).second) {
    out.escalate.push_back(id);
    Log(state, now, "escalate", id);
  }
}

// Requests that miss even with no queueing gain nothing from mitigation.
bool Savable(const Prediction& p, const RequestView& req, double now) {
  return now + p.min_remaining <= req.slo_deadline;
}

void Settle(MitigationState& state, const MitigationOptions& options, double now,
            Directives& out, Capacity* capacity) {
  if (options.pause) {
    if (state.admission_open && !state.at_risk.empty()) {
      state.admission_open = false;
      out.pause = true;
      Log(state, now, "pause");
    } else if (!state.admission_open && state.at_risk.empty()) {
      state.admission_open = true;
      out.resume = true;
      Log(state, now, "resume");
    }
  }
  if (!options.autoscale || !state.autoscale_enabled || capacity == nullptr ||
      state.at_risk.empty() || now - state.last_autoscale < options.cooldown_s) {
    return;
  }
  const PipelineGraph& g = *capacity->problem.graph;
  auto node = g.Find(capacity->plan.bottleneck);
  if (!node) return;
  const std::string* kind = nullptr;
  for (const auto& name : g.nodes()[*node].affinity) {
    auto it = state.spare_pool.find(name);
    if (it != state.spare_pool.end() && it->second > 0) {
      kind = &it->first;
      break;
    }
  }
  if (kind == nullptr) return;
  state.last_autoscale = now;
  SolveOptions solve;
  solve.budget = options.replan_budget;
  AllocationPlan plan = ReplanWithExtra(capacity->problem, capacity->plan, *kind, solve);
  AllocationProblem grown = WithExtraUnit(capacity->problem, *kind);
  if (!ValidatePlan(grown, plan).empty()) return;
  --state.spare_pool[*kind];
  Log(state, now, "autoscale", std::nullopt, capacity->plan.bottleneck, *kind);
  out.autoscale = AutoscaleDirective{capacity->plan.bottleneck, *kind, plan};
  capacity->problem = std::move(grown);
  capacity->plan = std::move(plan);
}

}  // namespace

RunningAverageEstimator::RunningAverageEstimator(std::shared_ptr<const PipelineGraph> graph,
                                                 EstimatorOptions options)
    : graph_(std::move(graph)),
      space_(*graph_),
      options_(options),
      mean_(graph_->size(), 0.0),
      count_(graph_->size(), 0),
      escalated_(graph_->size(), 0.0),
      escalated_count_(graph_->size(), 0),
      service_(graph_->size(), 0.0),
      service_count_(graph_->size(), 0),
      snapshot_(graph_->size(), 0.0),
      escalated_snapshot_(graph_->size(), 0.0),
      service_snapshot_(graph_->size(), 0.0) {
  if (!(options_.alpha > 0 && options_.alpha <= 1)) {
    throw Error(ErrorCode::kInvalidArgument, "estimator alpha must be in (0, 1]");
  }
}

namespace {

// Folds one observation into a running mean; true when the mean drifted past
// the refresh threshold relative to `snap`.
bool Fold(double& m, std::int64_t& count, double snap, double observed,
          const EstimatorOptions& options) {
  if (!(observed >= 0)) {
    throw Error(ErrorCode::kInvalidArgument, "estimator: observation must be >= 0");
  }
  if (count == 0) {
    m = observed;
  } else if (options.mode == EstimatorMode::kEwma) {
    m = (1.0 - options.alpha) * m + options.alpha * observed;
  } else {
    m += (observed - m) / static_cast<double>(count + 1);
  }
  ++count;
  return snap == 0.0 ? m != 0.0 : std::abs(m - snap) > options.refresh_threshold * snap;
}

}  // namespace

void RunningAverageEstimator::Update(std::size_t node, double observed) {
  if (node >= mean_.size()) throw Error(ErrorCode::kInvalidArgument, "estimator: bad node");
  if (Fold(mean_[node], count_[node], snapshot_[node], observed, options_)) stale_ = true;
}

void RunningAverageEstimator::UpdateEscalated(std::size_t node, double observed) {
  if (node >= escalated_.size()) throw Error(ErrorCode::kInvalidArgument, "estimator: bad node");
  if (Fold(escalated_[node], escalated_count_[node], escalated_snapshot_[node], observed,
           options_)) {
    stale_ = true;
  }
}

void RunningAverageEstimator::UpdateService(std::size_t node, double observed) {
  if (node >= service_.size()) throw Error(ErrorCode::kInvalidArgument, "estimator: bad node");
  if (Fold(service_[node], service_count_[node], service_snapshot_[node], observed, options_)) {
    stale_ = true;
  }
}

const RemainingPath& RunningAverageEstimator::Remaining(std::size_t state) {
  if (stale_) Rebuild();
  return table_[state];
}

void RunningAverageEstimator::Rebuild() {
  const PipelineGraph& g = *graph_;
  snapshot_ = mean_;
  service_snapshot_ = service_;
  escalated_snapshot_ = escalated_;
  table_.assign(space_.size(), RemainingPath{});
  const auto& order = space_.order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    std::size_t s = *it;
    std::size_t node = space_.node_of(s);
    int min_h = std::numeric_limits<int>::max();
    int max_h = -1;
    double seq_max = 0.0, cond_sum = 0.0;
    double seq_max_esc = 0.0, cond_sum_esc = 0.0;
    double seq_min_service = 0.0;
    double cond_min_service = std::numeric_limits<double>::infinity();
    for (std::size_t e : g.forward_out(node)) {
      const Edge& edge = g.edges()[e];
      const RemainingPath& next = table_[space_.Advance(s, g.IndexOf(edge.to))];
      if (edge.kind == EdgeKind::kConditional) {
        cond_sum += edge.probability * next.mean_remaining;
        cond_sum_esc += edge.probability * next.escalated_remaining;
        cond_min_service = std::min(cond_min_service, next.min_service);
      } else {
        seq_max = std::max(seq_max, next.mean_remaining);
        seq_max_esc = std::max(seq_max_esc, next.escalated_remaining);
        seq_min_service = std::max(seq_min_service, next.min_service);
      }
      min_h = std::min(min_h, next.min_hops + 1);
      max_h = std::max(max_h, next.max_hops + 1);
    }
    double loop_p = space_.LoopProbability(s);
    double looped = 0.0, looped_esc = 0.0;
    if (loop_p > 0.0) {
      const RemainingPath& next = table_[*space_.LoopBack(s)];
      looped = next.mean_remaining;
      looped_esc = next.escalated_remaining;
      min_h = std::min(min_h, next.min_hops + 1);
      max_h = std::max(max_h, next.max_hops + 1);
    }
    RemainingPath& r = table_[s];
    r.mean_remaining =
        mean_[node] + loop_p * looped + (1.0 - loop_p) * std::max(seq_max, cond_sum);
    double esc_here = escalated_count_[node] > 0 ? escalated_[node] : mean_[node];
    r.escalated_remaining = esc_here + loop_p * looped_esc +
                            (1.0 - loop_p) * std::max(seq_max_esc, cond_sum_esc);
    if (std::isinf(cond_min_service)) cond_min_service = 0.0;
    r.min_service = service_[node] + std::max(seq_min_service, cond_min_service);
    if (g.is_exit(node) || max_h < 0) {
      r.min_hops = 0;
      r.max_hops = std::max(max_h, 0);
    } else {
      r.min_hops = min_h;
      r.max_hops = max_h;
    }
  }
  stale_ = false;
  ++rebuilds_;
}

Prediction PredictViolation(RunningAverageEstimator& est, const RequestView& req,
                            double now) {
  Prediction p;
  for (std::size_t s : req.states) {
    const RemainingPath& r = est.Remaining(s);
    p.expected_remaining =
        std::max(p.expected_remaining, req.escalated ? r.escalated_remaining : r.mean_remaining);
    p.min_remaining = std::max(p.min_remaining, r.min_service);
  }
  p.at_risk = now + p.expected_remaining > req.slo_deadline;
  return p;
}

Json MitigationOptions::ToJson() const {
  return {{"enabled", enabled},
          {"escalate", escalate},
          {"pause", pause},
          {"autoscale", autoscale},
          {"cooldown_s", cooldown_s},
          {"replan_budget_ms", replan_budget.count()},
          {"spare", spare},
          {"alpha", estimator.alpha},
          {"estimator", estimator.mode == EstimatorMode::kEwma ? "ewma" : "cumulative"}};
}

MitigationOptions MitigationOptions::FromJson(const Json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::kParse, "mitigation must be an object");
  MitigationOptions o;
  try {
    o.enabled = doc.value("enabled", o.enabled);
    o.escalate = doc.value("escalate", o.escalate);
    o.pause = doc.value("pause", o.pause);
    o.autoscale = doc.value("autoscale", o.autoscale);
    o.cooldown_s = doc.value("cooldown_s", o.cooldown_s);
    o.replan_budget = std::chrono::milliseconds(
        doc.value("replan_budget_ms", static_cast<std::int64_t>(o.replan_budget.count())));
    if (doc.contains("spare")) o.spare = doc.at("spare").get<std::map<std::string, int>>();
    o.estimator.alpha = doc.value("alpha", o.estimator.alpha);
    std::string mode = doc.value("estimator", std::string("ewma"));
    if (mode == "ewma") {
      o.estimator.mode = EstimatorMode::kEwma;
    } else if (mode == "cumulative") {
      o.estimator.mode = EstimatorMode::kCumulative;
    } else {
      throw Error(ErrorCode::kParse, "mitigation.estimator must be ewma or cumulative");
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("mitigation: ") + e.what());
  }
  if (o.cooldown_s < 0) throw Error(ErrorCode::kValidation, "mitigation.cooldown_s must be >= 0");
  for (const auto& [kind, n] : o.spare) {
    if (n < 0) throw Error(ErrorCode::kValidation, "mitigation.spare." + kind + " must be >= 0");
  }
  return o;
}

Json Action::ToJson() const {
  Json out = {{"t", t}, {"action", action}};
  if (request) out["request"] = *request;
  if (!node.empty()) out["node"] = node;
  if (!kind.empty()) out["kind"] = kind;
  return out;
}

Directives Mitigate(MitigationState& state, RunningAverageEstimator& est,
                    std::span<const RequestView> in_flight, double now,
                    const MitigationOptions& options, Capacity* capacity) {
  Directives out;
  std::set<std::uint64_t> live;
  for (const auto& req : in_flight) {
    live.insert(req.id);
    Prediction p = PredictViolation(est, req, now);
    MarkRisk(state, options, req.id, p.at_risk && Savable(p, req, now), now, out);
  }
  std::erase_if(state.at_risk, [&](std::uint64_t id) { return !live.count(id); });
  Settle(state, options, now, out, capacity);
  return out;
}

void StationQueue::Push(std::uint64_t item, Priority priority, double enqueue_t) {
  std::uint64_t seq = next_seq_++;
  std::pair<int, std::uint64_t> key{static_cast<int>(priority), seq};
  order_.insert(key);
  by_seq_.emplace(seq, Entry{item, enqueue_t});
  key_[item] = key;
}

void StationQueue::Escalate(std::uint64_t item) {
  auto it = key_.find(item);
  if (it == key_.end() || it->second.first == static_cast<int>(Priority::kEscalated)) return;
  order_.erase(it->second);
  it->second.first = static_cast<int>(Priority::kEscalated);
  order_.insert(it->second);
}

std::vector<std::uint64_t> StationQueue::PopBatch(int limit) {
  std::vector<std::uint64_t> out;
  while (!order_.empty() && static_cast<int>(out.size()) < limit) {
    auto key = *order_.begin();
    order_.erase(order_.begin());
    auto e = by_seq_.find(key.second);
    out.push_back(e->second.item);
    key_.erase(e->second.item);
    by_seq_.erase(e);
  }
  return out;
}

double StationQueue::oldest() const {
  if (by_seq_.empty()) throw Error(ErrorCode::kInternal, "oldest() on an empty queue");
  return by_seq_.begin()->second.enqueue_t;
}

std::optional<std::size_t> PickReplica(std::span<const ReplicaView> replicas) {
  std::optional<std::size_t> best;
  for (std::size_t r = 0; r < replicas.size(); ++r) {
    if (!replicas[r].idle) continue;
    if (!best || replicas[r].busy_until < replicas[*best].busy_until) best = r;
  }
  return best;
}

std::optional<DispatchDecision> Route(std::span<const ReplicaView> replicas,
                                      StationQueue& queue) {
  if (queue.empty()) return std::nullopt;
  auto r = PickReplica(replicas);
  if (!r) return std::nullopt;
  return DispatchDecision{*r, queue.PopBatch(std::max(1, replicas[*r].batch_limit))};
}

OnlineScheduler::OnlineScheduler(std::shared_ptr<const PipelineGraph> graph,
                                 MitigationOptions options, std::optional<Capacity> capacity)
    : est_(std::move(graph), options.estimator),
      options_(std::move(options)),
      capacity_(std::move(capacity)) {
  state_.autoscale_enabled = options_.autoscale;
  state_.spare_pool = options_.spare;
}

void OnlineScheduler::Track(const RequestView& req, double now) {
  std::uint64_t v = ++version_[req.id];
  ++predictions_;
  Prediction p = PredictViolation(est_, req, now);
  bool savable = Savable(p, req, now);
  MarkRisk(state_, options_, req.id, p.at_risk && savable, now, pending_);
  if (!p.at_risk) {
    due_.push({req.slo_deadline - p.expected_remaining, req.id, v});
  } else if (savable) {
    due_.push({req.slo_deadline - p.min_remaining, req.id, v});
  }
}

void OnlineScheduler::Forget(std::uint64_t id, double) {
  version_.erase(id);
  state_.at_risk.erase(id);
  state_.escalated.erase(id);
}

Directives OnlineScheduler::Step(
    double now, const std::function<std::optional<RequestView>(std::uint64_t)>& lookup) {
  while (!due_.empty() && due_.top().key < now) {
    Due d = due_.top();
    due_.pop();
    auto it = version_.find(d.id);
    if (it == version_.end() || it->second != d.version) continue;
    if (auto view = lookup(d.id)) Track(*view, now);
  }
  Settle(state_, options_, now, pending_, capacity_ ? &*capacity_ : nullptr);
  return std::exchange(pending_, Directives{});
}

}  // namespace ragflow
