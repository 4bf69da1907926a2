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

#include "simulator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <queue>
#include <random>
#include <sstream>

namespace ragflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Lower rank is processed first among events at the same time.
enum class EventKind : int {
  kBatchComplete = 0,
  kArrival = 1,
  kAdmissionResume = 2,
  kAutoscaleApplied = 3,
  kBatchDispatch = 4,
};

struct Event {
  double t;
  EventKind kind;
  std::uint64_t seq;
  std::size_t a;
  std::size_t b;

  bool operator>(const Event& o) const {
    return std::tie(t, kind, seq) > std::tie(o.t, o.kind, o.seq);
  }
};

struct Item {
  std::uint64_t request;
  std::size_t state;
  std::size_t trace_index;
  double enqueue_t;
};

struct Replica {
  std::size_t kind = 0;
  int limit = 1;
  double busy_until = 0.0;
  bool idle = true;
  bool retiring = false;
  bool retired = false;
  std::vector<std::uint64_t> batch;
};

struct Station {
  StationQueue queue;
  std::vector<Replica> replicas;
  bool dispatch_pending = false;
  double timer_at = -1.0;
  int in_service = 0;
  int active = 0;
  double last_t = 0.0;
  double queue_area = 0.0;
  double replica_area = 0.0;
  double busy = 0.0;
  std::int64_t batches = 0;
  std::int64_t items = 0;
  std::vector<double> bucket_busy;
  std::vector<double> bucket_capacity;
};

struct Successor {
  std::size_t node;
  double probability;
  bool conditional;
};

struct Slot {
  std::size_t kind;
  int count;
  int limit;
};

// Adds `weight` per second over [t0, t1) to 1-second buckets.
void AddInterval(std::vector<double>& buckets, double t0, double t1, double weight) {
  if (!(t1 > t0) || weight == 0.0) return;
  auto first = static_cast<std::size_t>(std::floor(t0));
  for (std::size_t k = first; k < buckets.size(); ++k) {
    double lo = std::max(t0, static_cast<double>(k));
    double hi = std::min(t1, static_cast<double>(k + 1));
    if (hi <= lo) break;
    buckets[k] += weight * (hi - lo);
  }
}

double Quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  auto n = static_cast<double>(sorted.size());
  auto idx = static_cast<std::size_t>(std::max(1.0, std::ceil(q * n))) - 1;
  return sorted[std::min(idx, sorted.size() - 1)];
}

std::string FormatNumber(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

Rng Stream(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    stream};
  return Rng(seq);
}

// Items one replica takes per batch: the plan's b is split over the replicas
// under the even-split rule and run whole by every replica otherwise.
int PerReplicaBatch(const AllocationProblem& p, std::size_t i, std::size_t c, int b, int a) {
  const auto& fit = p.latency[i][c];
  if (fit && fit->rule == ReplicaRule::kParallel) return std::max(1, b);
  return std::max(1, (b + a - 1) / a);
}

// Per node, one slot per resource kind in use.
std::vector<std::vector<Slot>> Layout(const AllocationProblem& p, const AllocationPlan& plan,
                                      bool batching) {
  std::vector<std::vector<Slot>> out(p.nodes());
  for (std::size_t i = 0; i < p.nodes(); ++i) {
    for (std::size_t c = 0; c < p.kinds.size(); ++c) {
      int a = plan.replicas[i][c];
      if (a <= 0) continue;
      int limit = batching ? PerReplicaBatch(p, i, c, plan.batch[i][c], a) : 1;
      out[i].push_back({c, a, limit});
    }
  }
  return out;
}

class Engine {
 public:
  Engine(const AllocationProblem& problem, const AllocationPlan& plan,
         const GroundTruthTable& truth, const ScenarioConfig& scenario)
      : p_(problem),
        g_(*problem.graph),
        truth_(truth),
        sc_(scenario),
        space_(g_),
        arrival_rng_(Stream(scenario.seed, 0)),
        length_rng_(Stream(scenario.seed, 1)),
        service_rng_(Stream(scenario.seed, 2)),
        route_rng_(Stream(scenario.seed, 3)) {
    buckets_ = static_cast<std::size_t>(std::ceil(sc_.duration_s));
    stations_.resize(g_.size());
    for (auto& st : stations_) {
      st.bucket_busy.assign(buckets_, 0.0);
      st.bucket_capacity.assign(buckets_, 0.0);
    }
    series_.resize(buckets_);
    bucket_latency_.resize(buckets_);
    for (std::size_t k = 0; k < buckets_; ++k) series_[k].t = static_cast<double>(k);
    succ_.resize(g_.size());
    for (std::size_t i = 0; i < g_.size(); ++i) {
      for (std::size_t e : g_.forward_out(i)) {
        const Edge& edge = g_.edges()[e];
        succ_[i].push_back({g_.IndexOf(edge.to), edge.probability,
                            edge.kind == EdgeKind::kConditional});
      }
    }
    topo_pos_.resize(g_.size());
    for (std::size_t k = 0; k < g_.topo_order().size(); ++k) topo_pos_[g_.topo_order()[k]] = k;
    truth_index_.assign(g_.size(), std::vector<const GroundTruthLatency*>(p_.kinds.size()));

    AllocationPlan used = sc_.toggles.component_allocation ? plan : UniformPlan(p_);
    ApplyPlan(used);
    if (sc_.mitigation.enabled) {
      sched_.emplace(p_.graph, sc_.mitigation, Capacity{p_, used});
    }
  }

  SimulationResult Run() {
    double first = sc_.arrivals == ArrivalProcess::kDeterministic ? 0.0 : NextArrival(0.0);
    if (first < sc_.duration_s) Push(first, EventKind::kArrival, 0, 0);
    while (!events_.empty() && events_.top().t <= sc_.duration_s) {
      Event e = events_.top();
      events_.pop();
      now_ = e.t;
      switch (e.kind) {
        case EventKind::kArrival:
          OnArrival();
          break;
        case EventKind::kBatchDispatch:
          if (e.b == 0) {
            stations_[e.a].dispatch_pending = false;
          } else {
            stations_[e.a].timer_at = -1.0;
          }
          TryDispatch(e.a);
          break;
        case EventKind::kBatchComplete:
          OnComplete(e.a, e.b);
          break;
        case EventKind::kAdmissionResume:
          Flush();
          break;
        case EventKind::kAutoscaleApplied:
          ApplyPlan(pending_plans_[e.a]);
          for (std::size_t i = 0; i < g_.size(); ++i) RequestDispatch(i);
          break;
      }
      if (sched_) SchedulerStep();
    }
    now_ = sc_.duration_s;
    for (auto& st : stations_) Touch(st);
    return Finish();
  }

 private:
  void Push(double t, EventKind kind, std::size_t a, std::size_t b) {
    events_.push({t, kind, seq_++, a, b});
  }

  double NextArrival(double t) {
    if (sc_.arrivals == ArrivalProcess::kDeterministic) {
      double r = sc_.RateAt(t);
      return r > 0 ? t + 1.0 / r : kInf;
    }
    while (true) {
      double r = sc_.RateAt(t);
      double boundary = kInf;
      for (const auto& ph : sc_.schedule) {
        if (ph.start_s > t) boundary = std::min(boundary, ph.start_s);
      }
      if (r > 0) {
        double dt = std::exponential_distribution<double>(r)(arrival_rng_);
        if (t + dt < boundary) return t + dt;
      }
      if (boundary == kInf) return kInf;
      t = boundary;
    }
  }

  bool AdmissionOpen() const { return !sched_ || sched_->state().admission_open; }

  const GroundTruthLatency& Truth(std::size_t node, std::size_t kind) {
    auto& slot = truth_index_[node][kind];
    if (slot == nullptr) slot = &TruthFor(truth_, g_.nodes()[node].id, p_.kinds[kind].name);
    return *slot;
  }

  void Touch(Station& st) {
    double dt = now_ - st.last_t;
    if (dt > 0) {
      st.queue_area += static_cast<double>(st.queue.size()) * dt;
      st.replica_area += st.active * dt;
      AddInterval(st.bucket_capacity, st.last_t, now_, st.active);
    }
    st.last_t = now_;
  }

  void ApplyPlan(const AllocationPlan& plan) {
    auto layout = Layout(p_, plan, sc_.toggles.batching);
    wave_size_ = 1;
    for (std::size_t i = 0; i < g_.size(); ++i) {
      Station& st = stations_[i];
      Touch(st);
      int capacity = 0;
      for (std::size_t c = 0; c < p_.kinds.size(); ++c) {
        int want = 0, limit = 1;
        for (const auto& s : layout[i]) {
          if (s.kind == c) {
            want = s.count;
            limit = s.limit;
          }
        }
        capacity += want * limit;
        if (want > 0) Truth(i, c);
        int have = 0;
        for (auto& r : st.replicas) {
          if (r.kind != c || r.retired || r.retiring) continue;
          if (have < want) {
            r.limit = limit;
            ++have;
          } else if (r.idle) {
            r.retired = true;
            --st.active;
          } else {
            r.retiring = true;
          }
        }
        for (; have < want; ++have) {
          Replica r;
          r.kind = c;
          r.limit = limit;
          r.busy_until = now_;
          st.replicas.push_back(std::move(r));
          ++st.active;
        }
      }
      if (sc_.toggles.batching) wave_size_ = std::max(wave_size_, capacity);
    }
  }

  void OnArrival() {
    Request r;
    r.id = requests_.size();
    r.arrival_time = now_;
    r.slo_deadline = now_ + sc_.slo_s;
    std::lognormal_distribution<double> len(sc_.query_len_mu, sc_.query_len_sigma);
    r.query_len = std::max(1, static_cast<int>(std::lround(len(length_rng_))));
    requests_.push_back(std::move(r));
    if (now_ < sc_.duration_s) ++series_[Bucket(now_)].arrivals;
    buffer_.push_back(requests_.back().id);
    double next = NextArrival(now_);
    if (next < sc_.duration_s) Push(next, EventKind::kArrival, 0, 0);
    Flush();
  }

  std::size_t Bucket(double t) const {
    return std::min(buckets_ - 1, static_cast<std::size_t>(std::floor(t)));
  }

  void Flush() {
    if (!AdmissionOpen()) return;
    if (sc_.toggles.pipelining) {
      while (!buffer_.empty()) {
        Admit(buffer_.front());
        buffer_.pop_front();
      }
      return;
    }
    if (admitted_in_flight_ > 0) return;
    for (int k = 0; k < wave_size_ && !buffer_.empty(); ++k) {
      Admit(buffer_.front());
      buffer_.pop_front();
    }
  }

  void Admit(std::uint64_t id) {
    Request& r = requests_[id];
    r.admitted_time = now_;
    ++admitted_in_flight_;
    ++admitted_;
    Enqueue(id, space_.Initial());
    Track(r);
  }

  void Enqueue(std::uint64_t request, std::size_t state) {
    Request& r = requests_[request];
    std::size_t node = space_.node_of(state);
    std::uint64_t id = items_.size();
    items_.push_back({request, state, r.trace.size(), now_});
    r.trace.push_back({node, -1, now_, kNaN, kNaN});
    r.states.push_back(state);
    r.live_items.push_back(id);
    Station& st = stations_[node];
    Touch(st);
    st.queue.Push(id, r.priority, now_);
    RequestDispatch(node);
  }

  void RequestDispatch(std::size_t node) {
    Station& st = stations_[node];
    if (st.dispatch_pending) return;
    st.dispatch_pending = true;
    Push(now_, EventKind::kBatchDispatch, node, 0);
  }

  std::optional<std::size_t> NextWaveNode() const {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < g_.size(); ++i) {
      if (stations_[i].queue.empty()) continue;
      if (!best || topo_pos_[i] < topo_pos_[*best]) best = i;
    }
    return best;
  }

  void TryDispatch(std::size_t node) {
    Station& st = stations_[node];
    std::vector<ReplicaView> views;
    while (!st.queue.empty()) {
      if (!sc_.toggles.pipelining) {
        if (active_node_ && *active_node_ != node) return;
        if (!active_node_) {
          if (batches_in_service_ > 0 || NextWaveNode() != node) return;
          active_node_ = node;
        }
      }
      views.clear();
      for (const auto& r : st.replicas) {
        views.push_back({r.busy_until, r.idle && !r.retired && !r.retiring, r.limit});
      }
      auto pick = PickReplica(views);
      if (!pick) return;
      if (sc_.toggles.pipelining && sc_.batch_timeout_s > 0 &&
          static_cast<int>(st.queue.size()) < views[*pick].batch_limit) {
        double due = st.queue.oldest() + sc_.batch_timeout_s;
        if (now_ < due) {
          if (st.timer_at != due) {
            st.timer_at = due;
            Push(due, EventKind::kBatchDispatch, node, 1);
          }
          return;
        }
      }
      Touch(st);
      auto t0 = std::chrono::steady_clock::now();
      auto decision = Route(views, st.queue);
      stats_.seconds +=
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      ++stats_.routes;
      StartBatch(node, decision->replica, std::move(decision->items));
    }
  }

  void StartBatch(std::size_t node, std::size_t replica, std::vector<std::uint64_t> batch) {
    Station& st = stations_[node];
    Replica& r = st.replicas[replica];
    const auto n = static_cast<int>(batch.size());
    double service = EvalGroundTruth(Truth(node, r.kind), n, 1, &service_rng_);
    double finish = now_ + service;
    for (std::uint64_t id : batch) {
      Item& it = items_[id];
      TraceEntry& e = requests_[it.request].trace[it.trace_index];
      e.start_t = now_;
      e.replica = static_cast<int>(replica);
    }
    r.idle = false;
    r.busy_until = finish;
    r.batch = std::move(batch);
    ++st.in_service;
    ++batches_in_service_;
    ++st.batches;
    st.items += n;
    double end = std::min(finish, sc_.duration_s);
    if (end > now_) {
      st.busy += end - now_;
      AddInterval(st.bucket_busy, now_, end, 1.0);
    }
    Push(finish, EventKind::kBatchComplete, node, replica);
  }

  void OnComplete(std::size_t node, std::size_t replica) {
    Station& st = stations_[node];
    Replica& r = st.replicas[replica];
    std::vector<std::uint64_t> batch = std::move(r.batch);
    r.batch.clear();
    r.idle = true;
    --st.in_service;
    --batches_in_service_;
    if (r.retiring) {
      Touch(st);
      r.retiring = false;
      r.retired = true;
      --st.active;
    }
    for (std::uint64_t id : batch) {
      Item& it = items_[id];
      TraceEntry& e = requests_[it.request].trace[it.trace_index];
      e.finish_t = now_;
      if (sched_) {
        sched_->Observe(node, now_ - it.enqueue_t, now_ - e.start_t,
                        requests_[it.request].priority == Priority::kEscalated);
      }
    }
    for (std::uint64_t id : batch) Advance(id);
    RequestDispatch(node);
    if (!sc_.toggles.pipelining) {
      if (active_node_ == node && st.queue.empty() && st.in_service == 0) {
        active_node_.reset();
        if (auto next = NextWaveNode()) RequestDispatch(*next);
      }
      Flush();
    }
  }

  void Advance(std::uint64_t item_id) {
    const Item it = items_[item_id];
    Request& r = requests_[it.request];
    auto pos = static_cast<std::size_t>(
        std::find(r.live_items.begin(), r.live_items.end(), item_id) - r.live_items.begin());
    r.live_items.erase(r.live_items.begin() + static_cast<std::ptrdiff_t>(pos));
    r.states.erase(r.states.begin() + static_cast<std::ptrdiff_t>(pos));

    std::size_t node = space_.node_of(it.state);
    double fanout = g_.nodes()[node].fanout;
    int copies = static_cast<int>(std::floor(fanout));
    double frac = fanout - copies;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (frac > 0 && u(route_rng_) < frac) ++copies;
    double loop_p = space_.LoopProbability(it.state);
    for (int c = 0; c < copies; ++c) {
      if (loop_p > 0 && u(route_rng_) < loop_p) {
        Enqueue(it.request, *space_.LoopBack(it.state));
        continue;
      }
      bool has_cond = false;
      for (const auto& s : succ_[node]) {
        if (s.conditional) {
          has_cond = true;
        } else {
          Enqueue(it.request, space_.Advance(it.state, s.node));
        }
      }
      if (!has_cond) continue;
      double x = u(route_rng_), acc = 0.0;
      for (const auto& s : succ_[node]) {
        if (!s.conditional) continue;
        acc += s.probability;
        if (x < acc) {
          Enqueue(it.request, space_.Advance(it.state, s.node));
          break;
        }
      }
    }
    if (r.live_items.empty()) {
      Complete(r);
    } else {
      Track(r);
    }
  }

  void Complete(Request& r) {
    r.completion_time = now_;
    bool late = now_ > r.slo_deadline;
    r.status = late ? RequestStatus::kViolated : RequestStatus::kCompleted;
    --admitted_in_flight_;
    ++completions_;
    latencies_.push_back(r.latency());
    BucketMetrics& b = series_[Bucket(now_)];
    ++b.completions;
    bucket_latency_[Bucket(now_)].push_back(r.latency());
    if (late) {
      ++late_;
      ++b.violations;
    }
    if (sched_) sched_->Forget(r.id, now_);
  }

  void Track(const Request& r) {
    if (!sched_) return;
    auto t0 = std::chrono::steady_clock::now();
    sched_->Track(View(r), now_);
    stats_.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  static RequestView View(const Request& r) {
    return {r.id, r.arrival_time, r.slo_deadline, std::span<const std::size_t>(r.states),
            r.priority == Priority::kEscalated};
  }

  void SchedulerStep() {
    auto t0 = std::chrono::steady_clock::now();
    Directives d = sched_->Step(now_, [&](std::uint64_t id) -> std::optional<RequestView> {
      const Request& r = requests_[id];
      if (r.status != RequestStatus::kInFlight || r.live_items.empty()) return std::nullopt;
      return View(r);
    });
    stats_.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (std::uint64_t id : d.escalate) {
      Request& r = requests_[id];
      r.priority = Priority::kEscalated;
      for (std::uint64_t item : r.live_items) {
        stations_[space_.node_of(items_[item].state)].queue.Escalate(item);
      }
      Track(r);
    }
    if (d.resume) Push(now_, EventKind::kAdmissionResume, 0, 0);
    if (d.autoscale) {
      pending_plans_.push_back(d.autoscale->plan);
      Push(now_, EventKind::kAutoscaleApplied, pending_plans_.size() - 1, 0);
    }
  }

  SimulationResult Finish() {
    SimulationResult out;
    MetricsReport& m = out.report;
    m.duration_s = sc_.duration_s;
    m.arrivals = static_cast<std::int64_t>(requests_.size());
    m.admitted = admitted_;
    m.completions = completions_;
    m.late = late_;
    m.in_flight = m.arrivals - m.completions;
    for (const auto& r : requests_) {
      if (r.status == RequestStatus::kInFlight && r.slo_deadline < sc_.duration_s) ++m.overdue;
    }
    m.throughput = static_cast<double>(m.completions) / sc_.duration_s;
    m.goodput = static_cast<double>(m.completions - m.late) / sc_.duration_s;
    auto judged = m.completions + m.overdue;
    m.slo_violation_rate =
        judged == 0 ? 0.0 : static_cast<double>(m.late + m.overdue) / static_cast<double>(judged);
    std::sort(latencies_.begin(), latencies_.end());
    m.p50 = Quantile(latencies_, 0.50);
    m.p95 = Quantile(latencies_, 0.95);
    m.p99 = Quantile(latencies_, 0.99);
    double sum = 0.0;
    for (double l : latencies_) sum += l;
    m.mean_latency = latencies_.empty() ? 0.0 : sum / static_cast<double>(latencies_.size());
    for (std::size_t i = 0; i < g_.size(); ++i) {
      const Station& st = stations_[i];
      StationMetrics s;
      s.node = g_.nodes()[i].id;
      s.utilization = st.replica_area > 0 ? st.busy / st.replica_area : 0.0;
      s.mean_queue_length = st.queue_area / sc_.duration_s;
      s.batches = st.batches;
      s.items = st.items;
      s.replicas = st.active;
      m.stations.push_back(std::move(s));
    }
    for (std::size_t k = 0; k < buckets_; ++k) {
      BucketMetrics& b = series_[k];
      auto& lat = bucket_latency_[k];
      std::sort(lat.begin(), lat.end());
      b.p50 = Quantile(lat, 0.50);
      b.p95 = Quantile(lat, 0.95);
      for (const auto& st : stations_) {
        b.utilization.push_back(st.bucket_capacity[k] > 0
                                    ? st.bucket_busy[k] / st.bucket_capacity[k]
                                    : 0.0);
      }
    }
    m.series = std::move(series_);
    if (sched_) m.actions_log = sched_->state().actions_log;
    if (sched_) stats_.predictions = sched_->predictions();
    out.stats = stats_;
    out.requests = std::move(requests_);
    return out;
  }

  const AllocationProblem& p_;
  const PipelineGraph& g_;
  const GroundTruthTable& truth_;
  const ScenarioConfig& sc_;
  StateSpace space_;
  Rng arrival_rng_, length_rng_, service_rng_, route_rng_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  std::uint64_t seq_ = 0;
  double now_ = 0.0;
  std::size_t buckets_ = 0;
  std::vector<Station> stations_;
  std::vector<std::vector<Successor>> succ_;
  std::vector<std::size_t> topo_pos_;
  std::vector<std::vector<const GroundTruthLatency*>> truth_index_;
  std::vector<Request> requests_;
  std::vector<Item> items_;
  std::deque<std::uint64_t> buffer_;
  std::int64_t admitted_in_flight_ = 0;
  std::int64_t admitted_ = 0;
  std::int64_t completions_ = 0;
  std::int64_t late_ = 0;
  int wave_size_ = 1;
  int batches_in_service_ = 0;
  std::optional<std::size_t> active_node_;
  std::vector<double> latencies_;
  std::vector<BucketMetrics> series_;
  std::vector<std::vector<double>> bucket_latency_;
  std::optional<OnlineScheduler> sched_;
  std::vector<AllocationPlan> pending_plans_;
  SchedulerStats stats_;
};

double NumberField(const Json& doc, const char* key, double fallback) {
  auto it = doc.find(key);
  if (it == doc.end()) return fallback;
  if (!it->is_number()) {
    throw Error(ErrorCode::kParse, std::string("scenario.") + key + " must be a number");
  }
  return it->get<double>();
}

bool BoolField(const Json& doc, const char* key, bool fallback) {
  auto it = doc.find(key);
  if (it == doc.end()) return fallback;
  if (it->is_boolean()) return it->get<bool>();
  if (it->is_string()) {
    auto s = it->get<std::string>();
    if (s == "on") return true;
    if (s == "off") return false;
  }
  throw Error(ErrorCode::kParse, std::string("scenario toggle ") + key + " must be a boolean");
}

}  // namespace

const GroundTruthLatency& TruthFor(const GroundTruthTable& table, const std::string& node,
                                   const std::string& kind) {
  auto it = table.find(node);
  if (it != table.end()) {
    auto k = it->second.find(kind);
    if (k == it->second.end()) k = it->second.find("*");
    if (k != it->second.end()) return k->second;
  }
  throw Error(ErrorCode::kValidation,
              "no ground-truth latency for component \"" + node + "\" on \"" + kind + "\"");
}

void ScenarioConfig::Validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kValidation, "scenario: " + what); };
  if (!(arrival_rate_rps >= 0) || !std::isfinite(arrival_rate_rps)) {
    bad("arrival_rate_rps must be >= 0");
  }
  if (!(duration_s > 0) || !std::isfinite(duration_s)) bad("duration_s must be > 0");
  if (!(slo_s > 0)) bad("slo_s must be > 0");
  if (!(query_len_sigma >= 0)) bad("query_len.sigma must be >= 0");
  if (!(batch_timeout_s >= 0)) bad("batch_timeout_s must be >= 0");
  double prev = -kInf;
  for (const auto& ph : schedule) {
    if (!(ph.start_s >= 0) || !(ph.rate_rps >= 0)) bad("schedule entries need start_s, rate_rps >= 0");
    if (ph.start_s <= prev) bad("schedule must be sorted by start_s");
    prev = ph.start_s;
  }
}

double ScenarioConfig::RateAt(double t) const {
  double r = arrival_rate_rps;
  for (const auto& ph : schedule) {
    if (ph.start_s <= t) r = ph.rate_rps;
  }
  return r;
}

Json ScenarioConfig::ToJson() const {
  Json sched = Json::array();
  for (const auto& ph : schedule) sched.push_back({{"start_s", ph.start_s}, {"rate_rps", ph.rate_rps}});
  return {{"arrival_rate_rps", arrival_rate_rps},
          {"duration_s", duration_s},
          {"slo_s", slo_s},
          {"seed", seed},
          {"query_len", {{"mu", query_len_mu}, {"sigma", query_len_sigma}}},
          {"batch_timeout_s", batch_timeout_s},
          {"arrival_process", arrivals == ArrivalProcess::kPoisson ? "poisson" : "deterministic"},
          {"schedule", sched},
          {"toggles",
           {{"batching", toggles.batching},
            {"pipelining", toggles.pipelining},
            {"component_allocation", toggles.component_allocation}}},
          {"mitigation", mitigation.ToJson()}};
}

ScenarioConfig ScenarioConfig::FromJson(const Json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::kParse, "scenario must be a JSON object");
  ScenarioConfig s;
  s.arrival_rate_rps = NumberField(doc, "arrival_rate_rps", s.arrival_rate_rps);
  s.duration_s = NumberField(doc, "duration_s", s.duration_s);
  s.slo_s = NumberField(doc, "slo_s", s.slo_s);
  if (auto it = doc.find("seed"); it != doc.end()) {
    if (!it->is_number_integer()) throw Error(ErrorCode::kParse, "scenario.seed must be an integer");
    s.seed = it->get<std::uint64_t>();
  }
  if (auto it = doc.find("query_len"); it != doc.end()) {
    if (!it->is_object()) throw Error(ErrorCode::kParse, "scenario.query_len must be an object");
    s.query_len_mu = NumberField(*it, "mu", s.query_len_mu);
    s.query_len_sigma = NumberField(*it, "sigma", s.query_len_sigma);
  }
  s.batch_timeout_s = NumberField(doc, "batch_timeout_s", s.batch_timeout_s);
  if (auto it = doc.find("arrival_process"); it != doc.end()) {
    std::string v = it->is_string() ? it->get<std::string>() : "";
    if (v == "poisson") {
      s.arrivals = ArrivalProcess::kPoisson;
    } else if (v == "deterministic") {
      s.arrivals = ArrivalProcess::kDeterministic;
    } else {
      throw Error(ErrorCode::kParse, "scenario.arrival_process must be poisson or deterministic");
    }
  }
  if (auto it = doc.find("schedule"); it != doc.end()) {
    if (!it->is_array()) throw Error(ErrorCode::kParse, "scenario.schedule must be a list");
    for (const auto& ph : *it) {
      if (!ph.is_object()) throw Error(ErrorCode::kParse, "scenario.schedule entries must be objects");
      s.schedule.push_back({NumberField(ph, "start_s", 0.0), NumberField(ph, "rate_rps", 0.0)});
    }
  }
  if (auto it = doc.find("toggles"); it != doc.end()) {
    if (!it->is_object()) throw Error(ErrorCode::kParse, "scenario.toggles must be an object");
    s.toggles.batching = BoolField(*it, "batching", true);
    s.toggles.pipelining = BoolField(*it, "pipelining", true);
    s.toggles.component_allocation = BoolField(*it, "component_allocation", true);
  }
  if (auto it = doc.find("mitigation"); it != doc.end()) {
    s.mitigation = MitigationOptions::FromJson(*it);
  }
  s.Validate();
  return s;
}

ScenarioConfig ToggleFeatures(ScenarioConfig scenario, const Toggles& toggles) {
  scenario.toggles = toggles;
  return scenario;
}

AllocationPlan UniformPlan(const AllocationProblem& p) {
  const PipelineGraph& g = *p.graph;
  AllocationPlan plan;
  plan.batch.assign(p.nodes(), std::vector<int>(p.kinds.size(), 0));
  plan.replicas.assign(p.nodes(), std::vector<int>(p.kinds.size(), 0));
  for (std::size_t c = 0; c < p.kinds.size(); ++c) {
    std::vector<std::size_t> eligible;
    for (std::size_t i : g.topo_order()) {
      if (p.max_batch[i][c] > 0) eligible.push_back(i);
    }
    if (eligible.empty()) continue;
    for (int u = 0; u < p.kinds[c].count; ++u) {
      ++plan.replicas[eligible[static_cast<std::size_t>(u) % eligible.size()]][c];
    }
  }
  for (std::size_t i = 0; i < p.nodes(); ++i) {
    int total = 0;
    for (std::size_t c = 0; c < p.kinds.size(); ++c) {
      const auto& fit = p.latency[i][c];
      bool parallel = fit && fit->rule == ReplicaRule::kParallel;
      plan.batch[i][c] = (parallel ? 1 : plan.replicas[i][c]) * p.max_batch[i][c];
      total += plan.replicas[i][c];
    }
    if (total == 0) {
      throw Error(ErrorCode::kInfeasible, "uniform spread leaves component \"" +
                                              g.nodes()[i].id + "\" without resources");
    }
  }
  ScorePlan(p, plan);
  return plan;
}

Json Request::ToJson(const PipelineGraph& g) const {
  auto num = [](double v) { return std::isnan(v) ? Json(nullptr) : Json(v); };
  Json trace_json = Json::array();
  for (const auto& e : trace) {
    trace_json.push_back({{"node", g.nodes()[e.node].id},
                          {"replica", e.replica},
                          {"enqueue_t", e.enqueue_t},
                          {"start_t", num(e.start_t)},
                          {"finish_t", num(e.finish_t)}});
  }
  const char* st = status == RequestStatus::kInFlight    ? "in_flight"
                   : status == RequestStatus::kCompleted ? "completed"
                                                          : "violated";
  return {{"id", id},
          {"arrival_time", arrival_time},
          {"query_len", query_len},
          {"slo_deadline", slo_deadline},
          {"priority", priority == Priority::kEscalated ? "escalated" : "normal"},
          {"status", st},
          {"completion_time", completion_time < 0 ? Json(nullptr) : Json(completion_time)},
          {"trace", std::move(trace_json)}};
}

Json MetricsReport::ToJson() const {
  Json stations_json = Json::array();
  for (const auto& s : stations) {
    stations_json.push_back({{"node", s.node},
                             {"utilization", s.utilization},
                             {"mean_queue_length", s.mean_queue_length},
                             {"batches", s.batches},
                             {"items", s.items},
                             {"replicas", s.replicas}});
  }
  Json series_json = Json::array();
  for (const auto& b : series) {
    Json util = Json::object();
    for (std::size_t i = 0; i < b.utilization.size() && i < stations.size(); ++i) {
      util[stations[i].node] = b.utilization[i];
    }
    series_json.push_back({{"t", b.t},
                           {"arrivals", b.arrivals},
                           {"completions", b.completions},
                           {"violations", b.violations},
                           {"p50", b.p50},
                           {"p95", b.p95},
                           {"utilization", util}});
  }
  Json actions = Json::array();
  for (const auto& a : actions_log) actions.push_back(a.ToJson());
  return {{"schema_version", kSchemaVersion},
          {"duration_s", duration_s},
          {"arrivals", arrivals},
          {"admitted", admitted},
          {"completions", completions},
          {"late", late},
          {"overdue", overdue},
          {"in_flight", in_flight},
          {"rejected", rejected},
          {"throughput", throughput},
          {"goodput", goodput},
          {"slo_violation_rate", slo_violation_rate},
          {"latency", {{"p50", p50}, {"p95", p95}, {"p99", p99}, {"mean", mean_latency}}},
          {"stations", stations_json},
          {"series", series_json},
          {"actions_log", actions}};
}

std::string MetricsReport::ToCsv() const {
  std::ostringstream out;
  out << "t,arrivals,completions,violations,p50,p95";
  for (const auto& s : stations) out << ",util_" << s.node;
  out << '\n';
  for (const auto& b : series) {
    out << FormatNumber(b.t) << ',' << b.arrivals << ',' << b.completions << ','
        << b.violations << ',' << FormatNumber(b.p50) << ',' << FormatNumber(b.p95);
    for (double u : b.utilization) out << ',' << FormatNumber(u);
    out << '\n';
  }
  return out.str();
}

SimulationResult Simulate(const AllocationProblem& problem, const AllocationPlan& plan,
                          const GroundTruthTable& truth, const ScenarioConfig& scenario) {
  problem.Validate();
  scenario.Validate();
  auto problems = ValidatePlan(problem, plan);
  if (!problems.empty()) {
    std::string msg = "plan rejected:";
    for (const auto& m : problems) msg += " " + m + ";";
    throw Error(ErrorCode::kValidation, msg);
  }
  Engine engine(problem, plan, truth, scenario);
  return engine.Run();
}

}  // namespace ragflow
