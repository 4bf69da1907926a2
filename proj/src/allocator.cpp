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

#include "allocator.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

namespace ragflow {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTieTolerance = 1e-12;
constexpr double kFlowSlack = 1e-9;

bool Same(double a, double b) {
  if (!std::isfinite(a) || !std::isfinite(b)) return a == b;
  return std::abs(a - b) <= kTieTolerance * std::max({1.0, std::abs(a), std::abs(b)});
}
bool Better(double a, double b) { return a > b && !Same(a, b); }

[[noreturn]] void Infeasible(const std::string& msg) {
  throw Error(ErrorCode::kInfeasible, "infeasible: " + msg);
}

// b / T(b, a) for every eligible (node, kind), with prefix maxima over b and
// flow-aware per-row throughput bounds.
class ThroughputCache {
 public:
  explicit ThroughputCache(const AllocationProblem& p) : p_(p) {
    const std::size_t n = p.nodes(), k = p.kinds.size();
    thr_.assign(n, std::vector<std::vector<double>>(k));
    prefix_.assign(n, std::vector<std::vector<double>>(k));
    // Largest total batch each node can ever take: its own caps, limited by
    // what its predecessors can supply at most.
    reach_.assign(n, 0);
    const auto& g = *p.graph;
    for (std::size_t i : g.topo_order()) {
      double own = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        if (p.kinds[c].count > 0) own += p.max_batch[i][c];
      }
      double supply = g.forward_in(i).empty() ? own : 0.0;
      for (std::size_t e : g.forward_in(i)) {
        supply += p.edge_weights[e] * reach_[g.IndexOf(g.edges()[e].from)];
      }
      reach_[i] = static_cast<int>(std::min(own, std::floor(supply + kFlowSlack)));
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < k; ++c) {
        const int m = p.max_batch[i][c];
        if (m == 0) continue;
        const int r = p.kinds[c].count;
        auto& t = thr_[i][c];
        auto& pm = prefix_[i][c];
        t.assign(static_cast<std::size_t>(r + 1) * (m + 1), 0.0);
        pm.assign(t.size(), 0.0);
        for (int a = 1; a <= r; ++a) {
          const std::size_t row = static_cast<std::size_t>(a) * (m + 1);
          for (int b = 1; b <= m; ++b) {
            t[row + b] = b / p.latency[i][c]->Predict(b, a);
            pm[row + b] = std::max(pm[row + b - 1], t[row + b]);
          }
        }
      }
    }
    radix_.assign(k, 0);
    std::size_t combos = 1;
    for (std::size_t c = 0; c < k; ++c) {
      radix_[c] = combos;
      combos *= static_cast<std::size_t>(p.kinds[c].count) + 1;
      if (combos > (std::size_t{1} << 22)) {
        combos = 0;
        break;
      }
    }
    if (combos > 0) memo_.assign(n, std::vector<double>(combos, -1.0));
  }

  int reach(std::size_t i) const { return reach_[i]; }

  // Max of thr over b <= t on kind c.
  double PrefixMax(std::size_t i, std::size_t c, int a, int t) const {
    const int m = p_.max_batch[i][c];
    if (a == 0 || t <= 0) return 0.0;
    return prefix_[i][c][static_cast<std::size_t>(a) * (m + 1) + std::min(t, m)];
  }

  double thr(std::size_t i, std::size_t c, int b, int a) const {
    if (b == 0 || a == 0) return 0.0;
    return thr_[i][c][static_cast<std::size_t>(a) * (p_.max_batch[i][c] + 1) + b];
  }

  // Upper bound on the visit-normalised throughput of node i with replica
  // row `a`, ignoring flow except for the node's reachable total batch.
  double RowValue(std::size_t i, const std::vector<int>& a) {
    if (!memo_.empty()) {
      std::size_t key = 0;
      for (std::size_t c = 0; c < a.size(); ++c) key += a[c] * radix_[c];
      double& slot = memo_[i][key];
      if (slot < 0) slot = ComputeRowValue(i, a);
      return slot;
    }
    return ComputeRowValue(i, a);
  }

 private:
  double ComputeRowValue(std::size_t i, const std::vector<int>& a) const {
    std::vector<std::size_t> used;
    for (std::size_t c = 0; c < a.size(); ++c) {
      if (a[c] > 0 && p_.max_batch[i][c] > 0) used.push_back(c);
    }
    const int cap = reach_[i];
    double best = 0.0;
    if (used.size() == 1) {
      best = PrefixMax(i, used[0], a[used[0]], cap);
    } else if (used.size() == 2) {
      const std::size_t c0 = used[0], c1 = used[1];
      for (int b = 0; b <= std::min(cap, p_.max_batch[i][c0]); ++b) {
        best = std::max(best, thr(i, c0, b, a[c0]) + PrefixMax(i, c1, a[c1], cap - b));
      }
    } else if (!used.empty()) {
      std::vector<double> dp(cap + 1, 0.0);
      for (std::size_t c : used) {
        std::vector<double> next(cap + 1, 0.0);
        for (int t = 0; t <= cap; ++t) {
          for (int b = 0; b <= std::min(t, p_.max_batch[i][c]); ++b) {
            next[t] = std::max(next[t], dp[t - b] + thr(i, c, b, a[c]));
          }
        }
        dp = std::move(next);
      }
      best = dp[cap];
    }
    return best / p_.visit_rates[i];
  }

  const AllocationProblem& p_;
  std::vector<int> reach_;
  std::vector<std::vector<std::vector<double>>> thr_;
  std::vector<std::vector<std::vector<double>>> prefix_;
  std::vector<std::size_t> radix_;
  std::vector<std::vector<double>> memo_;
};

// Best visit-normalised throughput of one node for every total batch B,
// given a fixed replica row.
struct NodeTable {
  std::vector<double> ratio;                // index B; -inf when unreachable
  std::vector<std::vector<int>> choice;     // [kind][B] batch on that kind
  double max_ratio = 0.0;
  int max_total() const { return static_cast<int>(ratio.size()) - 1; }
};

NodeTable BuildTable(const AllocationProblem& p, ThroughputCache& cache,
                     std::size_t i, const std::vector<int>& a) {
  const std::size_t k = p.kinds.size();
  int cap = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (a[c] > 0) cap += p.max_batch[i][c];
  }
  NodeTable t;
  t.choice.assign(k, std::vector<int>(cap + 1, 0));
  std::vector<double> cur(cap + 1, -kInf);
  cur[0] = 0.0;
  int reach = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (a[c] == 0) continue;
    const int m = p.max_batch[i][c];
    std::vector<double> next(cap + 1, -kInf);
    for (int base = 0; base <= reach; ++base) {
      if (cur[base] == -kInf) continue;
      for (int b = 0; b <= m; ++b) {
        double v = cur[base] + cache.thr(i, c, b, a[c]);
        if (v > next[base + b]) {
          next[base + b] = v;
          t.choice[c][base + b] = b;
        }
      }
    }
    reach += m;
    cur = std::move(next);
  }
  t.ratio.assign(cap + 1, -kInf);
  t.max_ratio = -kInf;
  for (int b = 1; b <= cap; ++b) {
    if (cur[b] == -kInf) continue;
    t.ratio[b] = cur[b] / p.visit_rates[i];
    t.max_ratio = std::max(t.max_ratio, t.ratio[b]);
  }
  return t;
}

std::vector<int> Reconstruct(const AllocationProblem& p, const NodeTable& t,
                             const std::vector<int>& a, int total) {
  std::vector<int> b(p.kinds.size(), 0);
  for (std::size_t c = p.kinds.size(); c-- > 0;) {
    if (a[c] == 0) continue;
    b[c] = t.choice[c][total];
    total -= b[c];
  }
  return b;
}

// Upper limit on node i's total batch implied by its predecessors.
double IntakeLimit(const AllocationProblem& p, std::size_t i,
                   const std::vector<int>& totals) {
  const auto& g = *p.graph;
  if (g.forward_in(i).empty()) return kInf;
  double u = 0.0;
  for (std::size_t e : g.forward_in(i)) {
    u += p.edge_weights[e] * totals[g.IndexOf(g.edges()[e].from)];
  }
  return u;
}

int FloorWithSlack(double u) {
  if (u == kInf) return std::numeric_limits<int>::max();
  return static_cast<int>(std::floor(u + kFlowSlack));
}

// Greedy forward pass: each node takes the largest total batch reaching
// `lambda` within its intake limit. Larger totals only loosen successors, so
// this decides feasibility exactly.
std::optional<std::vector<int>> ForwardPass(
    const AllocationProblem& p, const std::vector<const NodeTable*>& tables,
    double lambda) {
  std::vector<int> totals(p.nodes(), 0);
  for (std::size_t i : p.graph->topo_order()) {
    const NodeTable& t = *tables[i];
    int cap = std::min(t.max_total(), FloorWithSlack(IntakeLimit(p, i, totals)));
    int chosen = 0;
    for (int b = cap; b >= 1; --b) {
      if (t.ratio[b] >= lambda) {
        chosen = b;
        break;
      }
    }
    if (chosen == 0) return std::nullopt;
    totals[i] = chosen;
  }
  return totals;
}

// Shrinks totals (reverse topological order) to the smallest batches that
// keep every node at `lambda` and every successor within its intake limit.
void ShrinkPass(const AllocationProblem& p,
                const std::vector<const NodeTable*>& tables, double lambda,
                std::vector<int>& totals) {
  const auto& g = *p.graph;
  const auto& order = g.topo_order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    std::size_t i = *it;
    const int original = totals[i];
    for (int b = 1; b < original; ++b) {
      if (tables[i]->ratio[b] < lambda) continue;
      totals[i] = b;
      bool ok = true;
      for (std::size_t e : g.forward_out(i)) {
        std::size_t s = g.IndexOf(g.edges()[e].to);
        if (totals[s] > FloorWithSlack(IntakeLimit(p, s, totals))) {
          ok = false;
          break;
        }
      }
      if (ok) break;
      totals[i] = original;
    }
  }
}

struct LeafResult {
  double objective = 0.0;
  std::vector<int> totals;
};

std::optional<LeafResult> EvaluateLeaf(const AllocationProblem& p,
                                       const std::vector<const NodeTable*>& tables) {
  std::vector<double> candidates;
  for (const NodeTable* t : tables) {
    for (int b = 1; b <= t->max_total(); ++b) {
      if (t->ratio[b] != -kInf) candidates.push_back(t->ratio[b]);
    }
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  if (candidates.empty()) return std::nullopt;
  if (!ForwardPass(p, tables, candidates.front())) return std::nullopt;
  std::size_t lo = 0, hi = candidates.size();  // lo feasible, hi infeasible
  while (hi - lo > 1) {
    std::size_t mid = lo + (hi - lo) / 2;
    if (ForwardPass(p, tables, candidates[mid])) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  LeafResult r;
  r.objective = candidates[lo];
  r.totals = *ForwardPass(p, tables, r.objective);
  ShrinkPass(p, tables, r.objective, r.totals);
  return r;
}

std::vector<std::size_t> EligibleKinds(const AllocationProblem& p, std::size_t i) {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < p.kinds.size(); ++c) {
    if (p.max_batch[i][c] > 0 && p.kinds[c].count > 0) out.push_back(c);
  }
  return out;
}

void CheckBasicFeasibility(const AllocationProblem& p) {
  const auto& g = *p.graph;
  for (std::size_t i = 0; i < p.nodes(); ++i) {
    if (EligibleKinds(p, i).empty()) {
      Infeasible("component \"" + g.nodes()[i].id +
                 "\" has no resource kind with capacity");
    }
  }
  if (static_cast<std::size_t>(p.total_resources()) < p.nodes()) {
    Infeasible("R = " + std::to_string(p.total_resources()) + " < N = " +
               std::to_string(p.nodes()) +
               " (every component needs at least one replica)");
  }
}

// Flow-free relaxation: per-node replica covering for a target throughput,
// solved exactly by a DP over kind usage, maximised by bisection.
class Relaxation {
 public:
  Relaxation(const AllocationProblem& p, ThroughputCache& cache)
      : p_(p), cache_(cache) {
    const std::size_t k = p.kinds.size();
    states_ = 1;
    for (std::size_t c = 0; c + 1 < k; ++c) {
      radix_.push_back(states_);
      states_ *= static_cast<std::size_t>(p.kinds[c].count) + 1;
    }
    usable_ = k > 0 && states_ <= 4'000'000;
  }

  bool usable() const { return usable_; }

  // Minimum-usage replica rows meeting `lambda` at every node.
  std::optional<std::vector<std::vector<int>>> Cover(double lambda) const {
    const std::size_t k = p_.kinds.size();
    const std::size_t n = p_.nodes();
    const int last_budget = p_.kinds[k - 1].count;
    constexpr int kNone = std::numeric_limits<int>::max();
    std::vector<int> cur(states_, kNone);
    cur[0] = 0;
    std::vector<std::vector<std::pair<std::size_t, std::uint32_t>>> parent(n);
    std::vector<std::vector<std::vector<int>>> options(n);
    for (std::size_t i = 0; i < n; ++i) {
      options[i] = Frontier(i, lambda);
      if (options[i].empty()) return std::nullopt;
      std::vector<int> next(states_, kNone);
      parent[i].assign(states_, {0, 0});
      std::vector<int> usage(k, 0);
      for (std::size_t s = 0; s < states_; ++s) {
        if (cur[s] == kNone) continue;
        Decode(s, usage);
        for (std::uint32_t o = 0; o < options[i].size(); ++o) {
          const auto& row = options[i][o];
          bool fits = true;
          std::size_t key = 0;
          for (std::size_t c = 0; c + 1 < k; ++c) {
            int u = usage[c] + row[c];
            if (u > p_.kinds[c].count) {
              fits = false;
              break;
            }
            key += static_cast<std::size_t>(u) * radix_[c];
          }
          int last = cur[s] + row[k - 1];
          if (!fits || last > last_budget) continue;
          if (last < next[key]) {
            next[key] = last;
            parent[i][key] = {s, o};
          }
        }
      }
      cur = std::move(next);
    }
    std::size_t best_state = states_;
    int best_usage = kNone;
    std::vector<int> usage(k, 0);
    for (std::size_t s = 0; s < states_; ++s) {
      if (cur[s] == kNone) continue;
      Decode(s, usage);
      int total = cur[s] + std::accumulate(usage.begin(), usage.end() - 1, 0);
      if (total < best_usage) {
        best_usage = total;
        best_state = s;
      }
    }
    if (best_state == states_) return std::nullopt;
    std::vector<std::vector<int>> rows(n);
    std::size_t s = best_state;
    for (std::size_t i = n; i-- > 0;) {
      auto [prev, o] = parent[i][s];
      rows[i] = options[i][o];
      s = prev;
    }
    return rows;
  }

  double Value(const std::vector<std::vector<int>>& rows) const {
    double v = kInf;
    for (std::size_t i = 0; i < rows.size(); ++i) v = std::min(v, cache_.RowValue(i, rows[i]));
    return v;
  }

 private:
  void Decode(std::size_t s, std::vector<int>& usage) const {
    for (std::size_t c = 0; c + 1 < p_.kinds.size(); ++c) {
      usage[c] = static_cast<int>((s / radix_[c]) % (p_.kinds[c].count + 1));
    }
  }

  // Replica rows for node i reaching `lambda`: every prefix over the first
  // eligible kinds, completed by the minimal count on the last one.
  std::vector<std::vector<int>> Frontier(std::size_t i, double lambda) const {
    const auto eligible = EligibleKinds(p_, i);
    std::vector<std::vector<int>> out;
    if (eligible.empty()) return out;
    std::vector<int> row(p_.kinds.size(), 0);
    const std::size_t last = eligible.back();
    std::function<void(std::size_t, int)> rec = [&](std::size_t pos, int used) {
      if (pos + 1 == eligible.size()) {
        const int r = p_.kinds[last].count;
        int lo = used == 0 ? 1 : 0;
        auto meets = [&](int a) {
          row[last] = a;
          return cache_.RowValue(i, row) >= lambda;
        };
        if (lo > r || !meets(r)) {
          row[last] = 0;
          return;
        }
        int hi = r;
        while (lo < hi) {
          int mid = lo + (hi - lo) / 2;
          if (meets(mid)) {
            hi = mid;
          } else {
            lo = mid + 1;
          }
        }
        row[last] = lo;
        out.push_back(row);
        row[last] = 0;
        return;
      }
      const std::size_t c = eligible[pos];
      for (int a = 0; a <= p_.kinds[c].count; ++a) {
        row[c] = a;
        rec(pos + 1, used + a);
      }
      row[c] = 0;
    };
    rec(0, 0);
    return out;
  }

  const AllocationProblem& p_;
  ThroughputCache& cache_;
  std::vector<std::size_t> radix_;
  std::size_t states_ = 1;
  bool usable_ = false;
};

struct RelaxedBound {
  double upper = kInf;
  std::optional<std::vector<std::vector<int>>> rows;
};

RelaxedBound SolveRelaxation(const AllocationProblem& p, ThroughputCache& cache) {
  RelaxedBound out;
  const std::size_t n = p.nodes();
  double hi = kInf;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> all(p.kinds.size());
    for (std::size_t c = 0; c < all.size(); ++c) all[c] = p.kinds[c].count;
    hi = std::min(hi, cache.RowValue(i, all));
  }
  out.upper = hi;
  Relaxation relax(p, cache);
  if (!relax.usable()) return out;
  auto rows = relax.Cover(0.0);
  if (!rows) {
    Infeasible("resource budgets cannot give every component a replica on an "
               "eligible kind");
  }
  if (auto top = relax.Cover(hi)) {
    out.rows = std::move(top);
    out.upper = relax.Value(*out.rows);
    return out;
  }
  double lo = relax.Value(*rows);
  out.rows = std::move(rows);
  for (int iter = 0; iter < 200 && hi - lo > 1e-14 * hi; ++iter) {
    double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (auto r = relax.Cover(mid)) {
      lo = std::max(mid, relax.Value(*r));
      out.rows = std::move(r);
    } else {
      hi = mid;
    }
  }
  out.upper = hi;
  return out;
}

class BranchAndBound {
 public:
  BranchAndBound(const AllocationProblem& p, ThroughputCache& cache,
                 std::chrono::steady_clock::time_point deadline)
      : p_(p), cache_(cache), deadline_(deadline), memo_(p.nodes()) {
    order_ = p.graph->topo_order();
    rows_.resize(p.nodes());
  }

  struct Incumbent {
    double objective = -kInf;
    int replicas = std::numeric_limits<int>::max();
    std::vector<std::vector<int>> rows;
    std::vector<int> totals;
  };

  const NodeTable& Table(std::size_t i, const std::vector<int>& row) {
    auto it = memo_[i].find(row);
    if (it == memo_[i].end()) it = memo_[i].emplace(row, BuildTable(p_, cache_, i, row)).first;
    return it->second;
  }

  // Offers a complete replica assignment as a candidate incumbent.
  double Offer(const std::vector<std::vector<int>>& rows) {
    std::vector<const NodeTable*> tables(p_.nodes());
    int replicas = 0;
    for (std::size_t i = 0; i < p_.nodes(); ++i) {
      tables[i] = &Table(i, rows[i]);
      replicas += std::accumulate(rows[i].begin(), rows[i].end(), 0);
    }
    auto leaf = EvaluateLeaf(p_, tables);
    if (!leaf) return -kInf;
    if (Better(leaf->objective, best_.objective) ||
        (Same(leaf->objective, best_.objective) && replicas < best_.replicas)) {
      best_.objective = leaf->objective;
      best_.replicas = replicas;
      best_.rows = rows;
      best_.totals = leaf->totals;
    }
    return leaf->objective;
  }

  // Builds replica rows reaching `lambda` greedily in reverse topological
  // order: each node takes the cheapest row that reaches `lambda` with a
  // total batch large enough to feed its already placed successors.
  // A positive `level` additionally caps node i's total batch at
  // level * visit_rate_i, keeping upstream demand low.
  std::optional<std::vector<std::vector<int>>> Construct(double lambda,
                                                         const std::vector<double>& cost,
                                                         double level = 0.0) {
    const std::size_t n = p_.nodes(), k = p_.kinds.size();
    const auto& g = *p_.graph;
    std::vector<int> remaining(k);
    for (std::size_t c = 0; c < k; ++c) remaining[c] = p_.kinds[c].count;
    std::vector<std::vector<int>> rows(n, std::vector<int>(k, 0));
    std::vector<int> totals(n, 0);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      const std::size_t i = *it;
      int need = 1;
      for (std::size_t e : g.forward_out(i)) {
        std::size_t s = g.IndexOf(g.edges()[e].to);
        const double w = p_.edge_weights[e];
        if (w <= 0) continue;
        double supply = 0.0;
        for (std::size_t f : g.forward_in(s)) {
          supply += p_.edge_weights[f] * p_.visit_rates[g.IndexOf(g.edges()[f].from)];
        }
        double share = w * p_.visit_rates[i] / supply;
        need = std::max(need, static_cast<int>(std::ceil(totals[s] * share / w - kFlowSlack)));
      }
      int cap = cache_.reach(i);
      if (level > 0) {
        cap = std::min(cap, static_cast<int>(std::floor(level * p_.visit_rates[i] + kFlowSlack)));
      }
      auto pick = CheapestRow(i, lambda, need, cap, remaining, cost);
      if (!pick) return std::nullopt;
      rows[i] = pick->first;
      totals[i] = pick->second;
      for (std::size_t c = 0; c < k; ++c) remaining[c] -= rows[i][c];
    }
    return rows;
  }

  // Hill climbing from the incumbent: move or add one replica unit towards
  // the bottleneck or one of its ancestors while the objective improves.
  void Improve() {
    const std::size_t n = p_.nodes(), k = p_.kinds.size();
    const auto& g = *p_.graph;
    while (best_.objective != -kInf && std::chrono::steady_clock::now() < deadline_) {
      std::vector<double> ratio(n);
      std::size_t bottleneck = 0;
      for (std::size_t i = 0; i < n; ++i) {
        ratio[i] = Table(i, best_.rows[i]).ratio[best_.totals[i]];
        if (ratio[i] < ratio[bottleneck]) bottleneck = i;
      }
      std::vector<bool> receiver(n, false);
      std::vector<std::size_t> stack = {bottleneck};
      while (!stack.empty()) {
        std::size_t v = stack.back();
        stack.pop_back();
        if (receiver[v]) continue;
        receiver[v] = true;
        for (std::size_t e : g.forward_in(v)) stack.push_back(g.IndexOf(g.edges()[e].from));
      }
      std::vector<int> spare(k);
      for (std::size_t c = 0; c < k; ++c) {
        spare[c] = p_.kinds[c].count;
        for (std::size_t i = 0; i < n; ++i) spare[c] -= best_.rows[i][c];
      }
      const double before = best_.objective;
      auto rows = best_.rows;
      for (std::size_t j = 0; j < n; ++j) {
        if (!receiver[j]) continue;
        for (std::size_t c = 0; c < k; ++c) {
          if (p_.max_batch[j][c] == 0) continue;
          rows[j][c] += 1;
          if (spare[c] > 0) {
            Offer(rows);
          } else {
            for (std::size_t i = 0; i < n; ++i) {
              if (i == j || rows[i][c] == 0) continue;
              if (std::accumulate(rows[i].begin(), rows[i].end(), 0) == 1) continue;
              rows[i][c] -= 1;
              Offer(rows);
              rows[i][c] += 1;
            }
          }
          rows[j][c] -= 1;
        }
      }
      if (!Better(best_.objective, before)) break;
    }
  }

  // Returns true when the search space was exhausted.
  bool Run() {
    std::vector<int> remaining(p_.kinds.size());
    for (std::size_t c = 0; c < remaining.size(); ++c) remaining[c] = p_.kinds[c].count;
    assigned_.assign(p_.nodes(), {});
    Dfs(0, remaining, 0);
    return !timed_out_;
  }

  const Incumbent& best() const { return best_; }

 private:
  std::vector<std::vector<int>> EnumerateRows(std::size_t i) const {
    const auto eligible = EligibleKinds(p_, i);
    std::vector<std::vector<int>> out;
    std::vector<int> row(p_.kinds.size(), 0);
    std::function<void(std::size_t)> rec = [&](std::size_t pos) {
      if (pos == eligible.size()) {
        if (std::accumulate(row.begin(), row.end(), 0) > 0) out.push_back(row);
        return;
      }
      for (int a = 0; a <= p_.kinds[eligible[pos]].count; ++a) {
        row[eligible[pos]] = a;
        rec(pos + 1);
      }
      row[eligible[pos]] = 0;
    };
    rec(0);
    std::stable_sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
      return std::accumulate(x.begin(), x.end(), 0) < std::accumulate(y.begin(), y.end(), 0);
    });
    return out;
  }

  // Cheapest row (by per-kind unit cost) on node i reaching `lambda` at some
  // total batch >= need; returns the row and the smallest such total.
  std::optional<std::pair<std::vector<int>, int>> CheapestRow(
      std::size_t i, double lambda, int need, int cap, const std::vector<int>& remaining,
      const std::vector<double>& cost) {
    const auto eligible = EligibleKinds(p_, i);
    const double target = lambda * p_.visit_rates[i];
    if (need > cap) return std::nullopt;
    std::vector<int> row(p_.kinds.size(), 0);
    auto smallest_total = [&](const std::vector<int>& r) -> int {
      const NodeTable& t = Table(i, r);
      for (int b = std::max(need, 1); b <= std::min(cap, t.max_total()); ++b) {
        if (t.ratio[b] >= lambda) return b;
      }
      return 0;
    };
    if (eligible.size() == 1) {
      const std::size_t c = eligible[0];
      const int m = std::min(p_.max_batch[i][c], cap);
      if (need > m) return std::nullopt;
      for (int a = 1; a <= remaining[c]; ++a) {
        for (int b = std::max(need, 1); b <= m; ++b) {
          if (cache_.thr(i, c, b, a) >= target) {
            row[c] = a;
            return std::make_pair(row, b);
          }
        }
      }
      return std::nullopt;
    }
    if (eligible.size() == 2) {
      const std::size_t c1 = eligible[0], c2 = eligible[1];
      const int m1 = p_.max_batch[i][c1], m2 = p_.max_batch[i][c2];
      // Sparse table over b2 for range maxima of thr on c2.
      std::vector<std::vector<double>> sparse;
      auto RangeMax = [&](int lo, int hi) {
        int level = 31 - __builtin_clz(static_cast<unsigned>(hi - lo + 1));
        return std::max(sparse[level][lo], sparse[level][hi - (1 << level) + 1]);
      };
      auto feasible = [&](int a1, int a2) {
        sparse.assign(1, std::vector<double>(m2 + 1));
        for (int b = 0; b <= m2; ++b) sparse[0][b] = cache_.thr(i, c2, b, a2);
        for (int len = 2; len <= m2 + 1; len *= 2) {
          const auto& prev = sparse.back();
          std::vector<double> next(m2 + 2 - len);
          for (int b = 0; b + len <= m2 + 1; ++b) {
            next[b] = std::max(prev[b], prev[b + len / 2]);
          }
          sparse.push_back(std::move(next));
        }
        // Totals must stay within [need, cap]: b2 in [need - b1, cap - b1].
        for (int b1 = 0; b1 <= std::min(a1 > 0 ? m1 : 0, cap); ++b1) {
          int lo2 = std::max(0, std::max(need, 1) - b1);
          int hi2 = std::min(m2, cap - b1);
          if (lo2 > hi2) continue;
          if (a2 == 0 && lo2 > 0) continue;
          if (cache_.thr(i, c1, b1, a1) + RangeMax(lo2, hi2) >= target) return true;
        }
        return false;
      };
      double best_cost = kInf;
      std::vector<int> best_row;
      for (int a1 = 0; a1 <= remaining[c1] && a1 * cost[c1] < best_cost; ++a1) {
        int lo = a1 == 0 ? 1 : 0, hi = remaining[c2];
        if (lo > hi || !feasible(a1, hi)) continue;
        while (lo < hi) {
          int mid = lo + (hi - lo) / 2;
          if (feasible(a1, mid)) {
            hi = mid;
          } else {
            lo = mid + 1;
          }
        }
        if (a1 * cost[c1] + lo * cost[c2] < best_cost) {
          best_cost = a1 * cost[c1] + lo * cost[c2];
          best_row.assign(p_.kinds.size(), 0);
          best_row[c1] = a1;
          best_row[c2] = lo;
        }
      }
      if (best_row.empty()) return std::nullopt;
      int b = smallest_total(best_row);
      if (b == 0) return std::nullopt;
      return std::make_pair(best_row, b);
    }
    if (rows_[i].empty()) rows_[i] = EnumerateRows(i);
    for (const auto& r : rows_[i]) {
      bool fits = true;
      for (std::size_t c = 0; c < r.size(); ++c) fits = fits && r[c] <= remaining[c];
      if (!fits) continue;
      if (int b = smallest_total(r); b > 0) return std::make_pair(r, b);
    }
    return std::nullopt;
  }

  double Bound(std::size_t depth, const std::vector<int>& remaining) const {
    double bound = kInf;
    for (std::size_t d = 0; d < depth; ++d) {
      std::size_t i = order_[d];
      bound = std::min(bound, cache_.RowValue(i, assigned_[i]));
    }
    for (std::size_t d = depth; d < order_.size(); ++d) {
      bound = std::min(bound, cache_.RowValue(order_[d], remaining));
    }
    return bound;
  }

  void Dfs(std::size_t depth, std::vector<int>& remaining, int used) {
    if (timed_out_) return;
    if ((++visited_ & 1023) == 0 && std::chrono::steady_clock::now() > deadline_) {
      timed_out_ = true;
      return;
    }
    const int unassigned = static_cast<int>(order_.size() - depth);
    double bound = Bound(depth, remaining);
    if (best_.objective != -kInf) {
      if (bound < best_.objective && !Same(bound, best_.objective)) return;
      if (Same(bound, best_.objective) && used + unassigned >= best_.replicas) return;
    }
    if (depth == order_.size()) {
      Offer(assigned_);
      return;
    }
    std::size_t i = order_[depth];
    if (rows_[i].empty()) rows_[i] = EnumerateRows(i);
    for (const auto& row : rows_[i]) {
      bool fits = true;
      for (std::size_t c = 0; c < row.size(); ++c) {
        if (row[c] > remaining[c]) {
          fits = false;
          break;
        }
      }
      if (!fits) continue;
      int take = std::accumulate(row.begin(), row.end(), 0);
      if (static_cast<int>(TotalRemaining(remaining)) - take < unassigned - 1) continue;
      for (std::size_t c = 0; c < row.size(); ++c) remaining[c] -= row[c];
      assigned_[i] = row;
      Dfs(depth + 1, remaining, used + take);
      for (std::size_t c = 0; c < row.size(); ++c) remaining[c] += row[c];
      if (timed_out_) return;
    }
    assigned_[i].clear();
  }

  static int TotalRemaining(const std::vector<int>& remaining) {
    return std::accumulate(remaining.begin(), remaining.end(), 0);
  }

  const AllocationProblem& p_;
  ThroughputCache& cache_;
  std::chrono::steady_clock::time_point deadline_;
  std::vector<std::map<std::vector<int>, NodeTable>> memo_;
  std::vector<std::size_t> order_;
  std::vector<std::vector<std::vector<int>>> rows_;
  std::vector<std::vector<int>> assigned_;
  Incumbent best_;
  std::uint64_t visited_ = 0;
  bool timed_out_ = false;
};

}  // namespace

int AllocationProblem::total_resources() const {
  int r = 0;
  for (const auto& k : kinds) r += k.count;
  return r;
}

std::optional<std::size_t> AllocationProblem::KindIndex(std::string_view name) const {
  for (std::size_t c = 0; c < kinds.size(); ++c) {
    if (kinds[c].name == name) return c;
  }
  return std::nullopt;
}

void AllocationProblem::Validate() const {
  auto fail = [](const std::string& m) {
    throw Error(ErrorCode::kValidation, "allocation problem: " + m);
  };
  if (!graph) fail("missing graph");
  const std::size_t n = graph->size();
  if (max_batch.size() != n || latency.size() != n || visit_rates.size() != n) {
    fail("matrix rows do not match the component count");
  }
  if (edge_weights.size() != graph->edges().size()) fail("edge weights mismatch");
  for (std::size_t c = 0; c < kinds.size(); ++c) {
    if (kinds[c].count < 0) fail("negative count for kind " + kinds[c].name);
    if (c > 0 && !(kinds[c - 1].name < kinds[c].name)) fail("kinds must be sorted and unique");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& node = graph->nodes()[i];
    if (max_batch[i].size() != kinds.size() || latency[i].size() != kinds.size()) {
      fail("matrix columns do not match the kind count");
    }
    for (std::size_t c = 0; c < kinds.size(); ++c) {
      bool affine = std::binary_search(node.affinity.begin(), node.affinity.end(),
                                       kinds[c].name);
      if (max_batch[i][c] < 0) fail("negative max batch");
      if (max_batch[i][c] > 0 && !affine) {
        fail("m > 0 for " + node.id + " on non-affine kind " + kinds[c].name);
      }
      if (max_batch[i][c] > 0) {
        if (!latency[i][c]) fail("missing latency fit for " + node.id + "/" + kinds[c].name);
        if (latency[i][c]->max_batch() < max_batch[i][c]) {
          fail("latency fit for " + node.id + " does not cover its max batch");
        }
      }
    }
    if (!(visit_rates[i] > 0)) fail("visit rate of " + node.id + " must be positive");
  }
}

AllocationProblem MakeProblem(std::shared_ptr<const PipelineGraph> graph,
                              std::vector<ResourceKind> kinds, const FitTable& fits,
                              FlowMode flow) {
  AllocationProblem p;
  std::sort(kinds.begin(), kinds.end(),
            [](const auto& a, const auto& b) { return a.name < b.name; });
  p.kinds = std::move(kinds);
  p.flow = flow;
  const std::size_t n = graph->size();
  p.max_batch.assign(n, std::vector<int>(p.kinds.size(), 0));
  p.latency.assign(n, std::vector<std::optional<PwlFit>>(p.kinds.size()));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& node = graph->nodes()[i];
    auto it = fits.find(node.id);
    if (it == fits.end()) {
      throw Error(ErrorCode::kValidation, "no latency fit for component \"" + node.id + "\"");
    }
    for (std::size_t c = 0; c < p.kinds.size(); ++c) {
      if (!std::binary_search(node.affinity.begin(), node.affinity.end(), p.kinds[c].name)) {
        continue;
      }
      auto f = it->second.find(p.kinds[c].name);
      if (f == it->second.end()) f = it->second.find("*");
      if (f == it->second.end()) continue;
      p.latency[i][c] = f->second;
      p.max_batch[i][c] = f->second.max_batch();
    }
  }
  if (flow == FlowMode::kWeighted) {
    auto rates = ExpectedVisitRates(*graph);
    for (const auto& node : graph->nodes()) p.visit_rates.push_back(rates.at(node.id));
    p.edge_weights = ForwardEdgeWeights(*graph);
  } else {
    p.visit_rates.assign(n, 1.0);
    p.edge_weights.assign(graph->edges().size(), 1.0);
  }
  p.graph = std::move(graph);
  p.Validate();
  return p;
}

int AllocationPlan::total_replicas() const {
  int total = 0;
  for (const auto& row : replicas) total += std::accumulate(row.begin(), row.end(), 0);
  return total;
}

double NodeThroughput(const AllocationProblem& p, std::size_t i,
                      const std::vector<int>& batch_row,
                      const std::vector<int>& replica_row) {
  double s = 0.0;
  for (std::size_t c = 0; c < p.kinds.size(); ++c) {
    if (batch_row[c] > 0 && replica_row[c] > 0) {
      s += batch_row[c] / p.latency[i][c]->Predict(batch_row[c], replica_row[c]);
    }
  }
  return s / p.visit_rates[i];
}

void ScorePlan(const AllocationProblem& p, AllocationPlan& plan) {
  plan.objective_throughput = kInf;
  for (std::size_t i : p.graph->topo_order()) {
    double t = NodeThroughput(p, i, plan.batch[i], plan.replicas[i]);
    if (t < plan.objective_throughput) {
      plan.objective_throughput = t;
      plan.bottleneck = p.graph->nodes()[i].id;
    }
  }
}

std::vector<std::string> ValidatePlan(const AllocationProblem& p,
                                      const AllocationPlan& plan) {
  std::vector<std::string> issues;
  const auto& g = *p.graph;
  const std::size_t n = p.nodes(), k = p.kinds.size();
  if (plan.batch.size() != n || plan.replicas.size() != n) {
    issues.push_back("shape: plan rows do not match components");
    return issues;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (plan.batch[i].size() != k || plan.replicas[i].size() != k) {
      issues.push_back("shape: plan columns do not match kinds");
      return issues;
    }
  }
  int total = 0;
  for (std::size_t c = 0; c < k; ++c) {
    int used = 0;
    for (std::size_t i = 0; i < n; ++i) used += plan.replicas[i][c];
    total += used;
    if (used > p.kinds[c].count) {
      issues.push_back("resource budget: kind " + p.kinds[c].name + " uses " + std::to_string(used) +
                       " > " + std::to_string(p.kinds[c].count));
    }
  }
  if (total > p.total_resources()) issues.push_back("resource budget: total replicas exceed R");
  std::vector<int> totals(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& id = g.nodes()[i].id;
    int b_sum = 0, a_sum = 0;
    for (std::size_t c = 0; c < k; ++c) {
      int b = plan.batch[i][c], a = plan.replicas[i][c];
      if (b < 0 || a < 0) issues.push_back("sign: negative entry for " + id);
      if (b > p.max_batch[i][c]) {
        issues.push_back("max batch: batch " + std::to_string(b) + " of " + id + " on " +
                         p.kinds[c].name + " exceeds m = " + std::to_string(p.max_batch[i][c]));
      }
      if (a > 0 && p.max_batch[i][c] == 0) {
        issues.push_back("eligibility: " + id + " has replicas on ineligible kind " +
                         p.kinds[c].name);
      }
      if (b > 0 && a == 0) {
        issues.push_back("replica: " + id + " batches on " + p.kinds[c].name +
                         " without replicas");
      }
      b_sum += std::max(b, 0);
      a_sum += std::max(a, 0);
    }
    if (b_sum < 1) issues.push_back("total batch: " + id + " has total batch 0");
    if (a_sum < 1) issues.push_back("replica: " + id + " has no replicas");
    totals[i] = b_sum;
  }
  for (std::size_t i = 0; i < n; ++i) {
    double u = IntakeLimit(p, i, totals);
    if (totals[i] > FloorWithSlack(u)) {
      std::ostringstream os;
      os << "flow conservation: " << g.nodes()[i].id << " batch " << totals[i]
         << " exceeds predecessor supply " << u;
      issues.push_back(os.str());
    }
  }
  return issues;
}

AllocationPlan SolveMaxThroughput(const AllocationProblem& p, const SolveOptions& options) {
  p.Validate();
  CheckBasicFeasibility(p);
  const auto deadline = std::chrono::steady_clock::now() + options.budget;
  ThroughputCache cache(p);
  RelaxedBound relaxed = SolveRelaxation(p, cache);

  BranchAndBound search(p, cache, deadline);
  if (options.warm_start && ValidatePlan(p, *options.warm_start).empty()) {
    search.Offer(options.warm_start->replicas);
  }
  if (relaxed.rows) search.Offer(*relaxed.rows);
  // Tighten the incumbent from below by constructing plans for targets
  // between it and the relaxation bound.
  if (search.best().objective != -kInf || relaxed.rows) {
    // Unit costs per kind; skewed variants steer two-kind nodes away from a
    // scarce kind.
    std::vector<std::vector<double>> costs = {std::vector<double>(p.kinds.size(), 1.0)};
    for (std::size_t c = 0; c < p.kinds.size() && p.kinds.size() > 1; ++c) {
      for (double w : {2.0, 4.0}) {
        costs.push_back(std::vector<double>(p.kinds.size(), 1.0));
        costs.back()[c] = w;
      }
    }
    std::vector<double> levels = {0.0};
    int widest = 0;
    for (std::size_t i = 0; i < p.nodes(); ++i) widest = std::max(widest, cache.reach(i));
    for (int l = 1; l < widest; l *= 2) {
      levels.push_back(l);
      levels.push_back(1.5 * l);
    }
    double lo = search.best().objective == -kInf ? 0.0 : search.best().objective;
    double hi = relaxed.upper;
    for (int iter = 0; iter < 40 && hi - lo > 1e-9 * hi; ++iter) {
      if (std::chrono::steady_clock::now() > deadline) break;
      double mid = 0.5 * (lo + hi);
      bool built = false;
      for (double level : levels) {
        for (const auto& cost : costs) {
          auto rows = search.Construct(mid, cost, level);
          if (rows && search.Offer(*rows) >= mid) {
            built = true;
            break;
          }
        }
        if (built) break;
      }
      if (search.best().objective >= mid) {
        lo = search.best().objective;
      } else {
        hi = mid;
      }
    }
  }
  search.Improve();

  bool exhausted = false;
  const auto& inc = search.best();
  bool closed = inc.objective != -kInf &&
                (Same(inc.objective, relaxed.upper) || inc.objective >= relaxed.upper);
  if (!closed) exhausted = search.Run();
  if (search.best().objective == -kInf) {
    if (exhausted) Infeasible("no replica assignment satisfies flow conservation");
    throw Error(ErrorCode::kBudgetExhausted, "solver budget exhausted before a feasible plan");
  }

  const auto& best = search.best();
  AllocationPlan plan;
  plan.replicas = best.rows;
  plan.batch.resize(p.nodes());
  for (std::size_t i = 0; i < p.nodes(); ++i) {
    plan.batch[i] = Reconstruct(p, search.Table(i, best.rows[i]), best.rows[i], best.totals[i]);
  }
  ScorePlan(p, plan);
  if (closed || exhausted) {
    plan.upper_bound = plan.objective_throughput;
    plan.gap = 0.0;
  } else {
    plan.upper_bound = std::max(relaxed.upper, plan.objective_throughput);
    plan.gap = (plan.upper_bound - plan.objective_throughput) / plan.upper_bound;
  }
  return plan;
}

double BruteForceSearchSpace(const AllocationProblem& p) {
  double space = 1.0;
  for (std::size_t i = 0; i < p.nodes(); ++i) {
    for (std::size_t c = 0; c < p.kinds.size(); ++c) {
      if (p.max_batch[i][c] > 0) {
        space *= static_cast<double>(p.max_batch[i][c] + 1) * (p.kinds[c].count + 1);
      }
    }
  }
  return space;
}

AllocationPlan BruteForceSolve(const AllocationProblem& p) {
  p.Validate();
  if (BruteForceSearchSpace(p) > kBruteForceLimit) {
    throw Error(ErrorCode::kInvalidArgument, "brute force: search space exceeds 1e8");
  }
  CheckBasicFeasibility(p);
  const std::size_t n = p.nodes(), k = p.kinds.size();
  const auto& order = p.graph->topo_order();

  AllocationPlan cur;
  cur.batch.assign(n, std::vector<int>(k, 0));
  cur.replicas.assign(n, std::vector<int>(k, 0));
  AllocationPlan best;
  double best_obj = -kInf;
  int best_replicas = 0;
  std::vector<int> used(k, 0);
  std::vector<int> totals(n, 0);

  auto flat_less = [&](const AllocationPlan& a, const AllocationPlan& b) {
    return a.batch < b.batch;
  };

  std::function<void(std::size_t, double, int)> pick_batches =
      [&](std::size_t depth, double running_min, int replicas) {
        if (depth == n) {
          if (Better(running_min, best_obj) ||
              (Same(running_min, best_obj) &&
               (replicas < best_replicas ||
                (replicas == best_replicas && flat_less(cur, best))))) {
            best_obj = running_min;
            best_replicas = replicas;
            best.batch = cur.batch;
            best.replicas = cur.replicas;
          }
          return;
        }
        const std::size_t i = order[depth];
        const int limit = FloorWithSlack(IntakeLimit(p, i, totals));
        std::function<void(std::size_t, int)> per_kind = [&](std::size_t c, int sum) {
          if (c == k) {
            if (sum < 1 || sum > limit) return;
            totals[i] = sum;
            double thr = NodeThroughput(p, i, cur.batch[i], cur.replicas[i]);
            pick_batches(depth + 1, std::min(running_min, thr), replicas);
            totals[i] = 0;
            return;
          }
          const int hi = cur.replicas[i][c] > 0 ? p.max_batch[i][c] : 0;
          for (int b = 0; b <= hi; ++b) {
            cur.batch[i][c] = b;
            per_kind(c + 1, sum + b);
          }
          cur.batch[i][c] = 0;
        };
        per_kind(0, 0);
      };

  std::function<void(std::size_t, int)> pick_replicas = [&](std::size_t i, int replicas) {
    if (i == n) {
      pick_batches(0, kInf, replicas);
      return;
    }
    std::function<void(std::size_t, int)> per_kind = [&](std::size_t c, int sum) {
      if (c == k) {
        if (sum >= 1) pick_replicas(i + 1, replicas + sum);
        return;
      }
      const int hi = p.max_batch[i][c] > 0 ? p.kinds[c].count - used[c] : 0;
      for (int a = 0; a <= hi; ++a) {
        cur.replicas[i][c] = a;
        used[c] += a;
        per_kind(c + 1, sum + a);
        used[c] -= a;
      }
      cur.replicas[i][c] = 0;
    };
    per_kind(0, 0);
  };
  pick_replicas(0, 0);

  if (best_obj == -kInf) Infeasible("no plan satisfies the constraints");
  ScorePlan(p, best);
  best.upper_bound = best.objective_throughput;
  best.gap = 0.0;
  return best;
}

AllocationProblem WithExtraUnit(const AllocationProblem& p, std::string_view kind) {
  AllocationProblem q = p;
  if (auto c = q.KindIndex(kind)) {
    q.kinds[*c].count += 1;
    return q;
  }
  q.kinds.push_back({std::string(kind), 1});
  std::vector<std::size_t> perm(q.kinds.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::sort(perm.begin(), perm.end(),
            [&](std::size_t a, std::size_t b) { return q.kinds[a].name < q.kinds[b].name; });
  auto permute = [&](auto& row, auto fill) {
    row.push_back(fill);
    auto copy = row;
    for (std::size_t c = 0; c < perm.size(); ++c) row[c] = copy[perm[c]];
  };
  auto kinds = q.kinds;
  for (std::size_t c = 0; c < perm.size(); ++c) q.kinds[c] = kinds[perm[c]];
  for (auto& row : q.max_batch) permute(row, 0);
  for (auto& row : q.latency) permute(row, std::optional<PwlFit>{});
  return q;
}

AllocationPlan ReplanWithExtra(const AllocationProblem& p, const AllocationPlan& plan,
                               std::string_view kind, const SolveOptions& options) {
  AllocationProblem q = WithExtraUnit(p, kind);
  const std::size_t c = *q.KindIndex(kind);
  bool usable = false;
  for (std::size_t i = 0; i < q.nodes(); ++i) usable = usable || q.max_batch[i][c] > 0;

  // Re-index the plan onto the (possibly widened) kind list.
  AllocationPlan warm = plan;
  if (q.kinds.size() != p.kinds.size()) {
    for (std::size_t i = 0; i < q.nodes(); ++i) {
      warm.batch[i].assign(q.kinds.size(), 0);
      warm.replicas[i].assign(q.kinds.size(), 0);
      for (std::size_t old = 0; old < p.kinds.size(); ++old) {
        std::size_t now = *q.KindIndex(p.kinds[old].name);
        warm.batch[i][now] = plan.batch[i][old];
        warm.replicas[i][now] = plan.replicas[i][old];
      }
    }
  }
  if (!usable) return warm;
  SolveOptions opts = options;
  opts.warm_start = warm;
  return SolveMaxThroughput(q, opts);
}

MinMaxSolution SolveMinMaxLatency(const MinMaxProblem& p) {
  const int n = static_cast<int>(p.stage_time.size());
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "minmax: no stages");
  if (p.total_batch < n) Infeasible("minmax: total batch X < N");
  if (p.machines < n) Infeasible("minmax: machines M < N");
  const int x = p.total_batch;
  const int max_m = p.machines - (n - 1);

  auto f = [&](int i, int b, int m) {
    const PwlFit& fit = p.stage_time[i];
    int per = fit.rule == ReplicaRule::kEvenSplit ? (b + m - 1) / m : b;
    if (per > fit.max_batch()) return kInf;
    return fit.Predict(b, m);
  };

  std::vector<double> candidates;
  for (int i = 0; i < n; ++i) {
    for (int m = 1; m <= max_m; ++m) {
      for (int b = 1; b <= x; ++b) {
        double v = f(i, b, m);
        if (v == kInf) break;
        candidates.push_back(v);
      }
    }
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  // Largest b with f_i(b, m) <= z (0 when even b = 1 is too slow).
  auto capacity = [&](int i, int m, double z) {
    int lo = 0, hi = x;
    while (lo < hi) {
      int mid = lo + (hi - lo + 1) / 2;
      if (f(i, mid, m) <= z) {
        lo = mid;
      } else {
        hi = mid - 1;
      }
    }
    return lo;
  };

  struct Choice {
    std::vector<int> machines;
    std::vector<int> caps;
  };
  auto feasible = [&](double z) -> std::optional<Choice> {
    // best[u] = max total capacity of the stages so far using u machines.
    std::vector<long long> best(p.machines + 1, -1);
    best[0] = 0;
    std::vector<std::vector<int>> pick(n, std::vector<int>(p.machines + 1, 0));
    for (int i = 0; i < n; ++i) {
      std::vector<long long> next(p.machines + 1, -1);
      for (int u = 0; u <= p.machines; ++u) {
        if (best[u] < 0) continue;
        for (int m = 1; u + m <= p.machines && m <= max_m; ++m) {
          int cap = capacity(i, m, z);
          if (cap == 0) continue;
          long long v = best[u] + cap;
          if (v > next[u + m]) {
            next[u + m] = v;
            pick[i][u + m] = m;
          }
        }
      }
      best = std::move(next);
    }
    int chosen = -1;
    for (int u = 0; u <= p.machines; ++u) {
      if (best[u] >= x) {
        chosen = u;
        break;
      }
    }
    if (chosen < 0) return std::nullopt;
    Choice c;
    c.machines.assign(n, 0);
    c.caps.assign(n, 0);
    for (int i = n - 1, u = chosen; i >= 0; --i) {
      c.machines[i] = pick[i][u];
      c.caps[i] = capacity(i, c.machines[i], z);
      u -= c.machines[i];
    }
    return c;
  };

  std::size_t lo = 0, hi = candidates.size();
  if (candidates.empty() || !feasible(candidates.back())) {
    Infeasible("minmax: total batch does not fit the stage domains");
  }
  hi = candidates.size() - 1;  // feasible
  while (lo < hi) {
    std::size_t mid = lo + (hi - lo) / 2;
    if (feasible(candidates[mid])) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  Choice c = *feasible(candidates[lo]);
  MinMaxSolution out;
  out.machines = c.machines;
  out.batch = c.caps;
  long long excess = std::accumulate(out.batch.begin(), out.batch.end(), 0LL) - x;
  // Trim the largest batches first; f is non-decreasing so z cannot grow.
  while (excess > 0) {
    int arg = 0;
    for (int i = 1; i < n; ++i) {
      if (out.batch[i] > out.batch[arg]) arg = i;
    }
    int second = 0;
    for (int i = 0; i < n; ++i) {
      if (i != arg) second = std::max(second, out.batch[i]);
    }
    long long step = std::min<long long>(excess, std::max(1, out.batch[arg] - second));
    step = std::min<long long>(step, out.batch[arg] - 1);
    out.batch[arg] -= static_cast<int>(step);
    excess -= step;
  }
  out.z = 0.0;
  for (int i = 0; i < n; ++i) out.z = std::max(out.z, f(i, out.batch[i], out.machines[i]));
  return out;
}

Json PlanToJson(const AllocationProblem& p, const AllocationPlan& plan) {
  Json rows = Json::array();
  for (std::size_t i = 0; i < p.nodes(); ++i) {
    for (std::size_t c = 0; c < p.kinds.size(); ++c) {
      if (plan.batch[i][c] == 0 && plan.replicas[i][c] == 0) continue;
      rows.push_back({{"component", p.graph->nodes()[i].id},
                      {"kind", p.kinds[c].name},
                      {"batch", plan.batch[i][c]},
                      {"replicas", plan.replicas[i][c]}});
    }
  }
  return {{"allocations", std::move(rows)},
          {"objective_throughput", plan.objective_throughput},
          {"bottleneck", plan.bottleneck},
          {"upper_bound", plan.upper_bound},
          {"gap", plan.gap}};
}

AllocationPlan PlanFromJson(const AllocationProblem& p, const Json& doc) {
  AllocationPlan plan;
  plan.batch.assign(p.nodes(), std::vector<int>(p.kinds.size(), 0));
  plan.replicas.assign(p.nodes(), std::vector<int>(p.kinds.size(), 0));
  try {
    for (const Json& row : doc.at("allocations")) {
      std::size_t i = p.graph->IndexOf(row.at("component").get<std::string>());
      auto c = p.KindIndex(row.at("kind").get<std::string>());
      if (!c) {
        throw Error(ErrorCode::kParse,
                    "plan: unknown kind \"" + row.at("kind").get<std::string>() + "\"");
      }
      plan.batch[i][*c] = row.at("batch").get<int>();
      plan.replicas[i][*c] = row.at("replicas").get<int>();
    }
    plan.upper_bound = doc.value("upper_bound", 0.0);
    plan.gap = doc.value("gap", 0.0);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("plan: ") + e.what());
  }
  ScorePlan(p, plan);
  return plan;
}

}  // namespace ragflow
