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

#include "pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>

namespace ragflow {
namespace {

constexpr double kProbabilityTolerance = 1e-9;
constexpr std::size_t kMaxStates = 1u << 20;

constexpr std::pair<ComponentKind, std::string_view> kKindNames[] = {
    {ComponentKind::kRetriever, "retriever"},
    {ComponentKind::kAugmenter, "augmenter"},
    {ComponentKind::kGenerator, "generator"},
    {ComponentKind::kGrader, "grader"},
    {ComponentKind::kRewriter, "rewriter"},
    {ComponentKind::kWebSearch, "websearch"},
    {ComponentKind::kCustom, "custom"},
};

[[noreturn]] void Invalid(const std::string& msg) {
  throw Error(ErrorCode::kValidation, "pipeline: " + msg);
}

[[noreturn]] void Malformed(const std::string& msg) {
  throw Error(ErrorCode::kParse, "pipeline: " + msg);
}

const Json& Require(const Json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) Malformed(where + " is missing \"" + key + "\"");
  return *it;
}

std::string RequireString(const Json& obj, const char* key,
                          const std::string& where) {
  const Json& v = Require(obj, key, where);
  if (!v.is_string()) Malformed(where + "." + key + " must be a string");
  return v.get<std::string>();
}

EdgeKind EdgeKindFromString(std::string_view s) {
  if (s == "sequential") return EdgeKind::kSequential;
  if (s == "conditional") return EdgeKind::kConditional;
  if (s == "recursive_back") return EdgeKind::kRecursiveBack;
  Malformed("unknown edge kind \"" + std::string(s) + "\"");
}

}  // namespace

std::string_view ToString(ComponentKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "custom";
}

ComponentKind ComponentKindFromString(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  Malformed("unknown component kind \"" + std::string(name) + "\"");
}

std::string_view ToString(EdgeKind kind) {
  switch (kind) {
    case EdgeKind::kSequential:
      return "sequential";
    case EdgeKind::kConditional:
      return "conditional";
    case EdgeKind::kRecursiveBack:
      return "recursive_back";
  }
  return "sequential";
}

PipelineGraph PipelineGraph::Parse(std::string_view text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    Malformed(std::string("invalid JSON: ") + e.what());
  }
  return FromJson(doc);
}

PipelineGraph PipelineGraph::FromJson(const Json& doc) {
  if (!doc.is_object()) Malformed("document must be an object");
  PipelineGraph g;

  const Json& nodes = Require(doc, "nodes", "document");
  if (!nodes.is_array() || nodes.empty()) {
    Malformed("\"nodes\" must be a non-empty list");
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Json& n = nodes[i];
    std::string where = "nodes[" + std::to_string(i) + "]";
    if (!n.is_object()) Malformed(where + " must be an object");
    ComponentNode node;
    node.id = RequireString(n, "id", where);
    node.kind = ComponentKindFromString(RequireString(n, "kind", where));
    const Json& aff = Require(n, "affinity", where);
    if (!aff.is_array()) Malformed(where + ".affinity must be a list");
    for (const Json& a : aff) {
      if (!a.is_string()) Malformed(where + ".affinity entries must be strings");
      node.affinity.push_back(a.get<std::string>());
    }
    if (auto it = n.find("fanout"); it != n.end()) {
      if (!it->is_number()) Malformed(where + ".fanout must be a number");
      node.fanout = it->get<double>();
    }
    if (auto it = n.find("config"); it != n.end()) {
      if (!it->is_object()) Malformed(where + ".config must be an object");
      node.config = *it;
    }
    g.nodes_.push_back(std::move(node));
  }

  const Json& edges = Require(doc, "edges", "document");
  if (!edges.is_array()) Malformed("\"edges\" must be a list");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const Json& e = edges[i];
    std::string where = "edges[" + std::to_string(i) + "]";
    if (!e.is_object()) Malformed(where + " must be an object");
    Edge edge;
    edge.from = RequireString(e, "from", where);
    edge.to = RequireString(e, "to", where);
    edge.kind = EdgeKindFromString(RequireString(e, "kind", where));
    auto p = e.find("p");
    if (p != e.end() && !p->is_number()) Malformed(where + ".p must be a number");
    switch (edge.kind) {
      case EdgeKind::kSequential:
        if (p != e.end()) Malformed(where + ": sequential edges take no \"p\"");
        edge.probability = 1.0;
        break;
      case EdgeKind::kConditional:
        if (p == e.end()) Malformed(where + ": conditional edge requires \"p\"");
        edge.probability = p->get<double>();
        break;
      case EdgeKind::kRecursiveBack: {
        edge.probability =
            p == e.end() ? kDefaultLoopProbability : p->get<double>();
        auto d = e.find("max_depth");
        if (d == e.end()) {
          Invalid(where + ": recursive_back edge requires a finite max_depth");
        }
        if (!d->is_number_integer()) {
          Malformed(where + ".max_depth must be an integer");
        }
        edge.max_depth = d->get<int>();
        break;
      }
    }
    g.edges_.push_back(std::move(edge));
  }

  std::string entry = RequireString(doc, "entry", "document");
  const Json& exits = Require(doc, "exits", "document");
  if (!exits.is_array()) Malformed("\"exits\" must be a list");
  std::vector<std::string> exit_ids;
  for (const Json& x : exits) {
    if (!x.is_string()) Malformed("\"exits\" entries must be strings");
    exit_ids.push_back(x.get<std::string>());
  }

  for (std::size_t i = 0; i < g.nodes_.size(); ++i) {
    if (!g.index_.emplace(g.nodes_[i].id, i).second) {
      Invalid("duplicate node id \"" + g.nodes_[i].id + "\"");
    }
  }
  auto entry_it = g.index_.find(entry);
  if (entry_it == g.index_.end()) Invalid("entry \"" + entry + "\" is not a node");
  g.entry_ = entry_it->second;
  g.is_exit_.assign(g.nodes_.size(), false);
  if (exit_ids.empty()) Invalid("at least one exit is required");
  for (const auto& x : exit_ids) {
    auto it = g.index_.find(x);
    if (it == g.index_.end()) Invalid("exit \"" + x + "\" is not a node");
    g.is_exit_[it->second] = true;
  }
  g.Validate();
  return g;
}

void PipelineGraph::Validate() {
  const std::size_t n = nodes_.size();
  for (auto& node : nodes_) {
    if (node.id.empty()) Invalid("node ids must be non-empty");
    if (node.affinity.empty()) {
      Invalid("node \"" + node.id + "\" has an empty resource affinity");
    }
    std::sort(node.affinity.begin(), node.affinity.end());
    if (std::adjacent_find(node.affinity.begin(), node.affinity.end()) !=
        node.affinity.end()) {
      Invalid("node \"" + node.id + "\" lists a resource kind twice");
    }
    if (!std::isfinite(node.fanout) || node.fanout <= 0) {
      Invalid("node \"" + node.id + "\" needs fanout > 0");
    }
    if (node.fanout != 1.0 && node.kind != ComponentKind::kAugmenter &&
        node.kind != ComponentKind::kCustom) {
      Invalid("node \"" + node.id +
              "\": only augmenter or custom components may fan out");
    }
  }

  forward_out_.assign(n, {});
  forward_in_.assign(n, {});
  back_out_.assign(n, std::nullopt);
  back_edges_.clear();
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const Edge& edge = edges_[e];
    auto from = Find(edge.from);
    auto to = Find(edge.to);
    if (!from) Invalid("edge endpoint \"" + edge.from + "\" is not a node");
    if (!to) Invalid("edge endpoint \"" + edge.to + "\" is not a node");
    if (!seen.emplace(*from, *to).second) {
      Invalid("duplicate edge " + edge.from + " -> " + edge.to);
    }
    if (!std::isfinite(edge.probability) || edge.probability < 0 ||
        edge.probability > 1) {
      Invalid("edge " + edge.from + " -> " + edge.to +
              " has probability outside [0, 1]");
    }
    if (edge.kind == EdgeKind::kRecursiveBack) {
      if (edge.max_depth < 1) {
        Invalid("recursive edge " + edge.from + " -> " + edge.to +
                " needs max_depth >= 1");
      }
      if (back_out_[*from]) {
        Invalid("node \"" + edge.from + "\" has more than one recursive edge");
      }
      back_out_[*from] = e;
      back_edges_.push_back(e);
    } else {
      forward_out_[*from].push_back(e);
      forward_in_[*to].push_back(e);
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    double cond_sum = 0.0;
    bool has_cond = false;
    for (std::size_t e : forward_out_[i]) {
      if (edges_[e].kind == EdgeKind::kConditional) {
        has_cond = true;
        cond_sum += edges_[e].probability;
      }
    }
    if (has_cond && std::abs(cond_sum - 1.0) > kProbabilityTolerance) {
      std::ostringstream os;
      os.precision(17);
      os << "conditional edges leaving \"" << nodes_[i].id << "\" sum to "
         << cond_sum << ", expected 1";
      Invalid(os.str());
    }
  }

  // Kahn's algorithm with a min-heap on node id for deterministic ties.
  std::vector<std::size_t> indegree(n, 0);
  for (std::size_t i = 0; i < n; ++i) indegree[i] = forward_in_[i].size();
  auto by_id = [this](std::size_t a, std::size_t b) {
    return nodes_[a].id > nodes_[b].id;
  };
  std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(by_id)>
      ready(by_id);
  for (std::size_t i = 0; i < n; ++i) {
    if (indegree[i] == 0) ready.push(i);
  }
  topo_.clear();
  while (!ready.empty()) {
    std::size_t u = ready.top();
    ready.pop();
    topo_.push_back(u);
    for (std::size_t e : forward_out_[u]) {
      std::size_t v = index_.find(edges_[e].to)->second;
      if (--indegree[v] == 0) ready.push(v);
    }
  }
  if (topo_.size() != n) {
    Invalid("cycle without a recursive_back annotation");
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (i != entry_ && forward_in_[i].empty()) {
      Invalid("node \"" + nodes_[i].id +
              "\" is not reachable from the entry (pipelines have one entry)");
    }
    if (i == entry_ && !forward_in_[i].empty()) {
      Invalid("entry \"" + nodes_[i].id + "\" has incoming forward edges");
    }
    if (is_exit_[i] && !forward_out_[i].empty()) {
      Invalid("exit \"" + nodes_[i].id + "\" has outgoing forward edges");
    }
    if (!is_exit_[i] && forward_out_[i].empty()) {
      Invalid("node \"" + nodes_[i].id + "\" cannot reach an exit");
    }
  }

  std::size_t combos = 1;
  for (std::size_t e : back_edges_) {
    combos *= static_cast<std::size_t>(edges_[e].max_depth) + 1;
    if (combos * n > kMaxStates) Invalid("recursion depth state space too large");
  }
}

std::optional<std::size_t> PipelineGraph::Find(std::string_view id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t PipelineGraph::IndexOf(std::string_view id) const {
  auto it = index_.find(id);
  if (it == index_.end()) {
    throw Error(ErrorCode::kInvalidArgument,
                "unknown component \"" + std::string(id) + "\"");
  }
  return it->second;
}

std::vector<std::string> PipelineGraph::exits() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (is_exit_[i]) out.push_back(nodes_[i].id);
  }
  return out;
}

Json PipelineGraph::ToJson() const {
  Json nodes = Json::array();
  for (const auto& node : nodes_) {
    nodes.push_back({{"id", node.id},
                     {"kind", ToString(node.kind)},
                     {"affinity", node.affinity},
                     {"fanout", node.fanout},
                     {"config", node.config}});
  }
  Json edges = Json::array();
  for (const auto& edge : edges_) {
    Json e = {{"from", edge.from}, {"to", edge.to}, {"kind", ToString(edge.kind)}};
    if (edge.kind != EdgeKind::kSequential) e["p"] = edge.probability;
    if (edge.kind == EdgeKind::kRecursiveBack) e["max_depth"] = edge.max_depth;
    edges.push_back(std::move(e));
  }
  return {{"nodes", std::move(nodes)},
          {"edges", std::move(edges)},
          {"entry", entry()},
          {"exits", exits()}};
}

std::vector<std::string> ForwardOrder(const PipelineGraph& g) {
  std::vector<std::string> out;
  for (std::size_t i : g.topo_order()) out.push_back(g.nodes()[i].id);
  return out;
}

std::vector<double> ForwardEdgeWeights(const PipelineGraph& g) {
  std::vector<double> w(g.edges().size(), 0.0);
  for (std::size_t e = 0; e < g.edges().size(); ++e) {
    const Edge& edge = g.edges()[e];
    if (edge.kind == EdgeKind::kRecursiveBack) continue;
    w[e] = g.nodes()[g.IndexOf(edge.from)].fanout * edge.probability;
  }
  return w;
}

StateSpace::StateSpace(const PipelineGraph& g)
    : graph_(&g), node_count_(g.size()) {
  for (std::size_t e : g.back_edges()) {
    radix_.push_back(combos_);
    combos_ *= static_cast<std::size_t>(g.edges()[e].max_depth) + 1;
  }
  std::vector<std::size_t> topo_pos(node_count_);
  for (std::size_t k = 0; k < g.topo_order().size(); ++k) {
    topo_pos[g.topo_order()[k]] = k;
  }
  std::vector<int> depth_sum(combos_, 0);
  for (std::size_t c = 0; c < combos_; ++c) {
    for (std::size_t b = 0; b < radix_.size(); ++b) {
      int cap = g.edges()[g.back_edges()[b]].max_depth + 1;
      depth_sum[c] += static_cast<int>((c / radix_[b]) % cap);
    }
  }
  order_.resize(size());
  std::iota(order_.begin(), order_.end(), 0);
  std::sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) {
    auto key = [&](std::size_t s) {
      return std::make_tuple(depth_sum[s % combos_], topo_pos[s / combos_],
                             s % combos_);
    };
    return key(a) < key(b);
  });
}

int StateSpace::depth_of(std::size_t state, std::size_t pos) const {
  int cap = graph_->edges()[graph_->back_edges()[pos]].max_depth + 1;
  return static_cast<int>(((state % combos_) / radix_[pos]) % cap);
}

std::size_t StateSpace::Initial() const {
  return graph_->entry_index() * combos_;
}

std::size_t StateSpace::Advance(std::size_t state, std::size_t node) const {
  return node * combos_ + state % combos_;
}

std::optional<std::size_t> StateSpace::LoopBack(std::size_t state) const {
  std::size_t node = node_of(state);
  auto e = graph_->back_edge(node);
  if (!e) return std::nullopt;
  auto pos = static_cast<std::size_t>(
      std::find(graph_->back_edges().begin(), graph_->back_edges().end(), *e) -
      graph_->back_edges().begin());
  const Edge& edge = graph_->edges()[*e];
  if (depth_of(state, pos) >= edge.max_depth) return std::nullopt;
  std::size_t target = graph_->IndexOf(edge.to);
  return target * combos_ + state % combos_ + radix_[pos];
}

double StateSpace::LoopProbability(std::size_t state) const {
  if (!LoopBack(state)) return 0.0;
  return graph_->edges()[*graph_->back_edge(node_of(state))].probability;
}

std::map<std::string, double> ExpectedVisitRates(const PipelineGraph& g) {
  StateSpace space(g);
  std::vector<double> mass(space.size(), 0.0);
  mass[space.Initial()] = 1.0;
  std::vector<double> per_node(g.size(), 0.0);
  for (std::size_t s : space.order()) {
    double x = mass[s];
    if (x == 0.0) continue;
    std::size_t node = space.node_of(s);
    per_node[node] += x;
    double emitted = x * g.nodes()[node].fanout;
    double loop_p = space.LoopProbability(s);
    if (loop_p > 0.0) mass[*space.LoopBack(s)] += emitted * loop_p;
    double forward = emitted * (1.0 - loop_p);
    for (std::size_t e : g.forward_out(node)) {
      const Edge& edge = g.edges()[e];
      mass[space.Advance(s, g.IndexOf(edge.to))] += forward * edge.probability;
    }
  }
  std::map<std::string, double> rates;
  for (std::size_t i = 0; i < g.size(); ++i) rates[g.nodes()[i].id] = per_node[i];
  return rates;
}

std::vector<ResourceKind> ParseResources(std::string_view text) {
  std::vector<ResourceKind> kinds;
  auto trimmed = text;
  while (!trimmed.empty() && std::isspace(static_cast<unsigned char>(trimmed.front()))) {
    trimmed.remove_prefix(1);
  }
  if (!trimmed.empty() && trimmed.front() == '{') {
    Json doc;
    try {
      doc = Json::parse(trimmed);
    } catch (const Json::parse_error& e) {
      throw Error(ErrorCode::kParse, std::string("resources: ") + e.what());
    }
    for (const auto& [name, count] : doc.items()) {
      if (!count.is_number_integer()) {
        throw Error(ErrorCode::kParse, "resources: count for \"" + name +
                                           "\" must be an integer");
      }
      kinds.push_back({name, count.get<int>()});
    }
  } else {
    std::string spec(trimmed);
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
      auto eq = item.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw Error(ErrorCode::kParse,
                    "resources: expected name=count, got \"" + item + "\"");
      }
      std::string name = item.substr(0, eq);
      int count = 0;
      try {
        std::size_t used = 0;
        count = std::stoi(item.substr(eq + 1), &used);
        if (used != item.size() - eq - 1) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw Error(ErrorCode::kParse,
                    "resources: bad count in \"" + item + "\"");
      }
      kinds.push_back({name, count});
    }
  }
  std::sort(kinds.begin(), kinds.end(),
            [](const auto& a, const auto& b) { return a.name < b.name; });
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    if (kinds[i].count < 0) {
      throw Error(ErrorCode::kValidation,
                  "resources: negative count for \"" + kinds[i].name + "\"");
    }
    if (i > 0 && kinds[i].name == kinds[i - 1].name) {
      throw Error(ErrorCode::kValidation,
                  "resources: duplicate kind \"" + kinds[i].name + "\"");
    }
  }
  return kinds;
}

Json ResourcesToJson(const std::vector<ResourceKind>& kinds) {
  Json out = Json::object();
  for (const auto& k : kinds) out[k.name] = k.count;
  return out;
}

}  // namespace ragflow
