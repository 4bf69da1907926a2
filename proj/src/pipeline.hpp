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

#ifndef RAGFLOW_PIPELINE_HPP_
#define RAGFLOW_PIPELINE_HPP_

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "common.hpp"

namespace ragflow {

enum class ComponentKind {
  kRetriever,
  kAugmenter,
  kGenerator,
  kGrader,
  kRewriter,
  kWebSearch,
  kCustom,
};

std::string_view ToString(ComponentKind kind);
ComponentKind ComponentKindFromString(std::string_view name);

struct ComponentNode {
  std::string id;
  ComponentKind kind = ComponentKind::kCustom;
  // Names of resource kinds this component may run on; sorted, non-empty.
  std::vector<std::string> affinity;
  // Items emitted per item consumed. Only augmenters and custom components
  // may use a value other than 1.
  double fanout = 1.0;
  // Developer-specified settings (top-k, metric, model...). Never altered.
  Json config = Json::object();

  bool operator==(const ComponentNode&) const = default;
};

enum class EdgeKind { kSequential, kConditional, kRecursiveBack };

std::string_view ToString(EdgeKind kind);

struct Edge {
  std::string from;
  std::string to;
  EdgeKind kind = EdgeKind::kSequential;
  // Branch probability for conditional edges, loop probability for
  // recursive back edges, 1 for sequential edges.
  double probability = 1.0;
  // Maximum number of traversals of a recursive back edge per request.
  int max_depth = 0;

  bool operator==(const Edge&) const = default;
};

// A resource pool: `count` interchangeable units of one hardware type.
struct ResourceKind {
  std::string name;
  int count = 0;

  bool operator==(const ResourceKind&) const = default;
};

// Default loop probability for recursive back edges that omit "p".
inline constexpr double kDefaultLoopProbability = 0.5;

// Validated, immutable pipeline graph. Construct through Parse/FromJson.
class PipelineGraph {
 public:
  static PipelineGraph FromJson(const Json& doc);
  static PipelineGraph Parse(std::string_view text);
  Json ToJson() const;

  const std::vector<ComponentNode>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::string& entry() const { return nodes_[entry_].id; }
  std::size_t entry_index() const { return entry_; }
  std::vector<std::string> exits() const;
  bool is_exit(std::size_t node) const { return is_exit_[node]; }
  std::size_t size() const { return nodes_.size(); }

  // Index of the node named `id`; throws kInvalidArgument when absent.
  std::size_t IndexOf(std::string_view id) const;
  std::optional<std::size_t> Find(std::string_view id) const;

  // Edge indices leaving `node`, excluding recursive back edges.
  const std::vector<std::size_t>& forward_out(std::size_t node) const {
    return forward_out_[node];
  }
  // Edge indices entering `node`, excluding recursive back edges.
  const std::vector<std::size_t>& forward_in(std::size_t node) const {
    return forward_in_[node];
  }
  // Index of the recursive back edge leaving `node`, if any.
  std::optional<std::size_t> back_edge(std::size_t node) const {
    return back_out_[node];
  }
  // Back edges in declaration order; positions index depth counters.
  const std::vector<std::size_t>& back_edges() const { return back_edges_; }

  // Topological order over non-back edges; ties broken by node id.
  const std::vector<std::size_t>& topo_order() const { return topo_; }

  bool operator==(const PipelineGraph& other) const {
    return nodes_ == other.nodes_ && edges_ == other.edges_ &&
           entry_ == other.entry_ && is_exit_ == other.is_exit_;
  }

 private:
  PipelineGraph() = default;
  void Validate();

  std::vector<ComponentNode> nodes_;
  std::vector<Edge> edges_;
  std::size_t entry_ = 0;
  std::vector<bool> is_exit_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::vector<std::vector<std::size_t>> forward_out_;
  std::vector<std::vector<std::size_t>> forward_in_;
  std::vector<std::optional<std::size_t>> back_out_;
  std::vector<std::size_t> back_edges_;
  std::vector<std::size_t> topo_;
};

std::vector<std::string> ForwardOrder(const PipelineGraph& g);

// Expected items processed at each node per item entering the pipeline.
std::map<std::string, double> ExpectedVisitRates(const PipelineGraph& g);

// Expected items sent along each forward edge per item processed at the
// edge's source: fanout times branch probability. Used to weight flow
// conservation between a node and its immediate predecessors.
std::vector<double> ForwardEdgeWeights(const PipelineGraph& g);

// Enumerates execution states (node, traversal count per back edge). Every
// transition either follows a forward edge or increments one depth counter,
// so the state graph is acyclic and `order()` is a valid processing order.
class StateSpace {
 public:
  explicit StateSpace(const PipelineGraph& g);

  std::size_t size() const { return node_count_ * combos_; }
  std::size_t node_of(std::size_t state) const { return state / combos_; }
  int depth_of(std::size_t state, std::size_t back_edge_pos) const;
  std::size_t Initial() const;
  // State after moving to `node` along a forward edge.
  std::size_t Advance(std::size_t state, std::size_t node) const;
  // State after taking the back edge at the current node, if the edge exists
  // and its depth cap has not been reached.
  std::optional<std::size_t> LoopBack(std::size_t state) const;
  // Probability of looping back from `state` (0 when capped or no edge).
  double LoopProbability(std::size_t state) const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const PipelineGraph* graph_;
  std::size_t node_count_ = 0;
  std::size_t combos_ = 1;
  std::vector<std::size_t> radix_;
  std::vector<std::size_t> order_;
};

// Parses "gpu=6,cpu=4" or a JSON object {"gpu": 6, "cpu": 4}. Result sorted
// by name.
std::vector<ResourceKind> ParseResources(std::string_view text);
Json ResourcesToJson(const std::vector<ResourceKind>& kinds);

}  // namespace ragflow

#endif  // RAGFLOW_PIPELINE_HPP_
