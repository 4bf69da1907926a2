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

#ifndef RAGFLOW_TESTS_TEST_UTIL_HPP_
#define RAGFLOW_TESTS_TEST_UTIL_HPP_

#include <algorithm>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "allocator.hpp"
#include "latency.hpp"
#include "pipeline.hpp"

namespace ragflow::testing {

inline Json Node(const std::string& id, const std::string& kind,
                 std::vector<std::string> affinity, double fanout = 1.0) {
  return {{"id", id}, {"kind", kind}, {"affinity", affinity}, {"fanout", fanout},
          {"config", Json::object()}};
}

inline Json Seq(const std::string& from, const std::string& to) {
  return {{"from", from}, {"to", to}, {"kind", "sequential"}};
}

inline Json Cond(const std::string& from, const std::string& to, double p) {
  return {{"from", from}, {"to", to}, {"kind", "conditional"}, {"p", p}};
}

inline Json Back(const std::string& from, const std::string& to, int depth, double p) {
  return {{"from", from}, {"to", to}, {"kind", "recursive_back"}, {"max_depth", depth},
          {"p", p}};
}

// Linear chain n0 -> n1 -> ... with the given affinity per node.
inline Json ChainDoc(const std::vector<std::vector<std::string>>& affinity) {
  Json nodes = Json::array(), edges = Json::array();
  for (std::size_t i = 0; i < affinity.size(); ++i) {
    nodes.push_back(Node("n" + std::to_string(i), "custom", affinity[i]));
    if (i > 0) edges.push_back(Seq("n" + std::to_string(i - 1), "n" + std::to_string(i)));
  }
  return {{"nodes", nodes}, {"edges", edges}, {"entry", "n0"},
          {"exits", {"n" + std::to_string(affinity.size() - 1)}}};
}

inline Json CragDoc() {
  return {{"nodes",
           {Node("retrieve", "retriever", {"cpu"}), Node("grade", "grader", {"gpu"}),
            Node("rewrite", "rewriter", {"gpu"}), Node("websearch", "websearch", {"cpu"}),
            Node("augment", "augmenter", {"cpu"}), Node("generate", "generator", {"gpu"})}},
          {"edges",
           {Seq("retrieve", "grade"), Cond("grade", "augment", 0.7),
            Cond("grade", "rewrite", 0.3), Seq("rewrite", "websearch"),
            Seq("websearch", "augment"), Seq("augment", "generate")}},
          {"entry", "retrieve"},
          {"exits", {"generate"}}};
}

// Exact line fit T(b) = intercept + slope * b on [1, m].
inline PwlFit LineFit(double intercept, double slope, int m,
                      ReplicaRule rule = ReplicaRule::kEvenSplit) {
  PwlFit f;
  f.breakpoints = {1.0, static_cast<double>(std::max(m, 2))};
  if (m == 1) f.breakpoints = {1.0, 1.0 + 1e-9};
  f.segments = {{slope, intercept}};
  f.rule = rule;
  return f;
}

inline std::shared_ptr<const PipelineGraph> Graph(const Json& doc) {
  return std::make_shared<const PipelineGraph>(PipelineGraph::FromJson(doc));
}

// Random monotone piecewise-linear fit with 1-3 pieces on [1, m].
inline PwlFit RandomFit(std::mt19937_64& rng, int m, ReplicaRule rule) {
  if (m == 1) {
    PwlFit f = LineFit(0.5 + (rng() % 100) / 50.0, 0.0, 1, rule);
    return f;
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::set<int> knots = {1, m};
  int pieces = 1 + static_cast<int>(rng() % 3);
  for (int j = 1; j < pieces && m > 2; ++j) knots.insert(2 + static_cast<int>(rng() % (m - 2)));
  PwlFit f;
  f.rule = rule;
  double v = 0.2 + 2.0 * u(rng);
  for (int k : knots) f.breakpoints.push_back(k);
  for (std::size_t j = 0; j + 1 < f.breakpoints.size(); ++j) {
    double slope = u(rng) < 0.2 ? 0.0 : 1.5 * u(rng);
    f.segments.push_back({slope, v - slope * f.breakpoints[j]});
    v += slope * (f.breakpoints[j + 1] - f.breakpoints[j]);
  }
  return f;
}

// N <= 4 nodes, K <= 2 kinds, r_k <= 3, m <= 8, random topology, branch
// probabilities and fan-out.
inline AllocationProblem RandomProblem(std::mt19937_64& rng) {
  const int n = 1 + static_cast<int>(rng() % 4);
  const int k = 1 + static_cast<int>(rng() % 2);
  const std::vector<std::string> names = {"cpu", "gpu"};
  std::vector<ResourceKind> kinds;
  for (int c = 0; c < k; ++c) kinds.push_back({names[c], static_cast<int>(rng() % 4)});

  Json nodes = Json::array(), edges = Json::array();
  std::vector<std::vector<int>> children(n);
  for (int i = 1; i < n; ++i) children[rng() % i].push_back(i);
  for (int i = 0; i < n; ++i) {
    std::vector<std::string> aff;
    int mask = 1 + static_cast<int>(rng() % ((1 << k) - 1));
    for (int c = 0; c < k; ++c) {
      if (mask >> c & 1) aff.push_back(names[c]);
    }
    double fanout = rng() % 3 == 0 ? 1.5 : 1.0;
    nodes.push_back(Node("v" + std::to_string(i), "custom", aff, fanout));
  }
  Json exits = Json::array();
  for (int i = 0; i < n; ++i) {
    auto id = [](int x) { return "v" + std::to_string(x); };
    if (children[i].empty()) exits.push_back(id(i));
    if (children[i].size() == 2 && rng() % 2) {
      double p = 0.1 + 0.8 * (rng() % 1000) / 1000.0;
      edges.push_back(Cond(id(i), id(children[i][0]), p));
      edges.push_back(Cond(id(i), id(children[i][1]), 1.0 - p));
    } else {
      for (int c : children[i]) edges.push_back(Seq(id(i), id(c)));
    }
  }
  auto graph = Graph({{"nodes", nodes}, {"edges", edges}, {"entry", "v0"}, {"exits", exits}});
  FitTable fits;
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < k; ++c) {
      int m = 1 + static_cast<int>(rng() % 8);
      auto rule = rng() % 4 == 0 ? ReplicaRule::kParallel : ReplicaRule::kEvenSplit;
      fits["v" + std::to_string(i)][names[c]] = RandomFit(rng, m, rule);
    }
  }
  return MakeProblem(graph, kinds, fits, rng() % 4 == 0 ? FlowMode::kStrict : FlowMode::kWeighted);
}

}  // namespace ragflow::testing

#endif  // RAGFLOW_TESTS_TEST_UTIL_HPP_
