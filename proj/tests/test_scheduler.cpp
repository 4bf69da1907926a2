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

#include <gtest/gtest.h>

#include <vector>

#include "scheduler.hpp"
#include "test_util.hpp"

namespace ragflow {
namespace {

using testing::Back;
using testing::ChainDoc;
using testing::CragDoc;
using testing::Graph;
using testing::LineFit;
using testing::Node;
using testing::Seq;

std::size_t StateAt(const RunningAverageEstimator& est, const std::string& node) {
  return est.space().Advance(est.space().Initial(), est.graph().IndexOf(node));
}

TEST(Estimator, FirstSampleInitializes) {
  RunningAverageEstimator est(Graph(ChainDoc({{"cpu"}})));
  est.Update(0, 4.0);
  EXPECT_DOUBLE_EQ(est.mean(0), 4.0);
  EXPECT_EQ(est.count(0), 1);
}

TEST(Estimator, EwmaStep) {
  RunningAverageEstimator est(Graph(ChainDoc({{"cpu"}})), {.alpha = 0.2});
  est.Update(0, 4.0);
  est.Update(0, 9.0);
  EXPECT_DOUBLE_EQ(est.mean(0), 5.0);
}

TEST(Estimator, ConvergesOnConstantStream) {
  RunningAverageEstimator est(Graph(ChainDoc({{"cpu"}})));
  for (int k = 0; k < 100; ++k) est.Update(0, 7.5);
  EXPECT_NEAR(est.mean(0), 7.5, 1e-6);
  RunningAverageEstimator shifted(Graph(ChainDoc({{"cpu"}})), {.alpha = 0.2});
  shifted.Update(0, 100.0);
  for (int k = 0; k < 100; ++k) shifted.Update(0, 7.5);
  EXPECT_NEAR(shifted.mean(0), 7.5, 1e-6);
}

TEST(Estimator, CumulativeMode) {
  RunningAverageEstimator est(Graph(ChainDoc({{"cpu"}})), {.mode = EstimatorMode::kCumulative});
  for (double v : {1.0, 2.0, 3.0, 6.0}) est.Update(0, v);
  EXPECT_DOUBLE_EQ(est.mean(0), 3.0);
}

TEST(Estimator, RejectsNegativeObservation) {
  RunningAverageEstimator est(Graph(ChainDoc({{"cpu"}})));
  EXPECT_THROW(est.Update(0, -1.0), Error);
}

TEST(Estimator, ChainRemainingTable) {
  RunningAverageEstimator est(Graph(ChainDoc({{"cpu"}, {"cpu"}, {"cpu"}})));
  for (std::size_t i = 0; i < 3; ++i) est.Update(i, 2.0);
  EXPECT_DOUBLE_EQ(est.Remaining(StateAt(est, "n0")).mean_remaining, 6.0);
  EXPECT_DOUBLE_EQ(est.Remaining(StateAt(est, "n1")).mean_remaining, 4.0);
  EXPECT_DOUBLE_EQ(est.Remaining(StateAt(est, "n2")).mean_remaining, 2.0);
  EXPECT_EQ(est.Remaining(StateAt(est, "n0")).min_hops, 2);
  EXPECT_EQ(est.Remaining(StateAt(est, "n0")).max_hops, 2);
  EXPECT_EQ(est.Remaining(StateAt(est, "n2")).max_hops, 0);
}

TEST(Estimator, ConditionalBranchesWeightByProbability) {
  RunningAverageEstimator est(Graph(CragDoc()));
  for (std::size_t i = 0; i < 6; ++i) est.Update(i, 1.0);
  // generate 1, augment 2, websearch 3, rewrite 4, grade 1 + 0.7*2 + 0.3*4.
  EXPECT_DOUBLE_EQ(est.Remaining(StateAt(est, "grade")).mean_remaining, 3.6);
  EXPECT_DOUBLE_EQ(est.Remaining(StateAt(est, "retrieve")).mean_remaining, 4.6);
  EXPECT_EQ(est.Remaining(StateAt(est, "grade")).min_hops, 2);
  EXPECT_EQ(est.Remaining(StateAt(est, "grade")).max_hops, 4);
}

TEST(Estimator, RecursionUsesGeometricMass) {
  Json doc = {{"nodes", {Node("r", "retriever", {"cpu"}), Node("g", "generator", {"gpu"})}},
              {"edges", {Seq("r", "g"), Back("g", "r", 2, 0.5)}},
              {"entry", "r"},
              {"exits", {"g"}}};
  RunningAverageEstimator est(Graph(doc));
  est.Update(0, 1.0);
  est.Update(1, 1.0);
  // Equals the expected visit total 1.75 + 1.75.
  EXPECT_DOUBLE_EQ(est.Remaining(est.space().Initial()).mean_remaining, 3.5);
  EXPECT_EQ(est.Remaining(est.space().Initial()).min_hops, 1);
  EXPECT_EQ(est.Remaining(est.space().Initial()).max_hops, 5);
}

TEST(Estimator, TableRefreshesOnlyPastThreshold) {
  RunningAverageEstimator est(Graph(ChainDoc({{"cpu"}, {"cpu"}})), {.alpha = 0.5});
  est.Update(0, 10.0);
  est.Update(1, 10.0);
  EXPECT_DOUBLE_EQ(est.Remaining(est.space().Initial()).mean_remaining, 20.0);
  EXPECT_EQ(est.rebuilds(), 1);
  est.Update(0, 10.8);  // mean 10.4, 4% drift
  EXPECT_DOUBLE_EQ(est.Remaining(est.space().Initial()).mean_remaining, 20.0);
  EXPECT_EQ(est.rebuilds(), 1);
  est.Update(0, 11.0);  // mean 10.7, 7% drift
  EXPECT_DOUBLE_EQ(est.Remaining(est.space().Initial()).mean_remaining, 20.7);
  EXPECT_EQ(est.rebuilds(), 2);
}

TEST(Predict, ExitPastDeadlineIsAtRisk) {
  RunningAverageEstimator est(Graph(ChainDoc({{"cpu"}})));
  std::vector<std::size_t> states = {est.space().Initial()};
  Prediction p = PredictViolation(est, {1, 0.0, 5.0, states}, 6.0);
  EXPECT_TRUE(p.at_risk);
  EXPECT_DOUBLE_EQ(p.expected_remaining, 0.0);
}

TEST(Predict, AmpleSlackIsSafe) {
  RunningAverageEstimator est(Graph(ChainDoc({{"cpu"}})));
  est.Update(0, 3.0);
  std::vector<std::size_t> states = {est.space().Initial()};
  Prediction p = PredictViolation(est, {1, 0.0, 10.0, states}, 0.0);
  EXPECT_FALSE(p.at_risk);
  EXPECT_DOUBLE_EQ(p.expected_remaining, 3.0);
}

TEST(Predict, HandComputedChain) {
  RunningAverageEstimator est(Graph(ChainDoc({{"cpu"}, {"cpu"}, {"cpu"}})));
  for (std::size_t i = 0; i < 3; ++i) est.Update(i, 2.0);
  std::vector<std::size_t> states = {StateAt(est, "n1")};
  Prediction p = PredictViolation(est, {1, 0.0, 8.0, states}, 5.0);
  EXPECT_DOUBLE_EQ(p.expected_remaining, 4.0);
  EXPECT_TRUE(p.at_risk);
}

TEST(Predict, LargestItemGoverns) {
  RunningAverageEstimator est(Graph(ChainDoc({{"cpu"}, {"cpu"}, {"cpu"}})));
  for (std::size_t i = 0; i < 3; ++i) est.Update(i, 2.0);
  std::vector<std::size_t> states = {StateAt(est, "n2"), StateAt(est, "n0")};
  EXPECT_DOUBLE_EQ(PredictViolation(est, {1, 0.0, 100.0, states}, 0.0).expected_remaining, 6.0);
}

TEST(Mitigate, NoRiskIsNoOp) {
  auto g = Graph(ChainDoc({{"cpu"}}));
  RunningAverageEstimator est(g);
  est.Update(0, 1.0);
  MitigationState state;
  MitigationOptions opts;
  opts.enabled = true;
  std::vector<std::size_t> states = {est.space().Initial()};
  std::vector<RequestView> reqs = {{1, 0.0, 10.0, states}};
  Directives d = Mitigate(state, est, reqs, 0.0, opts, nullptr);
  EXPECT_TRUE(d.empty());
  EXPECT_TRUE(state.admission_open);
  EXPECT_TRUE(state.actions_log.empty());
}

TEST(Mitigate, EscalateAndPauseWithoutSpares) {
  auto g = Graph(ChainDoc({{"cpu"}}));
  RunningAverageEstimator est(g);
  est.Update(0, 5.0);
  MitigationState state;
  MitigationOptions opts;
  opts.enabled = true;
  opts.autoscale = true;
  state.autoscale_enabled = true;
  std::vector<std::size_t> states = {est.space().Initial()};
  std::vector<RequestView> reqs = {{7, 0.0, 4.0, states}, {8, 0.0, 100.0, states}};
  Directives d = Mitigate(state, est, reqs, 0.0, opts, nullptr);
  EXPECT_EQ(d.escalate, std::vector<std::uint64_t>{7});
  EXPECT_TRUE(d.pause);
  EXPECT_FALSE(d.autoscale);
  EXPECT_FALSE(state.admission_open);
  EXPECT_EQ(state.at_risk, std::set<std::uint64_t>{7});

  // Still at risk: nothing new.
  d = Mitigate(state, est, reqs, 0.5, opts, nullptr);
  EXPECT_TRUE(d.empty());

  // The at-risk request left: admission reopens.
  reqs.erase(reqs.begin());
  d = Mitigate(state, est, reqs, 1.0, opts, nullptr);
  EXPECT_TRUE(d.resume);
  EXPECT_TRUE(state.admission_open);
  ASSERT_EQ(state.actions_log.size(), 3u);
  EXPECT_EQ(state.actions_log[0].action, "escalate");
  EXPECT_EQ(state.actions_log[0].request, 7u);
  EXPECT_EQ(state.actions_log[1].action, "pause");
  EXPECT_EQ(state.actions_log[2].action, "resume");
  EXPECT_DOUBLE_EQ(state.actions_log[2].t, 1.0);
}

AllocationProblem GraderHeavyCrag(int gpu, int cpu) {
  auto g = Graph(CragDoc());
  FitTable fits;
  fits["retrieve"]["cpu"] = LineFit(0.05, 0.01, 16);
  fits["grade"]["gpu"] = LineFit(0.8, 0.10, 16);
  fits["rewrite"]["gpu"] = LineFit(0.10, 0.02, 16);
  fits["websearch"]["cpu"] = LineFit(0.20, 0.02, 16);
  fits["augment"]["cpu"] = LineFit(0.02, 0.005, 16);
  fits["generate"]["gpu"] = LineFit(0.30, 0.04, 16);
  return MakeProblem(g, {{"gpu", gpu}, {"cpu", cpu}}, fits);
}

TEST(Mitigate, AutoscaleStormAddsGpuToBottleneck) {
  AllocationProblem p = GraderHeavyCrag(6, 4);
  AllocationPlan before = SolveMaxThroughput(p);
  ASSERT_EQ(before.bottleneck, "grade");
  Capacity cap{p, before};
  RunningAverageEstimator est(p.graph);
  for (std::size_t i = 0; i < 6; ++i) est.Update(i, 1.0);
  MitigationState state;
  state.autoscale_enabled = true;
  state.spare_pool = {{"gpu", 1}};
  MitigationOptions opts;
  opts.enabled = true;
  opts.autoscale = true;
  std::vector<std::size_t> states = {est.space().Initial()};
  std::vector<RequestView> storm;
  for (std::uint64_t id = 0; id < 20; ++id) storm.push_back({id, 0.0, 1.0, states});
  Directives d = Mitigate(state, est, storm, 0.0, opts, &cap);
  ASSERT_TRUE(d.autoscale);
  EXPECT_EQ(d.autoscale->node, "grade");
  EXPECT_EQ(d.autoscale->kind, "gpu");
  std::size_t grade = p.graph->IndexOf("grade");
  std::size_t gpu = *p.KindIndex("gpu");
  EXPECT_EQ(d.autoscale->plan.replicas[grade][gpu], before.replicas[grade][gpu] + 1);
  EXPECT_GT(d.autoscale->plan.objective_throughput, before.objective_throughput);
  EXPECT_TRUE(ValidatePlan(WithExtraUnit(p, "gpu"), d.autoscale->plan).empty());
  EXPECT_EQ(state.spare_pool.at("gpu"), 0);
  EXPECT_EQ(d.escalate.size(), 20u);

  // No spare left and inside the cool-down: no second scale-up.
  Directives again = Mitigate(state, est, storm, 1.0, opts, &cap);
  EXPECT_FALSE(again.autoscale);
}

TEST(Mitigate, CooldownBlocksBackToBackScaling) {
  AllocationProblem p = GraderHeavyCrag(6, 4);
  Capacity cap{p, SolveMaxThroughput(p)};
  RunningAverageEstimator est(p.graph);
  MitigationState state;
  state.autoscale_enabled = true;
  state.spare_pool = {{"gpu", 2}};
  MitigationOptions opts;
  opts.enabled = true;
  opts.autoscale = true;
  for (std::size_t i = 0; i < p.graph->size(); ++i) est.Update(i, 200.0);
  std::vector<std::size_t> states = {est.space().Initial()};
  std::vector<RequestView> storm = {{0, 0.0, 100.0, states}};
  EXPECT_TRUE(Mitigate(state, est, storm, 1.0, opts, &cap).autoscale);
  EXPECT_FALSE(Mitigate(state, est, storm, 3.0, opts, &cap).autoscale);
  EXPECT_TRUE(Mitigate(state, est, storm, 6.0, opts, &cap).autoscale);
  EXPECT_EQ(state.spare_pool.at("gpu"), 0);
}

TEST(Route, LeastLoadedIdleReplica) {
  std::vector<ReplicaView> replicas = {{5.0, true, 1}, {3.0, true, 1}};
  EXPECT_EQ(PickReplica(replicas), 1u);
  replicas = {{3.0, true, 1}, {5.0, true, 1}};
  EXPECT_EQ(PickReplica(replicas), 0u);
  replicas = {{3.0, false, 1}, {5.0, true, 1}};
  EXPECT_EQ(PickReplica(replicas), 1u);
  replicas = {{3.0, false, 1}};
  EXPECT_FALSE(PickReplica(replicas));
}

TEST(Route, EscalatedFillBatchFirst) {
  StationQueue q;
  q.Push(101, Priority::kNormal, 0.0);     // N1
  q.Push(201, Priority::kEscalated, 1.0);  // E1
  q.Push(102, Priority::kNormal, 2.0);     // N2
  std::vector<ReplicaView> replicas = {{0.0, true, 2}};
  auto d = Route(replicas, q);
  ASSERT_TRUE(d);
  EXPECT_EQ(d->items, (std::vector<std::uint64_t>{201, 101}));
  EXPECT_EQ(q.size(), 1u);
  EXPECT_DOUBLE_EQ(q.oldest(), 2.0);
}

TEST(Route, EscalationJumpsLaterNormals) {
  StationQueue q;
  q.Push(1, Priority::kNormal, 0.0);
  q.Push(2, Priority::kNormal, 1.0);
  q.Push(3, Priority::kNormal, 2.0);
  q.Escalate(3);
  q.Escalate(2);
  EXPECT_EQ(q.PopBatch(3), (std::vector<std::uint64_t>{2, 3, 1}));
  EXPECT_TRUE(q.empty());
}

TEST(OnlineScheduler, RiskFiresWhenProjectedTimePasses) {
  auto g = Graph(ChainDoc({{"cpu"}, {"cpu"}}));
  MitigationOptions opts;
  opts.enabled = true;
  OnlineScheduler sched(g, opts, std::nullopt);
  sched.Observe(0, 2.0, 1.0, false);
  sched.Observe(1, 2.0, 1.0, false);
  std::vector<std::size_t> states = {sched.estimator().space().Initial()};
  RequestView view{5, 0.0, 10.0, states};
  sched.Track(view, 0.0);
  auto lookup = [&](std::uint64_t) -> std::optional<RequestView> { return view; };
  // Risk begins once now > 10 - 4.
  EXPECT_TRUE(sched.Step(6.0, lookup).empty());
  Directives d = sched.Step(6.5, lookup);
  EXPECT_EQ(d.escalate, std::vector<std::uint64_t>{5});
  EXPECT_TRUE(d.pause);
  sched.Forget(5, 7.0);
  EXPECT_TRUE(sched.Step(7.0, lookup).resume);
  EXPECT_TRUE(sched.state().admission_open);
}

TEST(OnlineScheduler, HopelessRequestsAreNotAtRisk) {
  auto g = Graph(ChainDoc({{"cpu"}, {"cpu"}}));
  MitigationOptions opts;
  opts.enabled = true;
  OnlineScheduler sched(g, opts, std::nullopt);
  sched.Observe(0, 2.0, 1.0, false);
  sched.Observe(1, 2.0, 1.0, false);
  std::vector<std::size_t> states = {sched.estimator().space().Initial()};
  // Even unqueued service (2 s) cannot finish before the deadline.
  RequestView view{5, 0.0, 10.0, states};
  sched.Track(view, 8.5);
  auto lookup = [&](std::uint64_t) -> std::optional<RequestView> { return view; };
  Directives d = sched.Step(8.5, lookup);
  EXPECT_TRUE(d.empty());
  EXPECT_TRUE(sched.state().at_risk.empty());
  EXPECT_TRUE(PredictViolation(sched.estimator(), view, 8.5).at_risk);
}

TEST(Estimator, MinServiceTakesCheapestBranchWithoutLoops) {
  RunningAverageEstimator est(Graph(CragDoc()));
  const auto& g = est.graph();
  for (std::size_t i = 0; i < g.size(); ++i) est.UpdateService(i, 1.0);
  est.UpdateService(g.IndexOf("rewrite"), 1.0);
  // retrieve, grade, augment, generate.
  EXPECT_DOUBLE_EQ(est.Remaining(est.space().Initial()).min_service, 4.0);
}

}  // namespace
}  // namespace ragflow
