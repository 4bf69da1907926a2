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

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <unistd.h>

#include "harness.hpp"
#include "test_util.hpp"

namespace ragflow {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() /
            ("ragflow_" + std::string(info->test_suite_name()) + "_" + info->name() + "_" +
             std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kInternal;
}

Json ReadJson(const std::string& path) { return Json::parse(ReadFile(path)); }

std::vector<std::string> Lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::map<std::string, std::string> Snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = ReadFile(e.path().string());
  }
  return out;
}

TEST(Templates, AllLoadAndPlan) {
  for (const auto& name : TemplateNames()) {
    ScenarioTemplate t = LoadTemplate(name);
    EXPECT_EQ(t.name, name);
    auto g = std::make_shared<const PipelineGraph>(PipelineGraph::FromJson(t.pipeline));
    Deployment d = Deploy(g, t.truth, t.resources, {});
    EXPECT_GT(d.plan.objective_throughput, 0.0) << name;
    EXPECT_TRUE(ValidatePlan(d.problem, d.plan).empty()) << name;
    t.scenario.Validate();
  }
  EXPECT_EQ(CodeOf([] { LoadTemplate("nope"); }), ErrorCode::kInvalidArgument);
}

TEST(Templates, CragIsGraderBound) {
  ScenarioTemplate t = LoadTemplate("crag");
  auto g = std::make_shared<const PipelineGraph>(PipelineGraph::FromJson(t.pipeline));
  Deployment d = Deploy(g, t.truth, t.resources, {});
  EXPECT_EQ(d.plan.bottleneck, "grade");
  std::size_t gpu = *d.problem.KindIndex("gpu");
  int grade = d.plan.replicas[g->IndexOf("grade")][gpu];
  for (const auto& n : g->nodes()) {
    if (n.id != "grade") EXPECT_LE(d.plan.replicas[g->IndexOf(n.id)][gpu], grade) << n.id;
  }
}

TEST(Templates, OptimizedPlanBeatsUniform) {
  for (const auto& name : TemplateNames()) {
    ScenarioTemplate t = LoadTemplate(name);
    auto g = std::make_shared<const PipelineGraph>(PipelineGraph::FromJson(t.pipeline));
    Deployment d = Deploy(g, t.truth, t.resources, {});
    AllocationPlan uniform = UniformPlan(d.problem);
    ScorePlan(d.problem, uniform);
    EXPECT_GE(d.plan.objective_throughput, uniform.objective_throughput - 1e-9) << name;
  }
}

TEST(Truth, JsonRoundTripAndWildcard) {
  TruthSpec spec = LoadTemplate("memorag").truth;
  Json doc = TruthSpecToJson(spec);
  TruthSpec back = TruthSpecFromJson(doc);
  EXPECT_EQ(TruthSpecToJson(back), doc);
  ASSERT_NE(FindTruth(back, "augment", "gpu"), nullptr);
  EXPECT_EQ(FindTruth(back, "augment", "gpu"), FindTruth(back, "augment", "cpu"));
  EXPECT_EQ(FindTruth(back, "missing", "gpu"), nullptr);
  EXPECT_EQ(FindTruth(back, "generate", "cpu"), nullptr);
}

TEST(Truth, RejectsMalformed) {
  EXPECT_EQ(CodeOf([] { TruthSpecFromJson(Json::array()); }), ErrorCode::kParse);
  EXPECT_EQ(CodeOf([] {
              TruthSpecFromJson({{"components", {{"a", {{"cpu", {{"family", "constant"}}}}}}}});
            }),
            ErrorCode::kParse);
  Json zero = TruthSpecToJson(LoadTemplate("ircot").truth);
  zero["components"]["retrieve"]["cpu"]["max_batch"] = 0;
  EXPECT_EQ(CodeOf([&] { TruthSpecFromJson(zero); }), ErrorCode::kValidation);
}

TEST(Profiling, DeterministicPerSeedAndWithinProbeBound) {
  ScenarioTemplate t = LoadTemplate("crag");
  PipelineGraph g = PipelineGraph::FromJson(t.pipeline);
  ProfileOptions po;
  auto a = ProfileAll(g, t.truth, po);
  auto b = ProfileAll(g, t.truth, po);
  po.seed = 2;
  auto c = ProfileAll(g, t.truth, po);
  ASSERT_EQ(a.size(), g.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].fit, b[i].fit);
    differs = differs || !(a[i].fit == c[i].fit);
    int m = a[i].max_batch, log2 = 0;
    while ((1 << log2) < m) ++log2;
    EXPECT_LE(a[i].probes(), 2 * log2 + 2) << a[i].node;
    EXPECT_EQ(a[i].fit.rule, ReplicaRule::kParallel);
  }
  EXPECT_TRUE(differs);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end(),
                             [](const auto& x, const auto& y) { return x.node < y.node; }));
}

TEST(Profiling, SingleBatchComponent) {
  TruthSpec truth;
  truth["n0"]["cpu"] = {{ConstantPerQuery{2.0}}, 1};
  auto g = testing::Graph(testing::ChainDoc({{"cpu"}}));
  Deployment d = Deploy(g, truth, {{"cpu", 2}}, {});
  ASSERT_EQ(d.profiles.size(), 1u);
  EXPECT_EQ(d.profiles[0].probes(), 1);
  EXPECT_EQ(d.profiles[0].fit.max_batch(), 1);
  EXPECT_NEAR(d.plan.objective_throughput, 1.0, 1e-9);
}

TEST(Profiling, MissingTruthIsValidationError) {
  auto g = testing::Graph(testing::ChainDoc({{"cpu"}, {"gpu"}}));
  TruthSpec truth;
  truth["n0"]["cpu"] = {{ConstantPerQuery{1.0}}, 4};
  EXPECT_EQ(CodeOf([&] { ProfileAll(*g, truth, {}); }), ErrorCode::kValidation);
}

TEST(Deploy, SingleNodePlan) {
  TruthSpec truth;
  truth["n0"]["gpu"] = {{AmortizedBatch{1.0, 0.0}}, 8};
  auto g = testing::Graph(testing::ChainDoc({{"gpu"}}));
  Deployment d = Deploy(g, truth, {{"gpu", 3}}, {});
  EXPECT_EQ(d.plan.batch[0][0], 8);
  EXPECT_EQ(d.plan.replicas[0][0], 3);
  EXPECT_NEAR(d.plan.objective_throughput, 24.0, 1e-6);
}

TEST(Deploy, FewerUnitsThanComponentsIsInfeasible) {
  ScenarioTemplate t = LoadTemplate("crag");
  auto g = std::make_shared<const PipelineGraph>(PipelineGraph::FromJson(t.pipeline));
  EXPECT_EQ(CodeOf([&] { Deploy(g, t.truth, {{"cpu", 1}, {"gpu", 1}}, {}); }),
            ErrorCode::kInfeasible);
}

TEST(Parallel, RunsEveryJobAndRethrowsLowestFailure) {
  ::setenv("RAGFLOW_THREADS", "3", 1);
  EXPECT_EQ(WorkerCount(100), 3);
  EXPECT_EQ(WorkerCount(2), 2);
  EXPECT_EQ(WorkerCount(0), 1);
  std::atomic<int> ran{0};
  try {
    ParallelFor(50, [&](std::size_t i) {
      ++ran;
      if (i == 7 || i == 30) throw Error(ErrorCode::kInternal, "job " + std::to_string(i));
    });
    FAIL() << "expected an exception";
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "job 7");
  }
  EXPECT_EQ(ran.load(), 50);
  ::setenv("RAGFLOW_THREADS", "bogus", 1);
  EXPECT_GE(WorkerCount(100), 1);
  ::unsetenv("RAGFLOW_THREADS");
}

TEST(Commands, ProfilePlanSimulateReport) {
  TempDir dir;
  Json o = {{"scenario", "crag"}, {"out", dir / "out"}, {"duration", 20.0}};
  std::string s = RunProfileCommand(o);
  EXPECT_NE(s.find("profiled 6 component(s)"), std::string::npos);
  Json fit = ReadJson(dir / "out/fits/grade.json");
  EXPECT_EQ(fit["schema_version"], kSchemaVersion);
  EXPECT_EQ(fit["component"], "grade");
  EXPECT_TRUE(fit["kinds"].contains("gpu"));

  RunPlanCommand(o);
  Json plan = ReadJson(dir / "out/plan.json");
  EXPECT_EQ(plan["bottleneck"], "grade");
  EXPECT_TRUE(plan["inputs"].contains("fits"));

  Json sim = o;
  sim["rates"] = {20.0, 40.0};
  sim["mitigation"] = "both";
  sim["plan"] = dir / "out/plan.json";
  s = RunSimulateCommand(sim);
  EXPECT_NE(s.find("4 run(s)"), std::string::npos);
  auto rows = Lines(ReadFile(dir / "out/summary.csv"));
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0],
            "rate,mitigation,seed,arrivals,completions,throughput,goodput,slo_violation_rate,"
            "p50,p95,p99");
  EXPECT_TRUE(fs::exists(dir / "out/runs/rate_20_mit_on_seed_1.json"));
  EXPECT_TRUE(fs::exists(dir / "out/runs/rate_40_mit_off_seed_1.csv"));

  RunReportCommand({{"run", dir / "out"}});
  auto report = Lines(ReadFile(dir / "out/report.csv"));
  ASSERT_EQ(report.size(), 5u);
  EXPECT_EQ(report[0], "rate,mitigation,runs,throughput,goodput,violation_pct,p95,saturated");
}

TEST(Commands, SweepFlagsSaturationOnce) {
  TempDir dir;
  Json o = {{"scenario", "crag"},
            {"out", dir / "out"},
            {"duration", 60.0},
            {"mitigation", "off"},
            {"rates", {20.0, 40.0, 60.0, 120.0, 160.0, 200.0}}};
  RunSimulateCommand(o);
  RunReportCommand({{"run", dir / "out"}});
  auto rows = Lines(ReadFile(dir / "out/report.csv"));
  ASSERT_EQ(rows.size(), 7u);
  int flagged = 0;
  double prev = 0.0;
  bool saturated = false;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::vector<std::string> f;
    std::stringstream ss(rows[i]);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    double rate = std::stod(f[0]), tp = std::stod(f[3]);
    if (f[7] == "1") {
      ++flagged;
      saturated = true;
      EXPECT_LT(tp, 0.9 * rate);
    }
    // Monotone up to the saturation point.
    if (!saturated) EXPECT_GE(tp, prev * 0.98) << rows[i];
    prev = tp;
  }
  EXPECT_EQ(flagged, 1);
}

TEST(Commands, AblateWritesOrderedRows) {
  TempDir dir;
  RunAblateCommand({{"scenario", "memorag"}, {"out", dir / "out"}, {"duration", 60.0}});
  auto rows = Lines(ReadFile(dir / "out/ablation.csv"));
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], "config,batching,pipelining,allocation,throughput,multiplier,cumulative");
  EXPECT_EQ(rows[1].rfind("baseline,off,off,off,", 0), 0u);
  EXPECT_EQ(rows[4].rfind("+allocation,on,on,on,", 0), 0u);
  Json doc = ReadJson(dir / "out/ablation.json");
  EXPECT_EQ(doc["rows"].size(), 4u);
}

TEST(Commands, TemplateFilesDriveTheOtherCommands) {
  TempDir dir;
  RunTemplateCommand({{"template", "ircot"}, {"out", dir / "t"}});
  EXPECT_EQ(ReadFile(dir / "t/resources.txt"), "cpu=2,gpu=4\n");
  Json o = {{"pipeline", dir / "t/pipeline.json"}, {"truth", dir / "t/truth.json"},
            {"scenario", dir / "t/scenario.json"}, {"resources", "cpu=2,gpu=4"},
            {"out", dir / "out"},                   {"duration", 10.0}};
  RunPlanCommand(o);
  Json from_files = ReadJson(dir / "out/plan.json");
  RunPlanCommand({{"scenario", "ircot"}, {"out", dir / "tmpl"}});
  Json from_template = ReadJson(dir / "tmpl/plan.json");
  from_files.erase("inputs");
  from_template.erase("inputs");
  EXPECT_EQ(from_files, from_template);
  RunSimulateCommand(o);
}

TEST(Commands, Errors) {
  TempDir dir;
  EXPECT_EQ(CodeOf([] { RunPlanCommand({{"scenario", "crag"}}); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(CodeOf([&] { RunPlanCommand({{"out", dir / "o"}}); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(CodeOf([&] { RunPlanCommand({{"pipeline", dir / "missing.json"}, {"out", dir / "o"}}); }),
            ErrorCode::kIo);
  WriteFile(dir / "bad.json", "{not json");
  EXPECT_EQ(CodeOf([&] {
              RunPlanCommand({{"pipeline", dir / "bad.json"}, {"resources", "cpu=1"},
                              {"out", dir / "o"}});
            }),
            ErrorCode::kParse);
  EXPECT_EQ(CodeOf([&] {
              RunSimulateCommand({{"scenario", "crag"}, {"out", dir / "o"},
                                  {"toggles", {{"turbo", "on"}}}});
            }),
            ErrorCode::kInvalidArgument);
  EXPECT_EQ(CodeOf([&] {
              RunSimulateCommand({{"scenario", "crag"}, {"out", dir / "o"}, {"rates", {0.0}}});
            }),
            ErrorCode::kInvalidArgument);
  EXPECT_EQ(CodeOf([&] {
              RunPlanCommand({{"scenario", "crag"}, {"resources", "gpu=1"}, {"out", dir / "o"}});
            }),
            ErrorCode::kInfeasible);
  fs::create_directories(dir / "empty");
  EXPECT_EQ(CodeOf([&] { RunReportCommand({{"run", dir / "empty"}}); }), ErrorCode::kIo);
  EXPECT_EQ(CodeOf([&] { RunReportCommand({{"run", dir / "absent"}}); }), ErrorCode::kIo);
  EXPECT_EQ(CodeOf([&] { RunTemplateCommand({{"template", "nope"}, {"out", dir / "o"}}); }),
            ErrorCode::kInvalidArgument);
}

TEST(Commands, ByteIdenticalReruns) {
  TempDir dir;
  for (const char* run : {"a", "b"}) {
    Json o = {{"scenario", "hipporag"}, {"out", dir / run}, {"seed", 11}, {"duration", 20.0},
              {"repeats", 2}};
    RunProfileCommand(o);
    RunPlanCommand(o);
    RunSimulateCommand(o);
    RunAblateCommand(o);
    RunReportCommand({{"run", dir / run}});
  }
  auto a = Snapshot(dir.path() / "a"), b = Snapshot(dir.path() / "b");
  EXPECT_GT(a.size(), 5u);
  EXPECT_EQ(a, b);
}

TEST(Commands, SeedChangesRuns) {
  TempDir dir;
  for (int seed : {1, 2}) {
    RunSimulateCommand({{"scenario", "crag"}, {"out", dir / std::to_string(seed)},
                        {"seed", seed}, {"profile_seed", 1}, {"duration", 20.0}});
  }
  EXPECT_NE(ReadFile(dir / "1/summary.csv"), ReadFile(dir / "2/summary.csv"));
}

}  // namespace
}  // namespace ragflow
