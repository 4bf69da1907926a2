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

#include "harness.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <thread>
#include <utility>

namespace ragflow {
namespace fs = std::filesystem;
namespace {

std::string Fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string Fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string Digest(const Json& doc) { return DigestHex(doc.dump()); }

Json ParseJsonText(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kParse, what + ": " + e.what());
  }
}

Json ReadJsonFile(const std::string& path) { return ParseJsonText(ReadFile(path), path); }

std::string StringOpt(const Json& o, const char* key, const std::string& fallback = "") {
  auto it = o.find(key);
  if (it == o.end() || it->is_null()) return fallback;
  if (!it->is_string()) throw Error(ErrorCode::kInvalidArgument, std::string(key) + " must be a string");
  return it->get<std::string>();
}

bool Has(const Json& o, const char* key) {
  auto it = o.find(key);
  return it != o.end() && !it->is_null();
}

std::string RequireOut(const Json& o) {
  std::string out = StringOpt(o, "out");
  if (out.empty()) throw Error(ErrorCode::kInvalidArgument, "missing --out directory");
  return out;
}

// "on"/"off" or a JSON boolean.
bool Switch(const Json& v, const std::string& what) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string()) {
    auto s = v.get<std::string>();
    if (s == "on" || s == "true") return true;
    if (s == "off" || s == "false") return false;
  }
  throw Error(ErrorCode::kInvalidArgument, what + " must be on or off");
}

// Everything a command may draw from the command line or a named template.
struct Inputs {
  std::optional<ScenarioTemplate> tmpl;
  Json pipeline_doc;
  std::shared_ptr<const PipelineGraph> graph;
  Json truth_doc;
  TruthSpec truth;
  std::vector<ResourceKind> resources;
  ScenarioConfig scenario;
  bool have_scenario = false;
};

bool IsTemplateName(const std::string& s) {
  auto names = TemplateNames();
  return std::find(names.begin(), names.end(), s) != names.end();
}

Inputs ResolveInputs(const Json& o, bool need_truth, bool need_resources) {
  Inputs in;
  std::string tmpl = StringOpt(o, "template");
  std::string scenario = StringOpt(o, "scenario");
  if (tmpl.empty() && !scenario.empty() && IsTemplateName(scenario) && !fs::exists(scenario)) {
    tmpl = scenario;
    scenario.clear();
  }
  if (!tmpl.empty()) in.tmpl = LoadTemplate(tmpl);

  if (Has(o, "pipeline")) {
    in.pipeline_doc = ReadJsonFile(StringOpt(o, "pipeline"));
  } else if (in.tmpl) {
    in.pipeline_doc = in.tmpl->pipeline;
  } else {
    throw Error(ErrorCode::kInvalidArgument, "missing --pipeline (or a scenario template)");
  }
  in.graph = std::make_shared<const PipelineGraph>(PipelineGraph::FromJson(in.pipeline_doc));
  in.pipeline_doc = in.graph->ToJson();

  if (Has(o, "truth")) {
    in.truth_doc = ReadJsonFile(StringOpt(o, "truth"));
    in.truth = TruthSpecFromJson(in.truth_doc);
  } else if (in.tmpl) {
    in.truth = in.tmpl->truth;
  } else if (need_truth) {
    throw Error(ErrorCode::kInvalidArgument, "missing --truth (or a scenario template)");
  }
  in.truth_doc = TruthSpecToJson(in.truth);

  if (Has(o, "resources")) {
    in.resources = ParseResources(StringOpt(o, "resources"));
  } else if (in.tmpl) {
    in.resources = in.tmpl->resources;
  } else if (need_resources) {
    throw Error(ErrorCode::kInvalidArgument, "missing --resources (or a scenario template)");
  }

  if (!scenario.empty()) {
    in.scenario = ScenarioConfig::FromJson(ReadJsonFile(scenario));
    in.have_scenario = true;
  } else if (in.tmpl) {
    in.scenario = in.tmpl->scenario;
    in.have_scenario = true;
  }
  if (Has(o, "seed")) {
    if (!o["seed"].is_number_integer()) throw Error(ErrorCode::kInvalidArgument, "seed must be an integer");
    in.scenario.seed = o["seed"].get<std::uint64_t>();
  }
  if (Has(o, "duration")) in.scenario.duration_s = o["duration"].get<double>();
  if (Has(o, "slo")) in.scenario.slo_s = o["slo"].get<double>();
  if (Has(o, "toggles")) {
    for (const auto& [k, v] : o["toggles"].items()) {
      bool on = Switch(v, "toggle " + k);
      if (k == "batching") {
        in.scenario.toggles.batching = on;
      } else if (k == "pipelining") {
        in.scenario.toggles.pipelining = on;
      } else if (k == "allocation" || k == "component_allocation") {
        in.scenario.toggles.component_allocation = on;
      } else {
        throw Error(ErrorCode::kInvalidArgument,
                    "unknown toggle \"" + k + "\" (expected batching, pipelining or allocation)");
      }
    }
  }
  if (Has(o, "autoscale")) {
    bool on = Switch(o["autoscale"], "autoscale");
    in.scenario.mitigation.autoscale = on;
    if (on) in.scenario.mitigation.enabled = true;
  }
  if (Has(o, "spare")) {
    in.scenario.mitigation.spare.clear();
    for (const auto& r : ParseResources(StringOpt(o, "spare"))) {
      in.scenario.mitigation.spare[r.name] = r.count;
    }
  }
  in.scenario.Validate();
  return in;
}

ProfileOptions ProfileOpts(const Json& o) {
  ProfileOptions p;
  if (Has(o, "profile_seed")) p.seed = o["profile_seed"].get<std::uint64_t>();
  else if (Has(o, "seed")) p.seed = o["seed"].get<std::uint64_t>();
  if (Has(o, "samples")) p.samples = o["samples"].get<int>();
  return p;
}

SolveOptions SolveOpts(const Json& o) {
  SolveOptions s;
  if (Has(o, "budget_ms")) s.budget = std::chrono::milliseconds(o["budget_ms"].get<std::int64_t>());
  return s;
}

Json ProfileFileJson(const std::string& node, const std::vector<const ComponentProfile*>& kinds,
                     const Json& inputs) {
  Json per_kind = Json::object();
  for (const auto* cp : kinds) {
    Json points = Json::array();
    for (const auto& p : cp->points) points.push_back(ProfilePointToJson(p));
    per_kind[cp->kind] = {{"max_batch", cp->max_batch},
                          {"probes", cp->probes()},
                          {"points", std::move(points)},
                          {"fit", cp->fit.ToJson()}};
  }
  return {{"schema_version", kSchemaVersion},
          {"component", node},
          {"inputs", inputs},
          {"kinds", std::move(per_kind)}};
}

// Fits for every node of `g` from <dir>/<node>.json.
FitTable LoadFits(const PipelineGraph& g, const std::string& dir, Json* digests) {
  FitTable fits;
  for (const auto& node : g.nodes()) {
    fs::path path = fs::path(dir) / (node.id + ".json");
    if (!fs::exists(path)) {
      throw Error(ErrorCode::kIo, "no fit for component \"" + node.id + "\" (expected " +
                                      path.string() + ")");
    }
    Json doc = ReadJsonFile(path.string());
    if (digests) (*digests)[node.id] = Digest(doc);
    if (!doc.contains("kinds") || !doc["kinds"].is_object()) {
      throw Error(ErrorCode::kParse, path.string() + ": missing \"kinds\"");
    }
    for (const auto& [kind, entry] : doc["kinds"].items()) {
      if (!entry.contains("fit")) throw Error(ErrorCode::kParse, path.string() + ": missing fit for " + kind);
      fits[node.id][kind] = PwlFit::FromJson(entry["fit"]);
    }
  }
  return fits;
}

struct Planned {
  Deployment deployment;
  Json inputs;
};

// Fits come from --fits when given, otherwise from profiling the ground
// truth; the plan comes from --plan when given, otherwise from the solver.
Planned PlanFromOptions(const Json& o, const Inputs& in) {
  Planned out;
  Deployment& d = out.deployment;
  d.graph = in.graph;
  d.truth = in.truth;
  out.inputs = {{"pipeline", Digest(in.pipeline_doc)},
                {"truth", Digest(in.truth_doc)},
                {"resources", ResourcesToJson(in.resources)}};
  FitTable fits;
  if (Has(o, "fits")) {
    Json digests = Json::object();
    fits = LoadFits(*d.graph, StringOpt(o, "fits"), &digests);
    out.inputs["fits"] = digests;
  } else {
    ProfileOptions po = ProfileOpts(o);
    d.profiles = ProfileAll(*d.graph, d.truth, po);
    fits = FitsOf(d.profiles);
    out.inputs["profile_seed"] = po.seed;
  }
  d.problem = MakeProblem(d.graph, in.resources, fits);
  if (Has(o, "plan")) {
    Json doc = ReadJsonFile(StringOpt(o, "plan"));
    out.inputs["plan"] = Digest(doc);
    d.plan = PlanFromJson(d.problem, doc);
    auto problems = ValidatePlan(d.problem, d.plan);
    if (!problems.empty()) throw Error(ErrorCode::kValidation, "plan rejected: " + problems.front());
  } else {
    d.plan = SolveMaxThroughput(d.problem, SolveOpts(o));
  }
  return out;
}

std::string PlanTable(const AllocationProblem& p, const AllocationPlan& plan) {
  std::ostringstream os;
  os << "component        kind  batch  replicas\n";
  for (std::size_t i = 0; i < p.nodes(); ++i) {
    for (std::size_t c = 0; c < p.kinds.size(); ++c) {
      if (plan.replicas[i][c] == 0) continue;
      char line[128];
      std::snprintf(line, sizeof(line), "%-16s %-5s %5d  %8d\n", p.graph->nodes()[i].id.c_str(),
                    p.kinds[c].name.c_str(), plan.batch[i][c], plan.replicas[i][c]);
      os << line;
    }
  }
  os << "objective " << Fixed(plan.objective_throughput, 3) << " req/s, bottleneck "
     << plan.bottleneck << ", gap " << Fixed(plan.gap * 100.0, 2) << "%\n";
  return os.str();
}

std::string RateTag(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", rate);
  return buf;
}

std::vector<double> Rates(const Json& o, const ScenarioConfig& sc) {
  std::vector<double> rates;
  if (Has(o, "rates")) {
    for (const auto& r : o["rates"]) rates.push_back(r.get<double>());
  } else {
    rates.push_back(sc.arrival_rate_rps);
  }
  for (double r : rates) {
    if (!(r > 0)) throw Error(ErrorCode::kInvalidArgument, "sweep rates must be > 0");
  }
  std::sort(rates.begin(), rates.end());
  rates.erase(std::unique(rates.begin(), rates.end()), rates.end());
  return rates;
}

int Repeats(const Json& o) {
  int r = Has(o, "repeats") ? o["repeats"].get<int>() : 1;
  if (r < 1) throw Error(ErrorCode::kInvalidArgument, "repeats must be >= 1");
  return r;
}

}  // namespace

Json ProfilePointToJson(const ProfilePoint& p) {
  return {{"batch", p.batch},
          {"replicas", p.replicas},
          {"mean_batch_time", p.mean_batch_time},
          {"samples", p.samples},
          {"stddev", p.stddev}};
}

ProfilePoint ProfilePointFromJson(const Json& doc) {
  ProfilePoint p;
  try {
    p.batch = doc.at("batch").get<int>();
    p.replicas = doc.value("replicas", 1);
    p.mean_batch_time = doc.at("mean_batch_time").get<double>();
    p.samples = doc.value("samples", 1);
    p.stddev = doc.value("stddev", 0.0);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("profile point: ") + e.what());
  }
  return p;
}

namespace {

// Flat model on the sliver [b, b + 1e-9] for a component that only runs one
// batch size.
PwlFit SingleBatchFit(const ProfilePoint& p) {
  PwlFit fit;
  fit.breakpoints = {static_cast<double>(p.batch), p.batch + 1e-9};
  fit.segments = {{0.0, p.mean_batch_time}};
  return fit;
}

}  // namespace

std::vector<ComponentProfile> ProfileAll(const PipelineGraph& g, const TruthSpec& truth,
                                         const ProfileOptions& options) {
  std::vector<const ComponentNode*> nodes;
  for (const auto& n : g.nodes()) nodes.push_back(&n);
  std::sort(nodes.begin(), nodes.end(), [](auto* a, auto* b) { return a->id < b->id; });
  std::vector<ComponentProfile> out;
  for (const ComponentNode* node : nodes) {
    bool any = false;
    for (const auto& kind : node->affinity) {
      const TruthEntry* entry = FindTruth(truth, node->id, kind);
      if (!entry) continue;
      any = true;
      std::uint64_t h = Fnv1a64(node->id + "/" + kind);
      std::seed_seq seq{static_cast<std::uint32_t>(options.seed),
                        static_cast<std::uint32_t>(options.seed >> 32),
                        static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
      Rng rng(seq);
      const GroundTruthLatency& model = entry->model;
      ComponentProfile cp;
      cp.node = node->id;
      cp.kind = kind;
      cp.max_batch = entry->max_batch;
      cp.points = Profile([&](int b) { return EvalGroundTruth(model, b, 1, &rng); },
                          entry->max_batch, options.threshold, options.samples);
      cp.fit = cp.points.size() == 1 ? SingleBatchFit(cp.points.front())
                                     : FitPwl(cp.points, kDefaultMaxSegments, DefaultPenalty(cp.points));
      cp.fit.rule = options.rule;
      out.push_back(std::move(cp));
    }
    if (!any) {
      throw Error(ErrorCode::kValidation,
                  "no ground truth for component \"" + node->id + "\" on any kind in its affinity");
    }
  }
  return out;
}

FitTable FitsOf(const std::vector<ComponentProfile>& profiles) {
  FitTable fits;
  for (const auto& cp : profiles) fits[cp.node][cp.kind] = cp.fit;
  return fits;
}

Deployment Deploy(std::shared_ptr<const PipelineGraph> graph, const TruthSpec& truth,
                  const std::vector<ResourceKind>& resources, const ProfileOptions& profile,
                  const SolveOptions& solve) {
  Deployment d;
  d.graph = std::move(graph);
  d.truth = truth;
  d.profiles = ProfileAll(*d.graph, truth, profile);
  d.problem = MakeProblem(d.graph, resources, FitsOf(d.profiles));
  d.plan = SolveMaxThroughput(d.problem, solve);
  return d;
}

int WorkerCount(std::size_t jobs) {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("RAGFLOW_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) n = static_cast<int>(std::min<long>(v, 1024));
  }
  n = std::min<long long>(n, static_cast<long long>(jobs));
  return std::max(n, 1);
}

void ParallelFor(std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  int n = WorkerCount(jobs);
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string DumpJson(const Json& doc) { return doc.dump(2) + "\n"; }

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFile(const std::string& path, const std::string& data) {
  fs::path p(path);
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out << data;
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path);
}

double SaturatingRate(const Deployment& d) {
  double cap = d.plan.objective_throughput;
  try {
    AllocationPlan uniform = UniformPlan(d.problem);
    ScorePlan(d.problem, uniform);
    cap = std::max(cap, uniform.objective_throughput);
  } catch (const Error&) {
  }
  return 2.0 * cap;
}

std::vector<AblationRow> Ablate(const Deployment& d, const ScenarioConfig& scenario,
                                int repeats) {
  if (repeats < 1) throw Error(ErrorCode::kInvalidArgument, "repeats must be >= 1");
  std::vector<AblationRow> rows = {
      {"baseline", {false, false, false}},
      {"+batching", {true, false, false}},
      {"+pipelining", {true, true, false}},
      {"+allocation", {true, true, true}},
  };
  GroundTruthTable truth = TruthTable(d.truth);
  std::vector<double> tp(rows.size() * repeats, 0.0);
  ParallelFor(tp.size(), [&](std::size_t job) {
    std::size_t row = job / repeats;
    ScenarioConfig sc = ToggleFeatures(scenario, rows[row].toggles);
    sc.mitigation.enabled = false;
    sc.seed = scenario.seed + job % repeats;
    tp[job] = Simulate(d.problem, d.plan, truth, sc).report.throughput;
  });
  for (std::size_t r = 0; r < rows.size(); ++r) {
    double sum = 0.0;
    for (int s = 0; s < repeats; ++s) sum += tp[r * repeats + s];
    rows[r].throughput = sum / repeats;
    if (r > 0) {
      double prev = rows[r - 1].throughput;
      rows[r].multiplier = prev > 0 ? rows[r].throughput / prev : 0.0;
    }
  }
  return rows;
}

std::string RunProfileCommand(const Json& o) {
  std::string out = RequireOut(o);
  Inputs in = ResolveInputs(o, true, false);
  ProfileOptions po = ProfileOpts(o);
  auto profiles = ProfileAll(*in.graph, in.truth, po);
  Json inputs = {{"pipeline", Digest(in.pipeline_doc)},
                 {"truth", Digest(in.truth_doc)},
                 {"seed", po.seed},
                 {"samples", po.samples}};
  std::map<std::string, std::vector<const ComponentProfile*>> by_node;
  int probes = 0;
  for (const auto& cp : profiles) {
    by_node[cp.node].push_back(&cp);
    probes += cp.probes();
  }
  fs::path dir = fs::path(out) / "fits";
  std::ostringstream os;
  for (const auto& [node, kinds] : by_node) {
    WriteFile((dir / (node + ".json")).string(), DumpJson(ProfileFileJson(node, kinds, inputs)));
    for (const auto* cp : kinds) {
      os << node << "/" << cp->kind << ": " << cp->probes() << " probes, "
         << cp->fit.segments.size() << " segment(s) on [1, " << cp->max_batch << "]\n";
    }
  }
  os << "profiled " << by_node.size() << " component(s), " << probes << " probes -> "
     << dir.string() << "\n";
  return os.str();
}

std::string RunPlanCommand(const Json& o) {
  std::string out = RequireOut(o);
  Inputs in = ResolveInputs(o, false, true);
  Json opts = o;
  fs::path default_fits = fs::path(out) / "fits";
  if (!Has(opts, "fits") && (in.truth.empty() || fs::is_directory(default_fits))) {
    opts["fits"] = default_fits.string();
  }
  Planned planned = PlanFromOptions(opts, in);
  const Deployment& d = planned.deployment;
  Json doc = PlanToJson(d.problem, d.plan);
  doc["schema_version"] = kSchemaVersion;
  doc["inputs"] = planned.inputs;
  fs::path path = fs::path(out) / "plan.json";
  WriteFile(path.string(), DumpJson(doc));
  return PlanTable(d.problem, d.plan) + "plan -> " + path.string() + "\n";
}

std::string RunSimulateCommand(const Json& o) {
  std::string out = RequireOut(o);
  Inputs in = ResolveInputs(o, true, true);
  if (!in.have_scenario) throw Error(ErrorCode::kInvalidArgument, "missing --scenario");
  Planned planned = PlanFromOptions(o, in);
  const Deployment& d = planned.deployment;
  GroundTruthTable truth = TruthTable(d.truth);
  std::vector<double> rates = Rates(o, in.scenario);
  int repeats = Repeats(o);
  std::vector<bool> modes;
  std::string mit = Has(o, "mitigation") && o["mitigation"].is_string()
                        ? o["mitigation"].get<std::string>()
                        : "";
  if (mit == "both") {
    modes = {false, true};
  } else if (Has(o, "mitigation")) {
    modes = {Switch(o["mitigation"], "mitigation")};
  } else {
    modes = {in.scenario.mitigation.enabled};
  }

  struct Point {
    double rate;
    bool mitigation;
    std::uint64_t seed;
    std::string tag;
    MetricsReport report;
  };
  std::vector<Point> points;
  for (double rate : rates) {
    for (bool m : modes) {
      for (int r = 0; r < repeats; ++r) {
        std::uint64_t seed = in.scenario.seed + static_cast<std::uint64_t>(r);
        std::string tag = "rate_" + RateTag(rate) + "_mit_" + (m ? "on" : "off") + "_seed_" +
                          std::to_string(seed);
        points.push_back({rate, m, seed, tag, {}});
      }
    }
  }
  Json plan_doc = PlanToJson(d.problem, d.plan);
  ParallelFor(points.size(), [&](std::size_t i) {
    Point& pt = points[i];
    ScenarioConfig sc = in.scenario;
    sc.arrival_rate_rps = pt.rate;
    sc.seed = pt.seed;
    sc.mitigation.enabled = pt.mitigation;
    pt.report = Simulate(d.problem, d.plan, truth, sc).report;
    Json doc = {{"schema_version", kSchemaVersion},
                {"inputs", planned.inputs},
                {"point", {{"rate", pt.rate}, {"seed", pt.seed}, {"mitigation", pt.mitigation}}},
                {"scenario", sc.ToJson()},
                {"plan", plan_doc},
                {"report", pt.report.ToJson()}};
    fs::path base = fs::path(out) / "runs" / pt.tag;
    WriteFile(base.string() + ".json", DumpJson(doc));
    WriteFile(base.string() + ".csv", pt.report.ToCsv());
  });

  std::ostringstream csv;
  csv << "rate,mitigation,seed,arrivals,completions,throughput,goodput,slo_violation_rate,p50,p95,"
         "p99\n";
  std::ostringstream os;
  os << "    rate  mit  seed  throughput   goodput  viol%      p95\n";
  for (const auto& pt : points) {
    const auto& r = pt.report;
    csv << Fmt(pt.rate) << ',' << (pt.mitigation ? "on" : "off") << ',' << pt.seed << ','
        << r.arrivals << ',' << r.completions << ',' << Fmt(r.throughput) << ',' << Fmt(r.goodput)
        << ',' << Fmt(r.slo_violation_rate) << ',' << Fmt(r.p50) << ',' << Fmt(r.p95) << ','
        << Fmt(r.p99) << '\n';
    char line[160];
    std::snprintf(line, sizeof(line), "%8.3f  %-3s  %4" PRIu64 "  %10.3f  %8.3f  %5.2f  %7.3f\n",
                  pt.rate, pt.mitigation ? "on" : "off", pt.seed, r.throughput, r.goodput,
                  100.0 * r.slo_violation_rate, r.p95);
    os << line;
  }
  WriteFile((fs::path(out) / "summary.csv").string(), csv.str());
  os << points.size() << " run(s) -> " << (fs::path(out) / "runs").string() << "\n";
  return os.str();
}

std::string RunAblateCommand(const Json& o) {
  std::string out = RequireOut(o);
  Inputs in = ResolveInputs(o, true, true);
  Planned planned = PlanFromOptions(o, in);
  const Deployment& d = planned.deployment;
  ScenarioConfig sc = in.scenario;
  sc.arrival_rate_rps = Has(o, "rate") ? o["rate"].get<double>() : SaturatingRate(d);
  sc.schedule.clear();
  sc.Validate();
  auto rows = Ablate(d, sc, Repeats(o));

  std::ostringstream csv;
  csv << "config,batching,pipelining,allocation,throughput,multiplier,cumulative\n";
  std::ostringstream os;
  os << "config         throughput  multiplier  cumulative\n";
  Json doc_rows = Json::array();
  for (const auto& r : rows) {
    double cumulative = rows[0].throughput > 0 ? r.throughput / rows[0].throughput : 0.0;
    csv << r.config << ',' << (r.toggles.batching ? "on" : "off") << ','
        << (r.toggles.pipelining ? "on" : "off") << ','
        << (r.toggles.component_allocation ? "on" : "off") << ',' << Fmt(r.throughput) << ','
        << Fmt(r.multiplier) << ',' << Fmt(cumulative) << '\n';
    char line[128];
    std::snprintf(line, sizeof(line), "%-13s %11.3f  %9.2fx  %9.2fx\n", r.config.c_str(),
                  r.throughput, r.multiplier, cumulative);
    os << line;
    doc_rows.push_back({{"config", r.config},
                        {"batching", r.toggles.batching},
                        {"pipelining", r.toggles.pipelining},
                        {"allocation", r.toggles.component_allocation},
                        {"throughput", r.throughput},
                        {"multiplier", r.multiplier},
                        {"cumulative", cumulative}});
  }
  Json doc = {{"schema_version", kSchemaVersion},
              {"inputs", planned.inputs},
              {"scenario", sc.ToJson()},
              {"repeats", Repeats(o)},
              {"rows", std::move(doc_rows)}};
  WriteFile((fs::path(out) / "ablation.csv").string(), csv.str());
  WriteFile((fs::path(out) / "ablation.json").string(), DumpJson(doc));
  os << "ablation -> " << (fs::path(out) / "ablation.csv").string() << "\n";
  return os.str();
}

std::string RunReportCommand(const Json& o) {
  std::string run = StringOpt(o, "run");
  if (run.empty()) run = StringOpt(o, "out");
  if (run.empty()) throw Error(ErrorCode::kInvalidArgument, "missing run directory");
  if (!fs::is_directory(run)) throw Error(ErrorCode::kIo, "not a directory: " + run);
  fs::path dir = fs::path(run) / "runs";
  if (!fs::is_directory(dir)) dir = run;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  struct Agg {
    int runs = 0;
    double throughput = 0, goodput = 0, violation = 0, p95 = 0;
  };
  // Keyed by (mitigation, rate).
  std::map<std::pair<bool, double>, Agg> groups;
  for (const auto& f : files) {
    Json doc = ReadJsonFile(f.string());
    if (!doc.contains("report") || !doc.contains("point")) continue;
    const Json& r = doc["report"];
    Agg& a = groups[{doc["point"].value("mitigation", false), doc["point"]["rate"].get<double>()}];
    ++a.runs;
    a.throughput += r["throughput"].get<double>();
    a.goodput += r["goodput"].get<double>();
    a.violation += r["slo_violation_rate"].get<double>();
    a.p95 += r["latency"]["p95"].get<double>();
  }
  if (groups.empty()) throw Error(ErrorCode::kIo, "no run reports found in " + run);

  std::ostringstream csv;
  csv << "rate,mitigation,runs,throughput,goodput,violation_pct,p95,saturated\n";
  std::ostringstream os;
  os << "    rate  mit  runs  throughput   goodput   viol%      p95\n";
  std::optional<bool> mode;
  bool flagged = false;
  for (const auto& [key, a] : groups) {
    if (mode != key.first) {
      mode = key.first;
      flagged = false;
    }
    double n = a.runs;
    double tp = a.throughput / n;
    // First offered rate the pipeline no longer keeps up with.
    bool saturated = !flagged && tp < 0.9 * key.second;
    flagged = flagged || saturated;
    csv << Fmt(key.second) << ',' << (key.first ? "on" : "off") << ',' << a.runs << ',' << Fmt(tp)
        << ',' << Fmt(a.goodput / n) << ',' << Fmt(100.0 * a.violation / n) << ','
        << Fmt(a.p95 / n) << ',' << (saturated ? 1 : 0) << '\n';
    char line[160];
    std::snprintf(line, sizeof(line), "%8.3f  %-3s  %4d  %10.3f  %8.3f  %6.2f  %7.3f%s\n",
                  key.second, key.first ? "on" : "off", a.runs, tp, a.goodput / n,
                  100.0 * a.violation / n, a.p95 / n, saturated ? "  <- saturation" : "");
    os << line;
  }
  WriteFile((fs::path(run) / "report.csv").string(), csv.str());
  os << "report -> " << (fs::path(run) / "report.csv").string() << "\n";
  return os.str();
}

std::string RunTemplateCommand(const Json& o) {
  std::string out = RequireOut(o);
  std::string name = StringOpt(o, "template");
  if (name.empty()) name = StringOpt(o, "scenario");
  if (name.empty()) throw Error(ErrorCode::kInvalidArgument, "missing template name");
  ScenarioTemplate t = LoadTemplate(name);
  fs::path dir(out);
  std::string resources;
  for (const auto& r : t.resources) {
    if (!resources.empty()) resources += ",";
    resources += r.name + "=" + std::to_string(r.count);
  }
  WriteFile((dir / "pipeline.json").string(), DumpJson(t.pipeline));
  WriteFile((dir / "truth.json").string(), DumpJson(TruthSpecToJson(t.truth)));
  WriteFile((dir / "scenario.json").string(), DumpJson(t.scenario.ToJson()));
  WriteFile((dir / "resources.txt").string(), resources + "\n");
  return "template " + t.name + " -> " + dir.string() +
         " (pipeline.json, truth.json, scenario.json, resources.txt = " + resources + ")\n";
}

}  // namespace ragflow
