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

// Command-line front end. Translates flags into a JSON options object and
// hands it to rf_command.

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ragflow/ragflow.h"

namespace {

using Json = nlohmann::json;

struct Flags {
  std::string pipeline, truth, scenario, resources, out, fits, plan, spare, run;
  std::string mitigation, autoscale;
  std::vector<std::string> toggles;
  std::vector<double> rates;
  std::uint64_t seed = 0, profile_seed = 0;
  int repeats = 0, samples = 0;
  std::int64_t budget_ms = 0;
  double duration = 0, slo = 0, rate = 0;
};

// Registers the flag only on subcommands that consume it.
struct Builder {
  CLI::App* cmd;
  Flags* f;

  Builder& Inputs() {
    cmd->add_option("--pipeline", f->pipeline, "Pipeline graph JSON file");
    cmd->add_option("--truth", f->truth, "Ground-truth latency JSON file");
    cmd->add_option("--scenario", f->scenario,
                    "Scenario JSON file or template name (crag, hipporag, ircot, memorag)");
    cmd->add_option("--resources", f->resources, "Resource pool, e.g. gpu=6,cpu=4");
    cmd->add_option("--out", f->out, "Output directory")->required();
    return *this;
  }
  Builder& Seed() {
    cmd->add_option("--seed", f->seed, "Random seed");
    return *this;
  }
  Builder& Profiling() {
    cmd->add_option("--samples", f->samples, "Ground-truth evaluations per probe")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--profile-seed", f->profile_seed, "Profiling seed (defaults to --seed)");
    return *this;
  }
  Builder& Planning() {
    cmd->add_option("--fits", f->fits, "Directory of per-component fits");
    cmd->add_option("--budget-ms", f->budget_ms, "Solver time budget in milliseconds")
        ->check(CLI::PositiveNumber);
    return *this;
  }
  Builder& Running() {
    cmd->add_option("--plan", f->plan, "Allocation plan JSON (solved when omitted)");
    cmd->add_option("--toggle", f->toggles,
                    "Feature toggle name=on|off for batching, pipelining or allocation");
    cmd->add_option("--repeats", f->repeats, "Seeds per point")->check(CLI::PositiveNumber);
    cmd->add_option("--duration", f->duration, "Simulated seconds")->check(CLI::PositiveNumber);
    cmd->add_option("--slo", f->slo, "End-to-end latency objective in seconds")
        ->check(CLI::PositiveNumber);
    return *this;
  }
};

Json ToOptions(const CLI::App& cmd, const Flags& f) {
  Json o = Json::object();
  auto set = [&](const char* flag, const char* key, const Json& v) {
    if (cmd.get_option_no_throw(flag) && cmd.count(flag) > 0) o[key] = v;
  };
  set("--pipeline", "pipeline", f.pipeline);
  set("--truth", "truth", f.truth);
  set("--scenario", "scenario", f.scenario);
  set("--resources", "resources", f.resources);
  set("--out", "out", f.out);
  set("--fits", "fits", f.fits);
  set("--plan", "plan", f.plan);
  set("--spare", "spare", f.spare);
  set("--run", "run", f.run);
  set("--mitigation", "mitigation", f.mitigation);
  set("--autoscale", "autoscale", f.autoscale);
  set("--rates", "rates", f.rates);
  set("--seed", "seed", f.seed);
  set("--profile-seed", "profile_seed", f.profile_seed);
  set("--repeats", "repeats", f.repeats);
  set("--samples", "samples", f.samples);
  set("--budget-ms", "budget_ms", f.budget_ms);
  set("--duration", "duration", f.duration);
  set("--slo", "slo", f.slo);
  set("--rate", "rate", f.rate);
  if (!f.toggles.empty()) {
    Json toggles = Json::object();
    for (const auto& t : f.toggles) {
      auto eq = t.find('=');
      if (eq == std::string::npos) throw CLI::ValidationError("--toggle", "expected name=on|off: " + t);
      toggles[t.substr(0, eq)] = t.substr(eq + 1);
    }
    o["toggles"] = toggles;
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Throughput-optimized serving of retrieval-augmented generation pipelines"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(rf_version()));
  Flags f;
  const auto on_off = CLI::IsMember({"on", "off"});

  auto* profile = app.add_subcommand("profile", "Profile components and write out/fits/<node>.json");
  Builder{profile, &f}.Inputs().Seed().Profiling();

  auto* plan = app.add_subcommand("plan", "Solve the allocation and write out/plan.json");
  Builder{plan, &f}.Inputs().Seed().Profiling().Planning();

  auto* simulate = app.add_subcommand("simulate", "Simulate a plan over one or more arrival rates");
  Builder{simulate, &f}.Inputs().Seed().Profiling().Planning().Running();
  simulate->add_option("--rates", f.rates, "Arrival rates to sweep (req/s)")->delimiter(',');
  simulate->add_option("--mitigation", f.mitigation, "SLO mitigation")
      ->check(CLI::IsMember({"on", "off", "both"}));
  simulate->add_option("--autoscale", f.autoscale, "Autoscale onto spare resources")->check(on_off);
  simulate->add_option("--spare", f.spare, "Spare resources for autoscaling, e.g. gpu=1");

  auto* ablate = app.add_subcommand("ablate", "Throughput ablation of batching, pipelining, allocation");
  Builder{ablate, &f}.Inputs().Seed().Profiling().Planning().Running();
  ablate->add_option("--rate", f.rate, "Offered load (default saturates every configuration)")
      ->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Aggregate simulate runs into report.csv");
  report->add_option("--run,--out", f.run, "Directory written by simulate")->required();

  auto* tmpl = app.add_subcommand("template", "Write a scenario template's input files");
  tmpl->add_option("name", f.scenario, "crag, hipporag, ircot or memorag")->required();
  tmpl->add_option("--out", f.out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  CLI::App* cmd = app.get_subcommands().front();
  Json options;
  try {
    options = ToOptions(*cmd, f);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  }
  if (cmd == tmpl) options = {{"template", f.scenario}, {"out", f.out}};

  char* summary = nullptr;
  rf_status st = rf_command(cmd->get_name().c_str(), options.dump().c_str(), &summary);
  if (st != RF_OK) {
    std::fprintf(stderr, "error: %s\n", rf_last_error());
    return static_cast<int>(st);
  }
  std::fputs(summary, stdout);
  rf_free_string(summary);
  return 0;
}
