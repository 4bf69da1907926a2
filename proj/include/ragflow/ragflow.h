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

/* C interface to the ragflow library. Structured values cross the boundary
 * as UTF-8 JSON text. Strings returned through `char**` are owned by the
 * caller and released with rf_free_string. On failure, rf_last_error()
 * describes the most recent error on the calling thread. */

#ifndef RAGFLOW_RAGFLOW_H_
#define RAGFLOW_RAGFLOW_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(RAGFLOW_BUILDING)
#define RF_API __declspec(dllexport)
#else
#define RF_API __declspec(dllimport)
#endif
#else
#define RF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rf_status {
  RF_OK = 0,
  RF_INVALID_ARGUMENT = 1,
  RF_PARSE = 2,
  RF_VALIDATION = 3,
  RF_INFEASIBLE = 4,
  RF_BUDGET_EXHAUSTED = 5,
  RF_IO = 6,
  RF_INTERNAL = 7
} rf_status;

/* Validated pipeline graph. */
typedef struct rf_pipeline rf_pipeline;
/* Pipeline profiled against a ground truth and planned on a resource pool. */
typedef struct rf_deployment rf_deployment;

RF_API const char* rf_version(void);
RF_API int rf_schema_version(void);
RF_API const char* rf_status_name(rf_status status);
/* Message of the last failed call on this thread; "" when none. */
RF_API const char* rf_last_error(void);
RF_API void rf_free_string(char* s);

RF_API rf_status rf_pipeline_parse(const char* json, rf_pipeline** out);
RF_API void rf_pipeline_free(rf_pipeline* pipeline);
RF_API rf_status rf_pipeline_to_json(const rf_pipeline* pipeline, char** out_json);
RF_API rf_status rf_pipeline_node_count(const rf_pipeline* pipeline, size_t* out);
/* {"node": expected visits per request, ...} */
RF_API rf_status rf_pipeline_visit_rates(const rf_pipeline* pipeline, char** out_json);

/* Profiles every component against `truth_json` ({"components": ...}) and
 * solves the allocation on `resources` ("gpu=6,cpu=4" or a JSON object).
 * budget_ms <= 0 selects the default solver budget. */
RF_API rf_status rf_deploy(const rf_pipeline* pipeline, const char* truth_json,
                           const char* resources, uint64_t profile_seed, int budget_ms,
                           rf_deployment** out);
RF_API void rf_deployment_free(rf_deployment* deployment);
/* Plan rows {component, kind, batch, replicas} plus objective and bottleneck. */
RF_API rf_status rf_deployment_plan(const rf_deployment* deployment, char** out_json);
/* {"node": {"kind": {"probes", "points", "fit"}}} */
RF_API rf_status rf_deployment_profiles(const rf_deployment* deployment, char** out_json);
/* Runs one simulation; returns the metrics report. */
RF_API rf_status rf_simulate(const rf_deployment* deployment, const char* scenario_json,
                             char** out_report_json);

/* Named scenario template as {"pipeline", "truth", "resources", "scenario"}. */
RF_API rf_status rf_template(const char* name, char** out_json);

/* Runs a command ("profile", "plan", "simulate", "ablate", "report",
 * "template") with options given as a JSON object; writes artifacts under
 * options.out and returns a printable summary. */
RF_API rf_status rf_command(const char* name, const char* options_json, char** out_summary);

#ifdef __cplusplus
}
#endif

#endif /* RAGFLOW_RAGFLOW_H_ */
