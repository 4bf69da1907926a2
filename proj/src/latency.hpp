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

#ifndef RAGFLOW_LATENCY_HPP_
#define RAGFLOW_LATENCY_HPP_

#include <functional>
#include <random>
#include <variant>
#include <vector>

#include "common.hpp"

namespace ragflow {

using Rng = std::mt19937_64;

// Batch time = per_query * b.
struct ConstantPerQuery {
  double per_query = 1.0;
};
// Batch time = fixed + per_item * b.
struct AmortizedBatch {
  double fixed = 1.0;
  double per_item = 0.0;
};
// Batch time = scale * b^exponent, exponent in (0, 1).
struct Sublinear {
  double scale = 1.0;
  double exponent = 0.5;
};
// Amortized up to `knee`, then constant time per item (flat throughput).
struct Saturating {
  double fixed = 1.0;
  double per_item = 0.0;
  double knee = 1.0;
};

using LatencyShape =
    std::variant<ConstantPerQuery, AmortizedBatch, Sublinear, Saturating>;

// Synthetic latency of one component, standing in for a real service.
struct GroundTruthLatency {
  LatencyShape shape = ConstantPerQuery{};
  // Parallel efficiency applied when a batch is split over a > 1 replicas.
  double efficiency = 1.0;
  // Relative standard deviation of lognormal multiplicative noise.
  double noise = 0.0;

  void Validate() const;
  // Noiseless batch time of `b` items on one replica.
  double BaseBatchTime(double b) const;

  Json ToJson() const;
  static GroundTruthLatency FromJson(const Json& doc);
};

// Batch time for `b` items over `a` replicas (each takes ceil(b/a) items).
// Deterministic when `rng` is null.
double EvalGroundTruth(const GroundTruthLatency& model, int b, int a, Rng* rng);

struct ProfilePoint {
  int batch = 1;
  int replicas = 1;
  double mean_batch_time = 0.0;
  int samples = 1;
  double stddev = 0.0;

  bool operator==(const ProfilePoint&) const = default;
};

class ProbeFailure : public Error {
 public:
  ProbeFailure(int batch, const std::string& why)
      : Error(ErrorCode::kInternal, "profiling failed at batch " +
                                        std::to_string(batch) + ": " + why),
        batch_(batch) {}
  int batch() const { return batch_; }

 private:
  int batch_;
};

inline constexpr double kDefaultImprovementThreshold = 0.05;
inline constexpr int kDefaultMaxSegments = 8;

using BatchTimeFn = std::function<double(int batch)>;

// Binary-search profiling between b = 1 and b = max_batch. Each probe
// averages `samples` evaluations. Returns points sorted by batch.
std::vector<ProfilePoint> Profile(const BatchTimeFn& model, int max_batch,
                                  double improvement_threshold,
                                  int samples = 1);

enum class ReplicaRule {
  // a replicas split b evenly; time is that of ceil(b/a) on one replica.
  kEvenSplit,
  // every replica runs its own batch of b; effective time T(b)/a.
  kParallel,
};

struct PwlSegment {
  double slope = 0.0;
  double intercept = 0.0;

  bool operator==(const PwlSegment&) const = default;
};

// Continuous, non-decreasing piecewise-linear batch-time model.
struct PwlFit {
  std::vector<double> breakpoints;  // b_0 < b_1 < ... < b_S
  std::vector<PwlSegment> segments;  // one per [b_j, b_{j+1}]
  ReplicaRule rule = ReplicaRule::kEvenSplit;

  double domain_min() const { return breakpoints.front(); }
  double domain_max() const { return breakpoints.back(); }
  int max_batch() const { return static_cast<int>(domain_max()); }
  // Batch time of b items on one replica; b must lie in the domain.
  double Eval(double b) const;
  // T(b, a) under `rule`.
  double Predict(int b, int a) const;

  Json ToJson() const;
  static PwlFit FromJson(const Json& doc);
  bool operator==(const PwlFit&) const = default;
};

// Penalty per segment derived from the measured sample spread.
double DefaultPenalty(const std::vector<ProfilePoint>& points);

// Segmented least squares (Bellman DP over profiled batch sizes) followed by
// a continuous refit and a monotone projection.
PwlFit FitPwl(const std::vector<ProfilePoint>& points, int max_segments,
              double penalty);

}  // namespace ragflow

#endif  // RAGFLOW_LATENCY_HPP_
