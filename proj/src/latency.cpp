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

#include "latency.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace ragflow {
namespace {

[[noreturn]] void BadModel(const std::string& msg) {
  throw Error(ErrorCode::kValidation, "latency model: " + msg);
}

double Number(const Json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end() || !it->is_number()) {
    throw Error(ErrorCode::kParse,
                std::string("latency model: missing numeric \"") + key + "\"");
  }
  return it->get<double>();
}

double NumberOr(const Json& doc, const char* key, double fallback) {
  auto it = doc.find(key);
  if (it == doc.end()) return fallback;
  if (!it->is_number()) {
    throw Error(ErrorCode::kParse,
                std::string("latency model: \"") + key + "\" must be a number");
  }
  return it->get<double>();
}

struct Line {
  double slope = 0.0;
  double intercept = 0.0;
  double sse = 0.0;
};

Line FitLine(const std::vector<double>& x, const std::vector<double>& y,
             std::size_t lo, std::size_t hi) {
  double n = static_cast<double>(hi - lo + 1);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = lo; i <= hi; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = lo; i <= hi; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  Line line;
  line.slope = sxx > 0 ? sxy / sxx : 0.0;
  line.intercept = my - line.slope * mx;
  for (std::size_t i = lo; i <= hi; ++i) {
    double r = y[i] - (line.slope * x[i] + line.intercept);
    line.sse += r * r;
  }
  return line;
}

// Least-squares continuous linear spline with nodes `knots` (which include
// both ends). Returns node values; `sse` receives the residual sum.
std::vector<double> FitSpline(const std::vector<double>& x,
                              const std::vector<double>& y,
                              const std::vector<double>& knots, double* sse) {
  const std::size_t m = knots.size();
  // Hat-function normal equations are tridiagonal.
  std::vector<double> diag(m, 0.0), off(m, 0.0), rhs(m, 0.0);
  std::vector<std::size_t> seg(x.size());
  std::vector<double> w(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::size_t j = static_cast<std::size_t>(
        std::upper_bound(knots.begin(), knots.end(), x[i]) - knots.begin());
    j = std::clamp<std::size_t>(j, 1, m - 1) - 1;
    double t = (x[i] - knots[j]) / (knots[j + 1] - knots[j]);
    seg[i] = j;
    w[i] = t;
    double a = 1.0 - t, b = t;
    diag[j] += a * a;
    diag[j + 1] += b * b;
    off[j] += a * b;
    rhs[j] += a * y[i];
    rhs[j + 1] += b * y[i];
  }
  // Thomas algorithm.
  std::vector<double> c(m, 0.0), d(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    double denom = diag[j] - (j > 0 ? off[j - 1] * c[j - 1] : 0.0);
    c[j] = j + 1 < m ? off[j] / denom : 0.0;
    d[j] = (rhs[j] - (j > 0 ? off[j - 1] * d[j - 1] : 0.0)) / denom;
  }
  std::vector<double> v(m);
  for (std::size_t j = m; j-- > 0;) {
    v[j] = d[j] - (j + 1 < m ? c[j] * v[j + 1] : 0.0);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double pred = (1.0 - w[i]) * v[seg[i]] + w[i] * v[seg[i] + 1];
    total += (y[i] - pred) * (y[i] - pred);
  }
  *sse = total;
  return v;
}

}  // namespace

void GroundTruthLatency::Validate() const {
  std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ConstantPerQuery>) {
          if (!(s.per_query > 0)) BadModel("constant_per_query needs c > 0");
        } else if constexpr (std::is_same_v<T, AmortizedBatch>) {
          if (!(s.fixed > 0) || !(s.per_item >= 0)) {
            BadModel("amortized_batch needs c0 > 0 and c1 >= 0");
          }
        } else if constexpr (std::is_same_v<T, Sublinear>) {
          if (!(s.scale > 0)) BadModel("sublinear needs c > 0");
          if (!(s.exponent > 0 && s.exponent < 1)) {
            BadModel("sublinear needs alpha in (0, 1)");
          }
        } else {
          if (!(s.fixed > 0) || !(s.per_item >= 0) || !(s.knee >= 1)) {
            BadModel("saturating needs c0 > 0, c1 >= 0, b_knee >= 1");
          }
        }
      },
      shape);
  if (!(efficiency > 0 && efficiency <= 1)) BadModel("efficiency must be in (0, 1]");
  if (!(noise >= 0) || !std::isfinite(noise)) BadModel("noise must be >= 0");
}

double GroundTruthLatency::BaseBatchTime(double b) const {
  return std::visit(
      [b](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ConstantPerQuery>) {
          return s.per_query * b;
        } else if constexpr (std::is_same_v<T, AmortizedBatch>) {
          return s.fixed + s.per_item * b;
        } else if constexpr (std::is_same_v<T, Sublinear>) {
          return s.scale * std::pow(b, s.exponent);
        } else {
          if (b <= s.knee) return s.fixed + s.per_item * b;
          return (s.fixed + s.per_item * s.knee) * b / s.knee;
        }
      },
      shape);
}

Json GroundTruthLatency::ToJson() const {
  Json out = std::visit(
      [](const auto& s) -> Json {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ConstantPerQuery>) {
          return {{"family", "constant_per_query"}, {"c", s.per_query}};
        } else if constexpr (std::is_same_v<T, AmortizedBatch>) {
          return {{"family", "amortized_batch"}, {"c0", s.fixed}, {"c1", s.per_item}};
        } else if constexpr (std::is_same_v<T, Sublinear>) {
          return {{"family", "sublinear"}, {"c", s.scale}, {"alpha", s.exponent}};
        } else {
          return {{"family", "saturating"},
                  {"c0", s.fixed},
                  {"c1", s.per_item},
                  {"b_knee", s.knee}};
        }
      },
      shape);
  out["efficiency"] = efficiency;
  out["noise"] = noise;
  return out;
}

GroundTruthLatency GroundTruthLatency::FromJson(const Json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::kParse, "latency model must be an object");
  auto fam = doc.find("family");
  if (fam == doc.end() || !fam->is_string()) {
    throw Error(ErrorCode::kParse, "latency model: missing \"family\"");
  }
  GroundTruthLatency m;
  const std::string family = fam->get<std::string>();
  if (family == "constant_per_query") {
    m.shape = ConstantPerQuery{Number(doc, "c")};
  } else if (family == "amortized_batch") {
    m.shape = AmortizedBatch{Number(doc, "c0"), Number(doc, "c1")};
  } else if (family == "sublinear") {
    m.shape = Sublinear{Number(doc, "c"), Number(doc, "alpha")};
  } else if (family == "saturating") {
    m.shape = Saturating{Number(doc, "c0"), Number(doc, "c1"), Number(doc, "b_knee")};
  } else {
    throw Error(ErrorCode::kParse, "latency model: unknown family \"" + family + "\"");
  }
  m.efficiency = NumberOr(doc, "efficiency", 1.0);
  m.noise = NumberOr(doc, "noise", 0.0);
  m.Validate();
  return m;
}

double EvalGroundTruth(const GroundTruthLatency& model, int b, int a, Rng* rng) {
  if (b < 1 || a < 1) {
    throw Error(ErrorCode::kInvalidArgument, "batch and replicas must be >= 1");
  }
  int per_replica = (b + a - 1) / a;
  double t = model.BaseBatchTime(per_replica);
  if (a > 1) t /= model.efficiency;
  if (rng != nullptr && model.noise > 0) {
    double s2 = std::log1p(model.noise * model.noise);
    std::lognormal_distribution<double> dist(-0.5 * s2, std::sqrt(s2));
    t *= dist(*rng);
  }
  return t;
}

std::vector<ProfilePoint> Profile(const BatchTimeFn& model, int max_batch,
                                  double improvement_threshold, int samples) {
  if (max_batch < 1) {
    throw Error(ErrorCode::kInvalidArgument, "profile: max batch must be >= 1");
  }
  if (!(improvement_threshold > 0 && improvement_threshold < 1)) {
    throw Error(ErrorCode::kInvalidArgument, "profile: threshold must be in (0, 1)");
  }
  if (samples < 1) {
    throw Error(ErrorCode::kInvalidArgument, "profile: samples must be >= 1");
  }
  std::map<int, ProfilePoint> probed;
  auto probe = [&](int b) -> double {
    auto it = probed.find(b);
    if (it != probed.end()) return b / it->second.mean_batch_time;
    double sum = 0.0, sum_sq = 0.0;
    for (int s = 0; s < samples; ++s) {
      double t = 0.0;
      try {
        t = model(b);
      } catch (const std::exception& e) {
        throw ProbeFailure(b, e.what());
      }
      if (!std::isfinite(t) || t <= 0) throw ProbeFailure(b, "non-positive batch time");
      sum += t;
      sum_sq += t * t;
    }
    ProfilePoint p;
    p.batch = b;
    p.samples = samples;
    p.mean_batch_time = sum / samples;
    if (samples > 1) {
      double var = (sum_sq - sum * sum / samples) / (samples - 1);
      p.stddev = std::sqrt(std::max(0.0, var));
    }
    probed.emplace(b, p);
    return b / p.mean_batch_time;
  };

  probe(max_batch);
  probe(1);
  int lo = 1, hi = max_batch;
  while (hi - lo > 1) {
    int mid = lo + (hi - lo) / 2;
    double mid_tp = probe(mid);
    double hi_tp = probe(hi);
    // Gain of the larger batch over its lower neighbour; small gains mean
    // the useful range ends below mid.
    if (hi_tp / mid_tp - 1.0 < improvement_threshold) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  std::vector<ProfilePoint> out;
  out.reserve(probed.size());
  for (auto& [b, p] : probed) out.push_back(p);
  return out;
}

double PwlFit::Eval(double b) const {
  if (breakpoints.size() < 2 || segments.size() + 1 != breakpoints.size()) {
    throw Error(ErrorCode::kInvalidArgument, "pwl fit is empty");
  }
  constexpr double kSlack = 1e-9;
  if (b < domain_min() - kSlack || b > domain_max() + kSlack) {
    throw Error(ErrorCode::kInvalidArgument,
                "batch " + std::to_string(b) + " outside fitted domain [" +
                    std::to_string(domain_min()) + ", " +
                    std::to_string(domain_max()) + "]");
  }
  std::size_t j = static_cast<std::size_t>(
      std::upper_bound(breakpoints.begin(), breakpoints.end(), b) -
      breakpoints.begin());
  j = std::clamp<std::size_t>(j, 1, segments.size()) - 1;
  return segments[j].slope * b + segments[j].intercept;
}

double PwlFit::Predict(int b, int a) const {
  if (a < 1) throw Error(ErrorCode::kInvalidArgument, "replicas must be >= 1");
  if (b < 1) throw Error(ErrorCode::kInvalidArgument, "batch must be >= 1");
  if (rule == ReplicaRule::kEvenSplit) return Eval((b + a - 1) / a);
  return Eval(b) / a;
}

Json PwlFit::ToJson() const {
  Json segs = Json::array();
  for (const auto& s : segments) {
    segs.push_back({{"slope", s.slope}, {"intercept", s.intercept}});
  }
  return {{"breakpoints", breakpoints},
          {"segments", std::move(segs)},
          {"replica_rule", rule == ReplicaRule::kEvenSplit ? "even_split" : "parallel"}};
}

PwlFit PwlFit::FromJson(const Json& doc) {
  PwlFit fit;
  try {
    fit.breakpoints = doc.at("breakpoints").get<std::vector<double>>();
    for (const Json& s : doc.at("segments")) {
      fit.segments.push_back({s.at("slope").get<double>(), s.at("intercept").get<double>()});
    }
    std::string rule = doc.value("replica_rule", "even_split");
    if (rule == "even_split") {
      fit.rule = ReplicaRule::kEvenSplit;
    } else if (rule == "parallel") {
      fit.rule = ReplicaRule::kParallel;
    } else {
      throw Error(ErrorCode::kParse, "pwl fit: unknown replica_rule \"" + rule + "\"");
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("pwl fit: ") + e.what());
  }
  if (fit.breakpoints.size() < 2 || fit.segments.size() + 1 != fit.breakpoints.size()) {
    throw Error(ErrorCode::kParse, "pwl fit: breakpoints/segments mismatch");
  }
  for (std::size_t j = 1; j < fit.breakpoints.size(); ++j) {
    if (!(fit.breakpoints[j] > fit.breakpoints[j - 1])) {
      throw Error(ErrorCode::kParse, "pwl fit: breakpoints must increase");
    }
  }
  if (fit.breakpoints.front() < 1) {
    throw Error(ErrorCode::kParse, "pwl fit: domain must start at b >= 1");
  }
  return fit;
}

double DefaultPenalty(const std::vector<ProfilePoint>& points) {
  double noise = 0.0, scale = 0.0;
  for (const auto& p : points) {
    noise += p.stddev * p.stddev / p.samples;
    scale += p.mean_batch_time * p.mean_batch_time;
  }
  if (points.empty()) return 0.0;
  noise /= points.size();
  scale /= points.size();
  return 2.0 * noise + 1e-9 * scale;
}

PwlFit FitPwl(const std::vector<ProfilePoint>& points, int max_segments,
              double penalty) {
  if (max_segments < 1) {
    throw Error(ErrorCode::kInvalidArgument, "fit: max_segments must be >= 1");
  }
  if (!(penalty >= 0)) throw Error(ErrorCode::kInvalidArgument, "fit: penalty must be >= 0");
  std::map<int, std::pair<double, int>> merged;
  for (const auto& p : points) {
    if (p.batch < 1 || !(p.mean_batch_time > 0)) {
      throw Error(ErrorCode::kInvalidArgument, "fit: invalid profile point");
    }
    auto& [sum, n] = merged[p.batch];
    sum += p.mean_batch_time;
    ++n;
  }
  if (merged.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument,
                "fit: need at least 2 distinct batch sizes");
  }
  std::vector<double> x, y;
  for (const auto& [b, acc] : merged) {
    x.push_back(b);
    y.push_back(acc.first / acc.second);
  }
  const std::size_t n = x.size();

  // Bellman DP: best[s][j] = min SSE covering points 0..j with s segments of
  // at least two points each.
  const std::size_t max_s = std::min<std::size_t>(max_segments, n / 2);
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, kInf));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) cost[i][j] = FitLine(x, y, i, j).sse;
  }
  std::vector<std::vector<double>> best(max_s + 1, std::vector<double>(n, kInf));
  std::vector<std::vector<std::size_t>> from(max_s + 1, std::vector<std::size_t>(n, 0));
  for (std::size_t j = 1; j < n; ++j) best[1][j] = cost[0][j];
  for (std::size_t s = 2; s <= max_s; ++s) {
    for (std::size_t j = 3; j < n; ++j) {
      for (std::size_t i = 2; i + 1 <= j; ++i) {
        // last segment covers i..j, previous ones 0..i-1
        double c = best[s - 1][i - 1] + cost[i][j];
        if (c < best[s][j]) {
          best[s][j] = c;
          from[s][j] = i;
        }
      }
    }
  }
  std::size_t chosen = 1;
  if (std::isfinite(penalty)) {
    double best_total = best[1][n - 1] + penalty;
    for (std::size_t s = 2; s <= max_s; ++s) {
      double total = best[s][n - 1] + penalty * static_cast<double>(s);
      if (total < best_total) {
        best_total = total;
        chosen = s;
      }
    }
  }
  // Segment start indices.
  std::vector<std::size_t> starts;
  for (std::size_t s = chosen, j = n - 1; s > 1; --s) {
    std::size_t i = from[s][j];
    starts.push_back(i);
    j = i - 1;
  }
  std::reverse(starts.begin(), starts.end());

  // Each boundary snaps to one of its two neighbouring profiled batches;
  // keep the continuous refit with the smallest residual.
  const std::size_t boundaries = starts.size();
  std::vector<double> values, knots;
  double best_sse = kInf;
  for (std::size_t mask = 0; mask < (std::size_t{1} << boundaries); ++mask) {
    std::vector<double> k = {x.front()};
    for (std::size_t j = 0; j < boundaries; ++j) {
      k.push_back((mask >> j) & 1 ? x[starts[j]] : x[starts[j] - 1]);
    }
    k.push_back(x.back());
    double sse = 0.0;
    auto v = FitSpline(x, y, k, &sse);
    if (sse < best_sse) {
      best_sse = sse;
      values = std::move(v);
      knots = std::move(k);
    }
  }

  // Extend to b = 1, then keep the model positive and non-decreasing.
  if (knots.front() > 1.0) {
    double slope = (values[1] - values[0]) / (knots[1] - knots[0]);
    values[0] -= slope * (knots[0] - 1.0);
    knots[0] = 1.0;
  }
  double floor = 1e-6 * *std::max_element(y.begin(), y.end());
  values[0] = std::max(values[0], floor);
  for (std::size_t j = 1; j < values.size(); ++j) {
    values[j] = std::max(values[j], values[j - 1]);
  }

  PwlFit fit;
  fit.breakpoints = knots;
  for (std::size_t j = 0; j + 1 < knots.size(); ++j) {
    double slope = (values[j + 1] - values[j]) / (knots[j + 1] - knots[j]);
    fit.segments.push_back({slope, values[j] - slope * knots[j]});
  }
  return fit;
}

}  // namespace ragflow
