/* Copyright 2026 The WDMoE Simulator Authors. All Rights Reserved.

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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <string_view>
#include <string>
#include <vector>

#include "wdmoe/bandwidth.hpp"
#include "wdmoe/oracle.hpp"
#include "wdmoe/selection.hpp"
#include "wdmoe/simulator.hpp"

namespace wdmoe::verify {

// Deliberate defects that `verify` must detect.
enum class Sabotage { kNone, kStepTruncation, kNoProjection, kWrongQuartile };

inline std::optional<Sabotage> sabotage_from_string(std::string_view s) {
  if (s == "none") return Sabotage::kNone;
  if (s == "step-truncation") return Sabotage::kStepTruncation;
  if (s == "no-projection") return Sabotage::kNoProjection;
  if (s == "wrong-quartile") return Sabotage::kWrongQuartile;
  return std::nullopt;
}

inline SolverOptions solver_options(Sabotage s, double tolerance = 1e-9) {
  SolverOptions o;
  o.tolerance = tolerance;
  if (s == Sabotage::kStepTruncation) o.max_iterations = 3;
  if (s == Sabotage::kNoProjection) o.project_to_simplex = false;
  return o;
}

inline QuartileMethod quartile_method(Sabotage s) {
  return s == Sabotage::kWrongQuartile ? QuartileMethod::kLowerNearest : QuartileMethod::kLinear;
}

// Self-contained bandwidth problem; problem() borrows from the members.
struct AllocationInstance {
  RadioConfig radio;
  ModelDims dims;
  std::vector<DeviceProfile> devices;
  std::vector<ChannelState> channels;
  SelectionMatrix selection;

  BandwidthProblem problem() const { return {selection, devices, channels, dims, radio}; }
};

// `devices` heterogeneous devices at 10..300 m, a random gating trace with
// `blocks` x `tokens` and its Top-2 selection.
inline AllocationInstance make_allocation_instance(std::uint64_t seed, std::size_t devices,
                                                   std::size_t blocks = 4,
                                                   std::size_t tokens = 16,
                                                   const RadioConfig& radio = {},
                                                   const ModelDims& dims = {}) {
  AllocationInstance inst;
  inst.radio = radio;
  inst.dims = dims;
  inst.dims.num_blocks = static_cast<std::uint32_t>(blocks);
  inst.dims.num_experts = static_cast<std::uint32_t>(devices);
  RandomStream rng(seed, 0xA110C, devices);
  for (std::size_t k = 0; k < devices; ++k) {
    DeviceProfile d{k, 10.0 + 290.0 * rng.uniform(), 10.0, 0.2, 0.5e12 + 7.5e12 * rng.uniform()};
    inst.devices.push_back(d);
    inst.channels.push_back(sample_channel(d, inst.radio, rng));
  }
  const double peakedness = 0.5 + 2.5 * rng.uniform();
  const auto trace = synth_trace(rng.next_u64(), blocks, tokens, devices, peakedness);
  inst.selection = top_k_select(trace, std::min<std::size_t>(2, devices));
  return inst;
}

// Single-block selection instance with J in [1, 4] tokens, n in [2, 4]
// experts and per-token expert latencies drawn from [1, 10] ms.
struct SelectionInstance {
  GatingTrace trace;
  std::vector<double> latency_s;
};

inline SelectionInstance make_selection_instance(std::uint64_t seed) {
  RandomStream rng(seed, 0x5E1EC7, 0);
  const std::size_t tokens = 1 + rng.next_u64() % 4;
  const std::size_t experts = 2 + rng.next_u64() % 3;
  SelectionInstance inst{synth_trace(rng.next_u64(), 1, tokens, experts, 2.0), {}};
  for (std::size_t k = 0; k < experts; ++k) inst.latency_s.push_back(1e-3 + 9e-3 * rng.uniform());
  return inst;
}

// Lowest ratio of Algorithm 1's WLR sum to the exhaustive optimum observed on
// make_selection_instance(kSelectionSeedBase + 0..99), rounded down.
inline constexpr std::uint64_t kSelectionSeedBase = 2026;
inline constexpr std::size_t kSelectionInstances = 100;
inline constexpr double kSelectionQualityFloor = 0.35;  // observed 0.3585, mean 0.810

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

inline std::string fmt(const char* pattern, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, pattern, a, b);
  return buf;
}

// allocate() against the grid oracle: feasible and within 1e-4 of its value.
inline CheckResult check_allocation(const RadioConfig& radio, const ModelDims& dims,
                                    std::size_t instances, Sabotage sabotage,
                                    std::uint64_t seed = 1) {
  CheckResult r{"allocate vs grid oracle", true, {}};
  double worst_gap = -std::numeric_limits<double>::infinity();
  double worst_sum = 0.0;
  for (std::size_t n = 0; n < instances; ++n) {
    const auto inst = make_allocation_instance(seed + n, 2 + n % 2, 4, 16, radio, dims);
    const auto p = inst.problem();
    const auto [alloc, report] = allocate(p, solver_options(sabotage));
    const auto grid = oracle::grid_search_allocation(p, oracle::kMaxGridSteps);
    const double value = oracle::evaluate_allocation(alloc.shares_hz, p);
    const double sum_err = std::abs(alloc.total_hz() - radio.total_bandwidth_hz) / radio.total_bandwidth_hz;
    bool nonneg = true;
    for (double b : alloc.shares_hz) nonneg = nonneg && b >= 0.0;
    const double gap = value / grid.best_value - 1.0;
    worst_gap = std::max(worst_gap, gap);
    worst_sum = std::max(worst_sum, sum_err);
    if (!nonneg || !(sum_err <= 1e-9) || !(gap <= 1e-4)) r.passed = false;
  }
  r.detail = fmt("worst gap %.3g, worst budget error %.3g", worst_gap, worst_sum);
  return r;
}

inline double selection_ratio(const SelectionInstance& inst, const SelectionPolicyConfig& cfg,
                              bool* rows_nonempty = nullptr) {
  const auto q = wdmoe_select(inst.trace, inst.latency_s, cfg);
  if (rows_nonempty) *rows_nonempty = q.every_row_nonempty();
  const double got = oracle::evaluate_selection(q, inst.trace, 0, inst.latency_s);
  const auto best = oracle::exhaustive_selection(inst.trace, 0, inst.latency_s, cfg.top_k);
  return got / best.best_value;
}

// Algorithm 1 against exhaustive search on small instances.
inline CheckResult check_selection(double floor = kSelectionQualityFloor) {
  CheckResult r{"wdmoe_select vs exhaustive oracle", true, {}};
  double worst = 1.0, mean = 0.0;
  for (std::size_t n = 0; n < kSelectionInstances; ++n) {
    bool nonempty = false;
    const double ratio = selection_ratio(make_selection_instance(kSelectionSeedBase + n), {}, &nonempty);
    worst = std::min(worst, ratio);
    mean += ratio / kSelectionInstances;
    if (!nonempty || !(ratio >= floor)) r.passed = false;
  }
  r.detail = fmt("worst ratio %.4f, mean ratio %.4f", worst, mean);
  return r;
}

// Midpoint convexity of the P3 objective on the scenario's first batch.
inline CheckResult check_convexity(const Scenario& s, const GatingTrace& trace, std::size_t trials) {
  CheckResult r{"convexity probe", true, {}};
  const auto channels = draw_channels(s, 0);
  const auto [q, weights] = collapse_to_devices(s, top_k_select(trace, s.selection.top_k), trace);
  const BandwidthProblem p{q, s.devices, channels, s.dims, s.radio};
  const double scale =
      objective(uniform_allocation(s.devices.size(), s.radio.total_bandwidth_hz), p);
  RandomStream rng(s.seed, 0xC0BE, 0);
  const double worst = convexity_probe(p, rng, trials);
  r.passed = worst <= 1e-9 * scale;
  r.detail = fmt("worst violation %.3g s (scale %.3g s)", worst, scale);
  return r;
}

// Hand-worked bottleneck case: mean latencies (1, 1, 1, 10) ms, 8 tokens per
// device, so predictions (8, 8, 8, 80) ms, Q3 = 26 ms and at most 5 drops.
inline GatingTrace bottleneck_trace() {
  // Tokens 0-7 pair expert 3 (weight 0.20..0.34) with one of experts 0-2;
  // tokens 8-15 pair two of experts 0-2, so every expert serves 8 tokens.
  constexpr std::size_t kPrimary[8] = {0, 0, 0, 1, 1, 1, 2, 2};
  constexpr std::size_t kPairs[8][2] = {{0, 1}, {0, 1}, {0, 2}, {0, 2}, {0, 2},
                                        {1, 2}, {1, 2}, {1, 2}};
  std::vector<float> w;
  for (std::size_t j = 0; j < 8; ++j) {
    const float low = 0.20f + 0.02f * static_cast<float>(j);
    float row[4] = {0.0f, 0.0f, 0.0f, low};
    row[kPrimary[j]] = 0.6f;
    for (std::size_t k = 0; k < 3; ++k)
      if (k != kPrimary[j]) row[k] = (0.4f - low) / 2.0f;
    w.insert(w.end(), row, row + 4);
  }
  for (const auto& pair : kPairs) {
    float row[4] = {0.02f, 0.02f, 0.02f, 0.02f};
    row[pair[0]] = 0.5f;
    row[pair[1]] = 0.46f;
    w.insert(w.end(), row, row + 4);
  }
  return GatingTrace(1, 16, 4, std::move(w));
}

inline CheckResult check_quartile(Sabotage sabotage) {
  CheckResult r{"testbed bottleneck rule", true, {}};
  LatencyHistory h(4);
  for (std::size_t k = 0; k < 3; ++k) h.record(k, 1e-3, 1);
  h.record(3, 10e-3, 1);
  const auto d = testbed_decide(bottleneck_trace(), h, 0, 2, quartile_method(sabotage));
  r.passed = d.triggered && d.bottleneck == 3 && std::abs(d.third_quartile_s - 26e-3) < 1e-12 &&
             d.drop_bound == 5 && d.dropped_tokens.size() <= 5;
  r.detail = fmt("Q3 %.6g ms, drop bound %.0f", d.third_quartile_s * 1e3,
                 static_cast<double>(d.drop_bound));
  return r;
}

inline std::vector<CheckResult> run_suite(const Scenario& s, const GatingTrace& trace,
                                          Sabotage sabotage) {
  return {check_allocation(s.radio, s.dims, 6, sabotage, s.seed),
          check_selection(),
          check_convexity(s, trace, 1000),
          check_quartile(sabotage)};
}

}  // namespace wdmoe::verify
