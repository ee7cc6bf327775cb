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

#include <bit>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "gtest/gtest.h"
#include "wdmoe/simulator.hpp"

namespace wdmoe {
namespace {

Scenario small_scenario(std::uint64_t seed = 3) {
  Scenario s = default_scenario();
  s.dims.num_blocks = 4;
  s.batches = 6;
  s.seed = seed;
  return s;
}

GatingTrace small_trace(std::uint64_t seed = 11) { return synth_trace(seed, 4, 16, 8, 2.0); }

TEST(SimulatorTest, DeterministicAcrossRunsAndThreads) {
  auto s = small_scenario();
  const auto trace = small_trace();
  s.threads = 1;
  const auto a = run_policies(s, trace, kAllPolicies);
  s.threads = 4;
  const auto b = run_policies(s, trace, kAllPolicies);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t p = 0; p < a.size(); ++p) {
    EXPECT_EQ(a[p].batch_total_latency_s, b[p].batch_total_latency_s);
    EXPECT_EQ(a[p].per_block_latency_s, b[p].per_block_latency_s);
    EXPECT_EQ(a[p].wlr_total, b[p].wlr_total);
  }
}

TEST(SimulatorTest, TotalIsSumOfBlocks) {
  const auto s = small_scenario();
  for (const auto& r : run_policies(s, small_trace(), kAllPolicies)) {
    const double sum = std::accumulate(r.per_block_latency_s.begin(), r.per_block_latency_s.end(), 0.0);
    EXPECT_NEAR(r.total_latency_s / sum, 1.0, 1e-12);
    const double mean = std::accumulate(r.batch_total_latency_s.begin(),
                                        r.batch_total_latency_s.end(), 0.0) / s.batches;
    EXPECT_NEAR(r.total_latency_s / mean, 1.0, 1e-12);
    EXPECT_EQ(r.allocations.size(), s.batches);
    EXPECT_GE(r.total_latency_ci95_s, 0.0);
  }
}

TEST(SimulatorTest, AblationOrderingPerBatch) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto s = small_scenario(seed);
    const auto trace = small_trace(seed);
    for (std::size_t b = 0; b < s.batches; ++b) {
      const auto ch = draw_channels(s, b);
      const double base = run_batch(s, Policy::kBaselineTop2Uniform, trace, ch).total_latency_s;
      const double full = run_batch(s, Policy::kWdmoeFull, trace, ch).total_latency_s;
      const double no_sel = run_batch(s, Policy::kWdmoeNoSelection, trace, ch).total_latency_s;
      const double no_bw = run_batch(s, Policy::kWdmoeNoBandwidth, trace, ch).total_latency_s;
      EXPECT_LE(full, no_sel * (1.0 + 1e-9));
      EXPECT_LE(no_sel, base);
      EXPECT_LE(full, no_bw);
    }
  }
}

TEST(SimulatorTest, FadingModes) {
  auto s = small_scenario();
  EXPECT_NE(draw_channels(s, 0), draw_channels(s, 1));
  s.fading_mode = FadingMode::kFrozen;
  EXPECT_EQ(draw_channels(s, 0), draw_channels(s, 5));
  s.fading_mode = FadingMode::kNone;
  const auto ch = draw_channels(s, 2);
  const double mean = mean_amplitude(s.devices[0].distance_m, s.radio.carrier_ghz);
  EXPECT_DOUBLE_EQ(ch[0].g_down, mean * mean);
}

TEST(SimulatorTest, CollapseMergesCoLocatedExperts) {
  Scenario s = small_scenario();
  s.devices.resize(2);
  s.expert_to_device = {0, 0, 1, 1};
  s.dims.num_experts = 4;
  const GatingTrace t(1, 1, 4, {0.4f, 0.3f, 0.2f, 0.1f});
  SelectionMatrix q(1, 1, 4);
  q.set(0, 0, 0, true);
  q.set(0, 0, 1, true);
  const auto [dq, w] = collapse_to_devices(s, q, t);
  EXPECT_TRUE(dq.selected(0, 0, 0));
  EXPECT_FALSE(dq.selected(0, 0, 1));
  EXPECT_EQ(dq.load(0, 0), 1u);
  EXPECT_NEAR(w.weight(0, 0, 0), 0.7, 1e-6);
  EXPECT_NEAR(w.weight(0, 0, 1), 0.3, 1e-6);
}

TEST(SimulatorTest, SharedDevicesRun) {
  Scenario s = small_scenario();
  s.devices.resize(3);
  s.expert_to_device = {0, 0, 0, 1, 1, 2, 2, 2};
  const auto reports = run_policies(s, small_trace(), kAllPolicies);
  for (const auto& r : reports) {
    EXPECT_TRUE(std::isfinite(r.total_latency_s));
    EXPECT_EQ(r.allocations.front().shares_hz.size(), 3u);
  }
}

TEST(SimulatorTest, ValidationErrors) {
  auto s = small_scenario();
  EXPECT_THROW(run(s, synth_trace(1, 4, 16, 6, 1.0)), ConfigError);
  EXPECT_THROW(run(s, synth_trace(1, 5, 16, 8, 1.0)), ConfigError);
  s.batches = 0;
  EXPECT_THROW(run(s, small_trace()), ConfigError);
  s = small_scenario();
  s.expert_to_device = {0, 1, 2};
  EXPECT_THROW(run(s, small_trace()), ConfigError);
}

TEST(SweepTest, NonIncreasingInBandwidth) {
  auto s = small_scenario();
  s.batches = 3;
  const std::vector<double> grid{20e6, 60e6, 100e6, 200e6};
  const auto points = sweep_bandwidth(s, small_trace(), grid, kAllPolicies);
  ASSERT_EQ(points.size(), grid.size() * 5);
  std::map<Policy, double> last;
  std::map<double, std::map<Policy, double>> at;
  for (const auto& p : points) {
    if (last.contains(p.policy)) {
      EXPECT_LE(p.latency_s, last[p.policy]);
    }
    last[p.policy] = p.latency_s;
    at[p.bandwidth_hz][p.policy] = p.latency_s;
  }
  for (auto& [b, row] : at) EXPECT_LE(row[Policy::kWdmoeFull], row[Policy::kBaselineTop2Uniform]);
}

TEST(SweepTest, RejectsBadGrid) {
  const auto s = small_scenario();
  const std::vector<double> descending{2e7, 1e7};
  EXPECT_THROW(sweep_bandwidth(s, small_trace(), descending, kAllPolicies), ConfigError);
  const std::vector<double> zero{0.0, 1e7};
  EXPECT_THROW(sweep_bandwidth(s, small_trace(), zero, kAllPolicies), ConfigError);
}

TEST(PairRatioTest, MatchesCounting) {
  RandomStream rng(5);
  SelectionMatrix q(1, 200, 6);
  for (std::size_t j = 0; j < 200; ++j)
    for (std::size_t k = 0; k < 6; ++k) q.set(0, j, k, rng.uniform() < 0.35);
  std::map<std::size_t, std::size_t> counts;
  std::size_t pairs = 0;
  for (std::size_t j = 0; j < 200; ++j) {
    std::size_t key = 0;
    for (std::size_t k = 0; k < 6; ++k)
      if (q.selected(0, j, k)) key |= std::size_t{1} << k;
    if (std::popcount(key) != 2) continue;
    ++counts[key];
    ++pairs;
  }
  std::size_t best = 0;
  for (const auto& [key, c] : counts) best = std::max(best, c);
  EXPECT_DOUBLE_EQ(expert_pair_ratio(q, 0), static_cast<double>(best) / pairs);
  EXPECT_EQ(expert_pair_ratio(SelectionMatrix(1, 3, 4), 0), 0.0);
}

TEST(PolicyNamesTest, RoundTrip) {
  for (Policy p : kAllPolicies) EXPECT_EQ(policy_from_string(to_string(p)), p);
  EXPECT_FALSE(policy_from_string("fastest").has_value());
}

}  // namespace
}  // namespace wdmoe
