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
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "wdmoe/bandwidth.hpp"
#include "wdmoe/channel.hpp"
#include "wdmoe/latency.hpp"
#include "wdmoe/rng.hpp"
#include "wdmoe/selection.hpp"
#include "wdmoe/selection_matrix.hpp"
#include "wdmoe/trace.hpp"

namespace wdmoe {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Policy {
  kBaselineTop2Uniform,  // Top-K, even bandwidth split
  kWdmoeFull,            // similarity dropping + optimized bandwidth
  kWdmoeNoSelection,     // Top-K + optimized bandwidth
  kWdmoeNoBandwidth,     // similarity dropping + even split
  kTestbed,              // bottleneck offloading + even split
};

inline constexpr Policy kAllPolicies[] = {Policy::kBaselineTop2Uniform, Policy::kWdmoeFull,
                                          Policy::kWdmoeNoSelection, Policy::kWdmoeNoBandwidth,
                                          Policy::kTestbed};

inline std::string_view to_string(Policy p) {
  switch (p) {
    case Policy::kBaselineTop2Uniform: return "baseline_top2_uniform";
    case Policy::kWdmoeFull: return "wdmoe_full";
    case Policy::kWdmoeNoSelection: return "wdmoe_no_selection";
    case Policy::kWdmoeNoBandwidth: return "wdmoe_no_bandwidth";
    case Policy::kTestbed: return "testbed";
  }
  return "unknown";
}

inline std::optional<Policy> policy_from_string(std::string_view s) {
  for (Policy p : kAllPolicies)
    if (to_string(p) == s) return p;
  return std::nullopt;
}

enum class FadingMode {
  kPerBatch,  // fresh Rayleigh draw every batch
  kFrozen,    // batch 0's draw reused by every batch
  kNone,      // amplitudes pinned to the path-loss mean
};

inline std::string_view to_string(FadingMode m) {
  switch (m) {
    case FadingMode::kPerBatch: return "per_batch";
    case FadingMode::kFrozen: return "frozen";
    case FadingMode::kNone: return "none";
  }
  return "unknown";
}

inline std::optional<FadingMode> fading_mode_from_string(std::string_view s) {
  for (FadingMode m : {FadingMode::kPerBatch, FadingMode::kFrozen, FadingMode::kNone})
    if (to_string(m) == s) return m;
  return std::nullopt;
}

struct Scenario {
  RadioConfig radio;
  std::vector<DeviceProfile> devices;
  ModelDims dims;
  Policy policy = Policy::kWdmoeFull;
  std::uint64_t seed = 1;
  std::size_t batches = 100;
  FadingMode fading_mode = FadingMode::kPerBatch;
  SelectionPolicyConfig selection;
  // expert_to_device[e] hosts expert e; empty means expert k on device k.
  std::vector<std::size_t> expert_to_device;
  double solver_tolerance = 1e-9;
  std::size_t threads = 0;  // 0 = hardware concurrency

  std::size_t device_of(std::size_t expert) const {
    return expert_to_device.empty() ? expert : expert_to_device[expert];
  }

  void validate(const GatingTrace& trace) const {
    radio.validate();
    dims.validate();
    if (devices.empty()) throw ConfigError("scenario: at least one device required");
    for (const auto& d : devices) d.validate();
    if (batches == 0) throw ConfigError("scenario: batches must be >= 1");
    if (trace.experts() != dims.num_experts)
      throw ConfigError("scenario: trace has " + std::to_string(trace.experts()) +
                        " experts, dims.num_experts is " + std::to_string(dims.num_experts));
    if (trace.blocks() != dims.num_blocks)
      throw ConfigError("scenario: trace has " + std::to_string(trace.blocks()) +
                        " blocks, dims.num_blocks is " + std::to_string(dims.num_blocks));
    if (expert_to_device.empty()) {
      if (devices.size() != dims.num_experts)
        throw ConfigError("scenario: identity expert map needs one device per expert");
    } else {
      if (expert_to_device.size() != dims.num_experts)
        throw ConfigError("scenario: expert_to_device must list every expert");
      for (auto d : expert_to_device)
        if (d >= devices.size()) throw ConfigError("scenario: expert_to_device out of range");
    }
    try {
      selection.validate(dims.num_experts);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (!(solver_tolerance > 0.0)) throw ConfigError("scenario: solver_tolerance must be > 0");
  }
};

struct BatchResult {
  std::vector<double> per_block_latency_s;
  double total_latency_s = 0.0;
  double wlr_total = 0.0;
  std::size_t active_pairs = 0;
  BandwidthAllocation allocation;
};

// Per-policy metrics. Scalar fields are means over batches.
struct LatencyReport {
  Policy policy = Policy::kWdmoeFull;
  std::vector<double> per_block_latency_s;
  double total_latency_s = 0.0;
  double total_latency_ci95_s = 0.0;
  double wlr_total = 0.0;
  double active_pairs = 0.0;
  std::vector<BandwidthAllocation> allocations;  // one per batch
  std::vector<double> batch_total_latency_s;
};

inline constexpr std::uint64_t kChannelStream = 0xC4A7;

// Channels of every device for one batch; identical across policies.
inline std::vector<ChannelState> draw_channels(const Scenario& s, std::size_t batch) {
  const std::size_t key = s.fading_mode == FadingMode::kPerBatch ? batch : 0;
  RandomStream rng(s.seed, key, kChannelStream);
  const FadingKind kind = s.fading_mode == FadingMode::kNone ? FadingKind::kNone
                                                              : FadingKind::kRayleigh;
  std::vector<ChannelState> out;
  out.reserve(s.devices.size());
  for (const auto& d : s.devices) out.push_back(sample_channel(d, s.radio, rng, kind));
  return out;
}

// Folds an expert-level selection onto devices: a device serves a token once
// if it hosts any selected expert, and carries the summed weight of its
// experts.
inline std::pair<SelectionMatrix, GatingTrace> collapse_to_devices(const Scenario& s,
                                                                   const SelectionMatrix& q,
                                                                   const GatingTrace& trace) {
  const std::size_t devices = s.devices.size();
  SelectionMatrix dq(q.blocks(), q.tokens(), devices);
  std::vector<float> w(q.blocks() * q.tokens() * devices, 0.0f);
  std::vector<double> acc(devices);
  for (std::size_t i = 0; i < q.blocks(); ++i)
    for (std::size_t j = 0; j < q.tokens(); ++j) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t e = 0; e < q.columns(); ++e) {
        const std::size_t d = s.device_of(e);
        acc[d] += trace.weight(i, j, e);
        if (q.selected(i, j, e)) dq.set(i, j, d, true);
      }
      std::span<float> row(w.data() + (i * q.tokens() + j) * devices, devices);
      for (std::size_t d = 0; d < devices; ++d) row[d] = static_cast<float>(acc[d]);
      detail::normalize_row(row);
    }
  return {std::move(dq), GatingTrace(q.blocks(), q.tokens(), devices, std::move(w))};
}

namespace detail {

inline bool uses_similarity_selection(Policy p) {
  return p == Policy::kWdmoeFull || p == Policy::kWdmoeNoBandwidth;
}

inline bool uses_bandwidth_solver(Policy p) {
  return p == Policy::kWdmoeFull || p == Policy::kWdmoeNoSelection;
}

// Expert-level selection for one batch.
inline SelectionMatrix select_for_batch(const Scenario& s, Policy policy,
                                        const GatingTrace& trace,
                                        std::span<const double> expert_latency) {
  if (uses_similarity_selection(policy)) return wdmoe_select(trace, expert_latency, s.selection);
  if (policy != Policy::kTestbed) return top_k_select(trace, s.selection.top_k);

  // Calibration sample of one token per expert, then one observation per
  // block of what each expert actually served.
  LatencyHistory history(trace.experts());
  for (std::size_t e = 0; e < trace.experts(); ++e) history.record(e, expert_latency[e], 1);
  SelectionMatrix q(trace.blocks(), trace.tokens(), trace.experts());
  for (std::size_t i = 0; i < trace.blocks(); ++i) {
    const SelectionMatrix block = testbed_select(trace, history, i, s.selection.top_k);
    q.assign_block(i, block);
    for (std::size_t e = 0; e < trace.experts(); ++e) {
      const std::size_t load = block.load(0, e);
      if (load > 0) history.record(e, static_cast<double>(load) * expert_latency[e], load);
    }
  }
  return q;
}

}  // namespace detail

inline BatchResult run_batch(const Scenario& s, Policy policy, const GatingTrace& trace,
                             std::span<const ChannelState> channels) {
  const std::size_t devices = s.devices.size();
  const double even_share = s.radio.total_bandwidth_hz / static_cast<double>(devices);

  std::vector<double> expert_latency(trace.experts());
  {
    std::vector<double> device_latency(devices);
    for (std::size_t k = 0; k < devices; ++k)
      device_latency[k] =
          token_latency(s.dims, even_share, s.devices[k], channels[k], s.radio).total_s;
    for (std::size_t e = 0; e < trace.experts(); ++e)
      expert_latency[e] = device_latency[s.device_of(e)];
  }

  const SelectionMatrix expert_q = detail::select_for_batch(s, policy, trace, expert_latency);

  SelectionMatrix q;
  GatingTrace weights;
  if (s.expert_to_device.empty()) {
    q = expert_q;
    weights = trace;
  } else {
    std::tie(q, weights) = collapse_to_devices(s, expert_q, trace);
  }

  BatchResult r;
  r.active_pairs = expert_q.active_pairs();
  const BandwidthProblem problem{q, s.devices, channels, s.dims, s.radio};
  if (detail::uses_bandwidth_solver(policy)) {
    SolverOptions opts;
    opts.tolerance = s.solver_tolerance;
    r.allocation = allocate(problem, opts).first;
  } else {
    r.allocation = uniform_allocation(devices, s.radio.total_bandwidth_hz);
  }

  std::vector<TokenLatency> per_token(devices);
  for (std::size_t k = 0; k < devices; ++k)
    per_token[k] =
        token_latency(s.dims, r.allocation.shares_hz[k], s.devices[k], channels[k], s.radio);

  r.per_block_latency_s.resize(q.blocks());
  std::vector<double> per_device(devices);
  for (std::size_t i = 0; i < q.blocks(); ++i) {
    for (std::size_t k = 0; k < devices; ++k) {
      per_device[k] = device_block_latency(q, i, k, per_token[k]);
      r.wlr_total += wlr(q, weights, i, k, per_token[k]);
    }
    r.per_block_latency_s[i] = attention_waiting_latency(per_device);
    r.total_latency_s += r.per_block_latency_s[i];
  }
  return r;
}

inline std::size_t resolve_threads(std::size_t requested, std::size_t work) {
  std::size_t n = requested == 0 ? std::max(1u, std::thread::hardware_concurrency()) : requested;
  return std::max<std::size_t>(1, std::min(n, work));
}

inline LatencyReport aggregate(Policy policy, std::vector<BatchResult>& batches) {
  LatencyReport rep;
  rep.policy = policy;
  const double count = static_cast<double>(batches.size());
  const std::size_t blocks = batches.front().per_block_latency_s.size();
  rep.per_block_latency_s.assign(blocks, 0.0);
  for (auto& b : batches) {
    for (std::size_t i = 0; i < blocks; ++i) rep.per_block_latency_s[i] += b.per_block_latency_s[i];
    rep.wlr_total += b.wlr_total;
    rep.active_pairs += static_cast<double>(b.active_pairs);
    rep.batch_total_latency_s.push_back(b.total_latency_s);
    rep.allocations.push_back(std::move(b.allocation));
  }
  for (auto& v : rep.per_block_latency_s) v /= count;
  for (double v : rep.per_block_latency_s) rep.total_latency_s += v;
  rep.wlr_total /= count;
  rep.active_pairs /= count;
  if (batches.size() > 1) {
    double mean = 0.0, var = 0.0;
    for (double v : rep.batch_total_latency_s) mean += v / count;
    for (double v : rep.batch_total_latency_s) var += (v - mean) * (v - mean);
    var /= count - 1.0;
    rep.total_latency_ci95_s = 1.96 * std::sqrt(var / count);
  }
  return rep;
}

// Runs every policy on the same trace and per-batch channels. Batches are
// spread over worker threads; each writes only its own slot.
inline std::vector<LatencyReport> run_policies(const Scenario& s, const GatingTrace& trace,
                                               std::span<const Policy> policies) {
  s.validate(trace);
  if (policies.empty()) throw ConfigError("run: at least one policy required");
  const std::size_t jobs = s.batches * policies.size();
  std::vector<std::vector<BatchResult>> slots(policies.size(),
                                              std::vector<BatchResult>(s.batches));
  std::vector<std::vector<ChannelState>> channels(s.batches);
  for (std::size_t b = 0; b < s.batches; ++b) channels[b] = draw_channels(s, b);

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (std::size_t job; (job = next.fetch_add(1)) < jobs && !failed;) {
      const std::size_t p = job / s.batches, b = job % s.batches;
      try {
        slots[p][b] = run_batch(s, policies[p], trace, channels[b]);
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
      }
    }
  };
  const std::size_t threads = resolve_threads(s.threads, jobs);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<LatencyReport> out;
  for (std::size_t p = 0; p < policies.size(); ++p) out.push_back(aggregate(policies[p], slots[p]));
  return out;
}

inline LatencyReport run(const Scenario& s, const GatingTrace& trace) {
  const Policy one[] = {s.policy};
  return run_policies(s, trace, one).front();
}

struct SweepPoint {
  double bandwidth_hz = 0.0;
  Policy policy = Policy::kWdmoeFull;
  double latency_s = 0.0;
};

inline std::vector<SweepPoint> sweep_bandwidth(const Scenario& s, const GatingTrace& trace,
                                               std::span<const double> bandwidths_hz,
                                               std::span<const Policy> policies) {
  for (std::size_t v = 0; v < bandwidths_hz.size(); ++v) {
    if (!(bandwidths_hz[v] > 0.0)) throw ConfigError("sweep: bandwidths must be > 0");
    if (v > 0 && !(bandwidths_hz[v] > bandwidths_hz[v - 1]))
      throw ConfigError("sweep: bandwidths must be strictly ascending");
  }
  std::vector<SweepPoint> out;
  Scenario point = s;
  for (double b : bandwidths_hz) {
    point.radio.total_bandwidth_hz = b;
    const auto reports = run_policies(point, trace, policies);
    for (const auto& r : reports) out.push_back({b, r.policy, r.total_latency_s});
  }
  return out;
}

// Largest share of one unordered column pair among tokens that select exactly
// two columns in `block`; 0 when no such token exists.
inline double expert_pair_ratio(const SelectionMatrix& q, std::size_t block) {
  if (block >= q.blocks()) throw std::out_of_range("expert_pair_ratio: block");
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> counts;
  std::size_t pairs = 0;
  for (std::size_t j = 0; j < q.tokens(); ++j) {
    if (q.row_count(block, j) != 2) continue;
    std::size_t first = q.columns(), second = q.columns();
    for (std::size_t k = 0; k < q.columns(); ++k)
      if (q.selected(block, j, k)) (first == q.columns() ? first : second) = k;
    ++counts[{first, second}];
    ++pairs;
  }
  if (pairs == 0) return 0.0;
  std::size_t best = 0;
  for (const auto& [pair, c] : counts) best = std::max(best, c);
  return static_cast<double>(best) / static_cast<double>(pairs);
}

// Reference heterogeneous deployment: 8 devices from 10 m to 800 m with mixed
// compute, 3.5 GHz carrier, 100 MHz, 10 W / 0.2 W transmit power.
inline Scenario default_scenario() {
  Scenario s;
  const double distance_m[] = {10.0, 30.0, 60.0, 120.0, 250.0, 400.0, 600.0, 800.0};
  const double flops[] = {8e12, 2e12, 6e12, 0.5e12, 5e12, 1e12, 7e12, 0.8e12};
  for (std::size_t k = 0; k < 8; ++k)
    s.devices.push_back({k, distance_m[k], 10.0, 0.2, flops[k]});
  return s;
}

}  // namespace wdmoe
