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
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "wdmoe/selection_matrix.hpp"
#include "wdmoe/trace.hpp"

namespace wdmoe {

struct SelectionPolicyConfig {
  std::size_t top_k = 2;
  double theta_init = 0.5;
  double theta_step = 0.1;
  double wlr_growth = 1.01;
  std::size_t wlr_window_blocks = 0;  // 0 = all blocks
  bool stop_rule = true;
  std::size_t max_rounds = 0;  // 0 = until no token can drop further

  void validate(std::size_t experts) const {
    if (top_k < 1 || top_k > experts)
      throw std::invalid_argument("SelectionPolicyConfig: top_k must be in [1, n]");
    if (!(theta_init >= -1.0 && theta_init <= 1.0))
      throw std::invalid_argument("SelectionPolicyConfig: theta_init must be in [-1, 1]");
    if (!(theta_step > 0.0))
      throw std::invalid_argument("SelectionPolicyConfig: theta_step must be > 0");
    if (!(wlr_growth > 0.0))
      throw std::invalid_argument("SelectionPolicyConfig: wlr_growth must be > 0");
  }
};

// S(w, t) = w.t / (|w| |t|).
inline double cosine_similarity(std::span<const double> w, std::span<const double> t) {
  if (w.size() != t.size()) throw std::domain_error("cosine_similarity: length mismatch");
  double dot = 0.0, ww = 0.0, tt = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    dot += w[k] * t[k];
    ww += w[k] * w[k];
    tt += t[k] * t[k];
  }
  if (ww == 0.0 || tt == 0.0) throw std::domain_error("cosine_similarity: zero vector");
  return std::clamp(dot / (std::sqrt(ww) * std::sqrt(tt)), -1.0, 1.0);
}

namespace detail {

// Expert indices by descending weight, lower index first on ties.
inline std::vector<std::size_t> rank_experts(std::span<const float> row) {
  std::vector<std::size_t> order(row.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  return order;
}

// Lowest-ranked selected expert of a row.
inline std::size_t weakest_selected(const SelectionMatrix& q, const GatingTrace& trace,
                                    std::size_t block, std::size_t token) {
  const auto order = rank_experts(trace.row(block, token));
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if (q.selected(block, token, *it)) return *it;
  throw std::logic_error("weakest_selected: empty row");
}

// Sum over blocks [0, window) of every column's WLR, with per-token latency
// `latency[k]` for column k.
inline double wlr_sum(const SelectionMatrix& q, const GatingTrace& trace,
                      std::span<const double> latency, std::size_t window) {
  const std::size_t blocks = window == 0 ? q.blocks() : std::min(window, q.blocks());
  double total = 0.0;
  for (std::size_t i = 0; i < blocks; ++i)
    for (std::size_t k = 0; k < q.columns(); ++k) {
      double mass = 0.0;
      std::size_t load = 0;
      for (std::size_t j = 0; j < q.tokens(); ++j)
        if (q.selected(i, j, k)) {
          mass += trace.weight(i, j, k);
          ++load;
        }
      if (load > 0) total += mass / (static_cast<double>(load) * latency[k]);
    }
  return total;
}

}  // namespace detail

inline SelectionMatrix top_k_select(const GatingTrace& trace, std::size_t k) {
  if (k < 1 || k > trace.experts()) throw std::invalid_argument("top_k_select: K out of range");
  SelectionMatrix q(trace.blocks(), trace.tokens(), trace.experts());
  for (std::size_t i = 0; i < trace.blocks(); ++i)
    for (std::size_t j = 0; j < trace.tokens(); ++j) {
      const auto order = detail::rank_experts(trace.row(i, j));
      for (std::size_t r = 0; r < k; ++r) q.set(i, j, order[r], true);
    }
  return q;
}

struct WdmoeSelection {
  SelectionMatrix selection;
  double initial_wlr = 0.0;    // windowed WLR sum of the Top-K start
  double loop_exit_wlr = 0.0;  // windowed WLR sum when the threshold loop ended
  double final_wlr = 0.0;      // after the closing similarity pass
  double final_theta = 0.0;
  std::size_t rounds = 0;
  bool stopped_by_wlr = false;
};

// Similarity-threshold expert dropping. `latency` holds the per-token latency
// of every expert column under an even bandwidth split; it stays fixed for the
// whole loop.
inline WdmoeSelection wdmoe_select_traced(const GatingTrace& trace,
                                          std::span<const double> latency,
                                          const SelectionPolicyConfig& config) {
  config.validate(trace.experts());
  if (latency.size() != trace.experts())
    throw std::invalid_argument("wdmoe_select: one latency per expert required");
  for (double t : latency)
    if (!(t > 0.0) || !std::isfinite(t))
      throw std::invalid_argument("wdmoe_select: latencies must be finite and > 0");

  WdmoeSelection out;
  out.selection = top_k_select(trace, config.top_k);
  SelectionMatrix& q = out.selection;
  const std::size_t n = trace.experts();
  std::vector<double> masked(n);

  auto has_droppable = [&] {
    for (std::size_t i = 0; i < q.blocks(); ++i)
      for (std::size_t j = 0; j < q.tokens(); ++j)
        if (q.row_count(i, j) >= 2) return true;
    return false;
  };
  // One sweep over all tokens: drop the weakest selected expert of every
  // token whose masked weights are at most theta-similar to the latencies.
  auto drop_pass = [&](double theta) {
    for (std::size_t i = 0; i < q.blocks(); ++i)
      for (std::size_t j = 0; j < q.tokens(); ++j) {
        if (q.row_count(i, j) < 2) continue;
        for (std::size_t k = 0; k < n; ++k)
          masked[k] = q.selected(i, j, k) ? trace.weight(i, j, k) : 0.0;
        if (cosine_similarity(masked, latency) <= theta)
          q.set(i, j, detail::weakest_selected(q, trace, i, j), false);
      }
  };

  out.initial_wlr = detail::wlr_sum(q, trace, latency, config.wlr_window_blocks);
  double theta = config.theta_init;
  for (;;) {
    const double current = detail::wlr_sum(q, trace, latency, config.wlr_window_blocks);
    if (config.stop_rule && current > config.wlr_growth * out.initial_wlr) {
      out.stopped_by_wlr = true;
      break;
    }
    if (!has_droppable()) break;
    if (config.max_rounds != 0 && out.rounds >= config.max_rounds) break;
    drop_pass(theta);
    theta += config.theta_step;
    ++out.rounds;
  }
  out.loop_exit_wlr = detail::wlr_sum(q, trace, latency, config.wlr_window_blocks);
  drop_pass(theta);
  out.final_theta = theta;
  out.final_wlr = detail::wlr_sum(q, trace, latency, config.wlr_window_blocks);
  return out;
}

inline SelectionMatrix wdmoe_select(const GatingTrace& trace, std::span<const double> latency,
                                    const SelectionPolicyConfig& config) {
  return wdmoe_select_traced(trace, latency, config).selection;
}

// Running mean of observed latency per token, per device.
class LatencyHistory {
 public:
  LatencyHistory() = default;
  explicit LatencyHistory(std::size_t devices) : mean_(devices, 0.0), count_(devices, 0) {}

  std::size_t devices() const { return mean_.size(); }
  double mean_per_token(std::size_t device) const { return mean_.at(device); }
  std::uint64_t samples(std::size_t device) const { return count_.at(device); }
  bool empty() const {
    return std::all_of(count_.begin(), count_.end(), [](auto c) { return c == 0; });
  }

  void record(std::size_t device, double observed_latency_s, std::size_t tokens_processed) {
    if (tokens_processed < 1)
      throw std::invalid_argument("LatencyHistory: tokens_processed must be >= 1");
    if (!(observed_latency_s >= 0.0) || !std::isfinite(observed_latency_s))
      throw std::invalid_argument("LatencyHistory: latency must be finite and >= 0");
    const double per_token = observed_latency_s / static_cast<double>(tokens_processed);
    auto& n = count_.at(device);
    ++n;
    mean_[device] += (per_token - mean_[device]) / static_cast<double>(n);
  }

 private:
  std::vector<double> mean_;
  std::vector<std::uint64_t> count_;
};

inline LatencyHistory update_history(LatencyHistory history, std::size_t device,
                                     double observed_latency_s, std::size_t tokens_processed) {
  history.record(device, observed_latency_s, tokens_processed);
  return history;
}

enum class QuartileMethod {
  kLinear,       // linear interpolation between order statistics
  kLowerNearest  // lower order statistic, no interpolation
};

// p-quantile of `values`. kLinear places it at position p (N - 1) of the
// sorted sample.
inline double quantile(std::vector<double> values, double p,
                       QuartileMethod method = QuartileMethod::kLinear) {
  if (values.empty()) throw std::domain_error("quantile: empty sample");
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  if (method == QuartileMethod::kLowerNearest || lo + 1 >= values.size()) return values[lo];
  return values[lo] + (pos - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

struct TestbedDecision {
  SelectionMatrix selection;  // single block
  std::vector<double> predicted_s;
  std::size_t bottleneck = 0;
  double third_quartile_s = 0.0;
  bool triggered = false;
  std::size_t drop_bound = 0;
  std::vector<std::size_t> dropped_tokens;
};

inline constexpr double kBottleneckFactor = 1.5;
inline constexpr double kCandidateWeightFraction = 0.2;

// Bottleneck offloading for one block: predicts each device's block latency
// from its mean latency per token, and if the slowest device exceeds 1.5x the
// third quartile, removes up to floor((t_max - Q3) / tbar) low-weight tokens
// from it.
inline TestbedDecision testbed_decide(const GatingTrace& trace, const LatencyHistory& history,
                                      std::size_t block, std::size_t top_k = 2,
                                      QuartileMethod quartile = QuartileMethod::kLinear) {
  if (block >= trace.blocks()) throw std::out_of_range("testbed_select: block out of range");
  if (history.devices() != trace.experts())
    throw std::invalid_argument("testbed_select: history size must match expert count");
  if (history.empty()) throw std::invalid_argument("testbed_select: empty latency history");
  if (top_k < 1 || top_k > trace.experts())
    throw std::invalid_argument("testbed_select: K out of range");

  const std::size_t n = trace.experts();
  const std::size_t tokens = trace.tokens();
  TestbedDecision d;
  d.selection = SelectionMatrix(1, tokens, n);
  std::vector<std::vector<std::size_t>> order(tokens);
  for (std::size_t j = 0; j < tokens; ++j) {
    order[j] = detail::rank_experts(trace.row(block, j));
    for (std::size_t r = 0; r < top_k; ++r) d.selection.set(0, j, order[j][r], true);
  }

  d.predicted_s.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t load = d.selection.load(0, k);
    if (load > 0 && history.samples(k) == 0)
      throw std::invalid_argument("testbed_select: no latency history for active device " +
                                  std::to_string(k));
    d.predicted_s[k] = load == 0 ? 0.0 : history.mean_per_token(k) * static_cast<double>(load);
  }
  d.bottleneck = static_cast<std::size_t>(
      std::max_element(d.predicted_s.begin(), d.predicted_s.end()) - d.predicted_s.begin());
  d.third_quartile_s = quantile(d.predicted_s, 0.75, quartile);
  const double peak = d.predicted_s[d.bottleneck];
  d.triggered = peak > kBottleneckFactor * d.third_quartile_s;
  if (!d.triggered) return d;

  const std::size_t hot = d.bottleneck;
  const double tbar = history.mean_per_token(hot);
  d.drop_bound = static_cast<std::size_t>(std::floor((peak - d.third_quartile_s) / tbar));

  double mass = 0.0;
  for (std::size_t j = 0; j < tokens; ++j)
    if (d.selection.selected(0, j, hot)) mass += trace.weight(block, j, hot);
  const double cutoff = kCandidateWeightFraction * mass;

  std::vector<std::size_t> candidates;
  for (std::size_t j = 0; j < tokens; ++j) {
    if (!d.selection.selected(0, j, hot) || d.selection.row_count(0, j) < 2) continue;
    std::size_t weakest = n;
    for (auto it = order[j].rbegin(); it != order[j].rend(); ++it)
      if (d.selection.selected(0, j, *it)) {
        weakest = *it;
        break;
      }
    if (weakest == hot && trace.weight(block, j, hot) < cutoff) candidates.push_back(j);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
    return trace.weight(block, a, hot) < trace.weight(block, b, hot);
  });
  if (candidates.size() > d.drop_bound) candidates.resize(d.drop_bound);
  for (std::size_t j : candidates) d.selection.set(0, j, hot, false);
  d.dropped_tokens = std::move(candidates);
  std::sort(d.dropped_tokens.begin(), d.dropped_tokens.end());
  return d;
}

inline SelectionMatrix testbed_select(const GatingTrace& trace, const LatencyHistory& history,
                                      std::size_t block, std::size_t top_k = 2) {
  return testbed_decide(trace, history, block, top_k).selection;
}

}  // namespace wdmoe
