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
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "wdmoe/bandwidth.hpp"
#include "wdmoe/latency.hpp"
#include "wdmoe/selection_matrix.hpp"
#include "wdmoe/trace.hpp"

// Brute-force references for the allocator and the selection policy. They
// only reuse the latency primitives, never the solver or policy code paths.
namespace wdmoe::oracle {

template <typename Point>
struct OracleResult {
  double best_value = 0.0;
  Point best_point{};
  std::size_t evaluations = 0;
};

inline constexpr std::size_t kMaxGridDevices = 3;
inline constexpr std::size_t kMaxGridSteps = 2000;
inline constexpr std::size_t kRefineSubdivisions = 64;

// Summed waiting latency recomputed from scratch for one allocation.
inline double evaluate_allocation(std::span<const double> shares_hz, const BandwidthProblem& p) {
  const std::size_t devices = p.devices.size();
  std::vector<double> per_token(devices, 0.0);
  for (std::size_t k = 0; k < devices; ++k)
    per_token[k] = token_latency(p.dims, shares_hz[k], p.devices[k], p.channels[k], p.radio).total_s;
  double sum = 0.0;
  for (std::size_t i = 0; i < p.selection.blocks(); ++i) {
    double slowest = 0.0;
    for (std::size_t k = 0; k < devices; ++k) {
      std::size_t tokens = 0;
      for (std::size_t j = 0; j < p.selection.tokens(); ++j)
        tokens += p.selection.selected(i, j, k) ? 1 : 0;
      if (tokens != 0) slowest = std::max(slowest, per_token[k] * static_cast<double>(tokens));
    }
    sum += slowest;
  }
  return sum;
}

// Exhaustive search over the lattice {B * c / steps}, then one refinement
// level on a 64x finer lattice within one coarse step of the best point.
inline OracleResult<BandwidthAllocation> grid_search_allocation(const BandwidthProblem& p,
                                                               std::size_t steps) {
  p.validate();
  const std::size_t devices = p.devices.size();
  if (devices > kMaxGridDevices)
    throw std::invalid_argument("grid_search_allocation: at most 3 devices supported");
  if (steps < 1 || steps > kMaxGridSteps)
    throw std::invalid_argument("grid_search_allocation: steps must be in [1, 2000]");
  const double total = p.radio.total_bandwidth_hz;

  OracleResult<BandwidthAllocation> out;
  out.best_value = std::numeric_limits<double>::infinity();
  out.best_point.shares_hz.assign(devices, total / static_cast<double>(devices));
  std::vector<double> shares(devices);

  // Visits every point whose leading coordinates are lo + c * h (c in
  // [0, count]) and whose last coordinate takes the remainder.
  auto scan = [&](std::span<const double> lo, double h, std::size_t count) {
    auto visit = [&](auto& self, std::size_t axis, double used) -> void {
      if (axis + 1 == devices) {
        const double rest = total - used;
        if (rest < -1e-9 * total) return;
        shares[axis] = std::max(rest, 0.0);
        const double v = evaluate_allocation(shares, p);
        ++out.evaluations;
        if (v < out.best_value) {
          out.best_value = v;
          out.best_point.shares_hz = shares;
        }
        return;
      }
      for (std::size_t c = 0; c <= count; ++c) {
        const double value = lo[axis] + static_cast<double>(c) * h;
        if (value < 0.0) continue;
        if (used + value > total * (1.0 + 1e-12)) break;
        shares[axis] = value;
        self(self, axis + 1, used + value);
      }
    };
    visit(visit, 0, 0.0);
  };

  const double h = total / static_cast<double>(steps);
  const std::vector<double> origin(devices, 0.0);
  scan(origin, h, steps);

  if (devices > 1) {
    std::vector<double> lo(devices);
    for (std::size_t k = 0; k < devices; ++k) lo[k] = out.best_point.shares_hz[k] - h;
    scan(lo, h / static_cast<double>(kRefineSubdivisions), 2 * kRefineSubdivisions);
  }
  return out;
}

inline constexpr std::size_t kMaxExhaustiveTokens = 4;
inline constexpr std::size_t kMaxExhaustiveExperts = 4;

// Sum over columns of (assigned weight / (load * latency)) for one block.
inline double evaluate_selection(const SelectionMatrix& q, const GatingTrace& trace,
                                 std::size_t block, std::span<const double> latency) {
  double total = 0.0;
  for (std::size_t k = 0; k < q.columns(); ++k) {
    double mass = 0.0;
    double count = 0.0;
    for (std::size_t j = 0; j < q.tokens(); ++j)
      if (q.selected(0, j, k)) {
        mass += trace.weight(block, j, k);
        count += 1.0;
      }
    if (count > 0.0) total += mass / (count * latency[k]);
  }
  return total;
}

// Enumerates every single-block selection whose rows are non-empty subsets of
// the row's Top-K support and returns the WLR-sum maximizer.
inline OracleResult<SelectionMatrix> exhaustive_selection(const GatingTrace& trace,
                                                          std::size_t block,
                                                          std::span<const double> latency,
                                                          std::size_t top_k) {
  const std::size_t tokens = trace.tokens();
  const std::size_t experts = trace.experts();
  if (tokens > kMaxExhaustiveTokens || experts > kMaxExhaustiveExperts)
    throw std::invalid_argument("exhaustive_selection: instance exceeds J <= 4, n <= 4");
  if (block >= trace.blocks()) throw std::out_of_range("exhaustive_selection: block");
  if (latency.size() != experts || top_k < 1 || top_k > experts)
    throw std::invalid_argument("exhaustive_selection: bad latency vector or K");

  // Support of each row as a bitmask over experts.
  std::vector<unsigned> support(tokens, 0);
  for (std::size_t j = 0; j < tokens; ++j) {
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t k = 0; k < experts; ++k) ranked.emplace_back(-trace.weight(block, j, k), k);
    std::sort(ranked.begin(), ranked.end());
    for (std::size_t r = 0; r < top_k; ++r) support[j] |= 1u << ranked[r].second;
  }
  std::vector<std::vector<unsigned>> options(tokens);
  for (std::size_t j = 0; j < tokens; ++j)
    for (unsigned mask = 1; mask < (1u << experts); ++mask)
      if ((mask & ~support[j]) == 0) options[j].push_back(mask);

  OracleResult<SelectionMatrix> out;
  out.best_value = -std::numeric_limits<double>::infinity();
  SelectionMatrix q(1, tokens, experts);
  std::vector<std::size_t> pick(tokens, 0);
  for (;;) {
    for (std::size_t j = 0; j < tokens; ++j)
      for (std::size_t k = 0; k < experts; ++k) q.set(0, j, k, (options[j][pick[j]] >> k) & 1u);
    const double v = evaluate_selection(q, trace, block, latency);
    ++out.evaluations;
    if (v > out.best_value) {
      out.best_value = v;
      out.best_point = q;
    }
    std::size_t j = 0;
    while (j < tokens && ++pick[j] == options[j].size()) pick[j++] = 0;
    if (j == tokens) break;
  }
  return out;
}

}  // namespace wdmoe::oracle
