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
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>

#include "wdmoe/channel.hpp"
#include "wdmoe/selection_matrix.hpp"
#include "wdmoe/trace.hpp"

namespace wdmoe {

inline constexpr double kInfiniteLatency = std::numeric_limits<double>::infinity();

struct ModelDims {
  std::uint32_t embed_dim = 4096;    // m
  std::uint32_t hidden_dim = 14336;  // m_h
  std::uint32_t quant_bits = 16;     // bits per embedding element
  std::uint32_t act_flops_per_elem = 4;
  std::uint32_t num_blocks = 32;
  std::uint32_t num_experts = 8;

  void validate() const {
    if (embed_dim == 0 || hidden_dim == 0 || num_blocks == 0 || num_experts == 0)
      throw std::domain_error("ModelDims: dimensions must be positive");
    if (quant_bits != 8 && quant_bits != 16 && quant_bits != 32)
      throw std::domain_error("ModelDims: quant_bits must be 8, 16 or 32");
  }
};

struct TokenLatency {
  double comm_s = 0.0;
  double comp_s = 0.0;
  double total_s = 0.0;

  friend bool operator==(const TokenLatency&, const TokenLatency&) = default;
};

// Size of one token embedding on the wire.
inline double token_comm_bits(const ModelDims& dims) {
  return static_cast<double>(dims.quant_bits) * dims.embed_dim;
}

// FLOPs of one expert FFN pass: 4 m m_h + 2 m_h m + eta m_h + m_h.
inline double expert_flops(const ModelDims& dims) {
  const double m = dims.embed_dim;
  const double mh = dims.hidden_dim;
  return 4.0 * m * mh + 2.0 * mh * m + static_cast<double>(dims.act_flops_per_elem) * mh + mh;
}

// Round trip of one token to device k (downlink + uplink) plus expert compute.
inline TokenLatency token_latency(const ModelDims& dims, double bandwidth_hz,
                                  const DeviceProfile& profile, const ChannelState& channel,
                                  const RadioConfig& radio) {
  if (bandwidth_hz < 0.0) throw std::domain_error("token_latency: negative bandwidth");
  const double comp = expert_flops(dims) / profile.compute_flops;
  if (bandwidth_hz == 0.0) return {kInfiniteLatency, comp, kInfiniteLatency};
  const double bits = token_comm_bits(dims);
  const double comm = bits / downlink_rate(bandwidth_hz, profile, channel, radio) +
                      bits / uplink_rate(bandwidth_hz, profile, channel, radio);
  return {comm, comp, comm + comp};
}

// t^i_k = q^i_k * t_{i,k}.
inline double device_block_latency(const SelectionMatrix& selection, std::size_t block,
                                   std::size_t device, const TokenLatency& per_token) {
  const std::size_t q = selection.load(block, device);
  return q == 0 ? 0.0 : static_cast<double>(q) * per_token.total_s;
}

// t^i: the slowest device gates the next attention layer.
inline double attention_waiting_latency(std::span<const double> per_device) {
  if (per_device.empty())
    throw std::domain_error("attention_waiting_latency: empty device list");
  return *std::max_element(per_device.begin(), per_device.end());
}

// Assigned gating weight of `device` over its block latency; 0 for an idle device.
inline double wlr(const SelectionMatrix& selection, const GatingTrace& weights, std::size_t block,
                  std::size_t device, const TokenLatency& per_token) {
  if (weights.experts() != selection.columns() || weights.tokens() != selection.tokens())
    throw std::invalid_argument("wlr: weights and selection shapes differ");
  double mass = 0.0;
  std::size_t q = 0;
  for (std::size_t j = 0; j < selection.tokens(); ++j)
    if (selection.selected(block, j, device)) {
      mass += weights.weight(block, j, device);
      ++q;
    }
  if (q == 0) return 0.0;
  return mass / (static_cast<double>(q) * per_token.total_s);
}

}  // namespace wdmoe
