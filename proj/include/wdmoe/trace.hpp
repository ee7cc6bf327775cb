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
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "wdmoe/rng.hpp"

namespace wdmoe {

class TraceFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TraceValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tolerances on the per-row probability mass.
inline constexpr double kRowSumTolerance = 1e-6;
inline constexpr double kRowRenormalizeTolerance = 1e-3;

namespace detail {

inline double row_sum(std::span<const float> row) {
  double s = 0.0;
  for (float v : row) s += v;
  return s;
}

// Rescales a row to unit mass and folds the float rounding residue into the
// largest entry.
inline void normalize_row(std::span<float> row) {
  const double s = row_sum(row);
  std::size_t arg_max = 0;
  for (std::size_t k = 0; k < row.size(); ++k) {
    row[k] = static_cast<float>(row[k] / s);
    if (row[k] > row[arg_max]) arg_max = k;
  }
  double rest = 0.0;
  for (std::size_t k = 0; k < row.size(); ++k)
    if (k != arg_max) rest += row[k];
  row[arg_max] = static_cast<float>(std::max(0.0, 1.0 - rest));
}

}  // namespace detail

// Gating-network weights w[i][j][k] for I blocks, J tokens and n experts,
// stored as 32-bit floats in block-major, token-major, expert-minor order.
// Every row is a probability vector.
class GatingTrace {
 public:
  GatingTrace() = default;

  GatingTrace(std::size_t blocks, std::size_t tokens, std::size_t experts,
              std::vector<float> weights)
      : blocks_(blocks), tokens_(tokens), experts_(experts), weights_(std::move(weights)) {
    if (blocks_ == 0 || tokens_ == 0 || experts_ == 0)
      throw TraceValidationError("GatingTrace: dimensions must be positive");
    if (weights_.size() != blocks_ * tokens_ * experts_)
      throw TraceValidationError("GatingTrace: weight count does not match dimensions");
    for (std::size_t i = 0; i < blocks_; ++i)
      for (std::size_t j = 0; j < tokens_; ++j) {
        auto r = row(i, j);
        for (float v : r)
          if (!(v >= 0.0f) || !std::isfinite(v))
            throw TraceValidationError("GatingTrace: weights must be finite and >= 0 (block " +
                                       std::to_string(i) + ", token " + std::to_string(j) + ")");
        if (std::abs(detail::row_sum(r) - 1.0) > kRowSumTolerance)
          throw TraceValidationError("GatingTrace: row (" + std::to_string(i) + ", " +
                                     std::to_string(j) + ") does not sum to 1");
      }
  }

  std::size_t blocks() const { return blocks_; }
  std::size_t tokens() const { return tokens_; }
  std::size_t experts() const { return experts_; }

  double weight(std::size_t block, std::size_t token, std::size_t expert) const {
    return weights_[(block * tokens_ + token) * experts_ + expert];
  }

  std::span<const float> row(std::size_t block, std::size_t token) const {
    return {weights_.data() + (block * tokens_ + token) * experts_, experts_};
  }

  std::span<const float> data() const { return weights_; }

  friend bool operator==(const GatingTrace&, const GatingTrace&) = default;

 private:
  std::size_t blocks_ = 0;
  std::size_t tokens_ = 0;
  std::size_t experts_ = 0;
  std::vector<float> weights_;
};

// Binary layout: "WDMT", u32 version, u32 I, u32 J, u32 n, u8 dtype, zero
// padding to 24 bytes, then I*J*n little-endian floats.
inline constexpr char kTraceMagic[4] = {'W', 'D', 'M', 'T'};
inline constexpr std::uint32_t kTraceVersion = 1;
inline constexpr std::uint8_t kTraceDtypeF32 = 4;
inline constexpr std::size_t kTraceHeaderBytes = 24;

struct TraceHeader {
  std::uint32_t version = kTraceVersion;
  std::uint32_t blocks = 0;
  std::uint32_t tokens = 0;
  std::uint32_t experts = 0;
  std::uint8_t dtype = kTraceDtypeF32;
};

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>(v >> (8 * b)));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace detail

inline std::vector<unsigned char> encode_trace(const GatingTrace& trace) {
  std::vector<unsigned char> out;
  out.reserve(kTraceHeaderBytes + 4 * trace.data().size());
  out.insert(out.end(), std::begin(kTraceMagic), std::end(kTraceMagic));
  detail::put_u32(out, kTraceVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(trace.blocks()));
  detail::put_u32(out, static_cast<std::uint32_t>(trace.tokens()));
  detail::put_u32(out, static_cast<std::uint32_t>(trace.experts()));
  out.push_back(kTraceDtypeF32);
  out.resize(kTraceHeaderBytes, 0);
  for (float v : trace.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

// Parses and validates a trace image. Rows within 1e-3 of unit mass are
// renormalized; rows further off are rejected.
inline GatingTrace decode_trace(std::span<const unsigned char> bytes) {
  if (bytes.size() < kTraceHeaderBytes) throw TraceFormatError("trace: truncated header");
  if (std::memcmp(bytes.data(), kTraceMagic, 4) != 0) throw TraceFormatError("trace: bad magic");
  TraceHeader h;
  h.version = detail::get_u32(bytes.data() + 4);
  h.blocks = detail::get_u32(bytes.data() + 8);
  h.tokens = detail::get_u32(bytes.data() + 12);
  h.experts = detail::get_u32(bytes.data() + 16);
  h.dtype = bytes[20];
  if (h.version != kTraceVersion)
    throw TraceFormatError("trace: unsupported version " + std::to_string(h.version));
  if (h.dtype != kTraceDtypeF32)
    throw TraceFormatError("trace: unsupported dtype " + std::to_string(h.dtype));
  if (h.blocks == 0 || h.tokens == 0 || h.experts == 0)
    throw TraceFormatError("trace: dimensions must be positive");
  const std::uint64_t count = std::uint64_t{h.blocks} * h.tokens * h.experts;
  if (bytes.size() != kTraceHeaderBytes + 4 * count)
    throw TraceFormatError("trace: payload size does not match header dimensions");

  std::vector<float> w(count);
  const unsigned char* p = bytes.data() + kTraceHeaderBytes;
  for (std::uint64_t e = 0; e < count; ++e, p += 4)
    w[e] = std::bit_cast<float>(detail::get_u32(p));

  for (std::uint64_t r = 0; r < count / h.experts; ++r) {
    std::span<float> row(w.data() + r * h.experts, h.experts);
    for (float v : row)
      if (!(v >= 0.0f) || !std::isfinite(v))
        throw TraceValidationError("trace: negative or non-finite weight in row " +
                                   std::to_string(r));
    const double dev = std::abs(detail::row_sum(row) - 1.0);
    if (dev > kRowRenormalizeTolerance)
      throw TraceValidationError("trace: row " + std::to_string(r) + " sums to " +
                                 std::to_string(detail::row_sum(row)));
    if (dev > kRowSumTolerance) detail::normalize_row(row);
  }
  return GatingTrace(h.blocks, h.tokens, h.experts, std::move(w));
}

inline void write_trace(const GatingTrace& trace, const std::string& path) {
  if (path.empty()) throw std::runtime_error("write_trace: empty path");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_trace: cannot open " + path);
  const auto bytes = encode_trace(trace);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write_trace: write failed for " + path);
}

inline GatingTrace load_trace(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_trace: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  return decode_trace(bytes);
}

// CSV export: block,token,e0..e{n-1}.
inline void write_trace_csv(const GatingTrace& trace, std::ostream& os) {
  os << "block,token";
  for (std::size_t k = 0; k < trace.experts(); ++k) os << ",e" << k;
  os << "\r\n";
  char buf[32];
  for (std::size_t i = 0; i < trace.blocks(); ++i)
    for (std::size_t j = 0; j < trace.tokens(); ++j) {
      os << i << ',' << j;
      for (float v : trace.row(i, j)) {
        std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
        os << ',' << buf;
      }
      os << "\r\n";
    }
}

// Each row is softmax(peakedness * z) with z iid standard normal.
inline GatingTrace synth_trace(std::uint64_t seed, std::size_t blocks, std::size_t tokens,
                               std::size_t experts, double peakedness) {
  if (blocks == 0 || tokens == 0 || experts == 0)
    throw std::invalid_argument("synth_trace: dimensions must be positive");
  if (!(peakedness >= 0.0) || !std::isfinite(peakedness))
    throw std::invalid_argument("synth_trace: peakedness must be finite and >= 0");
  RandomStream rng(seed);
  std::vector<float> w(blocks * tokens * experts);
  std::vector<double> logits(experts);
  for (std::size_t r = 0; r < blocks * tokens; ++r) {
    for (auto& z : logits) z = peakedness * rng.normal();
    const double top = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (auto& z : logits) s += (z = std::exp(z - top));
    std::span<float> row(w.data() + r * experts, experts);
    for (std::size_t k = 0; k < experts; ++k) row[k] = static_cast<float>(logits[k] / s);
    detail::normalize_row(row);
  }
  return GatingTrace(blocks, tokens, experts, std::move(w));
}

}  // namespace wdmoe
