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

#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>

#include "wdmoe/rng.hpp"

namespace wdmoe {

struct RadioConfig {
  double carrier_ghz = 3.5;
  double noise_psd_dbm_hz = -174.0;  // N0
  double total_bandwidth_hz = 100e6;

  // N0 converted to W/Hz.
  double noise_psd_w_hz() const { return std::pow(10.0, (noise_psd_dbm_hz - 30.0) / 10.0); }

  void validate() const {
    if (!(carrier_ghz > 0.0)) throw std::domain_error("RadioConfig: carrier_ghz must be > 0");
    if (!(total_bandwidth_hz > 0.0))
      throw std::domain_error("RadioConfig: total_bandwidth_hz must be > 0");
    if (!std::isfinite(noise_psd_dbm_hz))
      throw std::domain_error("RadioConfig: noise_psd_dbm_hz must be finite");
  }
};

struct DeviceProfile {
  std::size_t id = 0;
  double distance_m = 100.0;
  double p_down_w = 10.0;  // BS transmit power toward this device
  double p_up_w = 0.2;     // device transmit power
  double compute_flops = 5e12;

  void validate() const {
    auto where = [this] { return "DeviceProfile " + std::to_string(id) + ": "; };
    if (!(distance_m > 0.0)) throw std::domain_error(where() + "distance_m must be > 0");
    if (!(p_down_w > 0.0)) throw std::domain_error(where() + "p_down_w must be > 0");
    if (!(p_up_w > 0.0)) throw std::domain_error(where() + "p_up_w must be > 0");
    if (!(compute_flops > 0.0)) throw std::domain_error(where() + "compute_flops must be > 0");
  }
};

// Linear power gains of the two links of one device.
struct ChannelState {
  double g_down = 0.0;  // BS -> device
  double g_up = 0.0;    // device -> BS

  friend bool operator==(const ChannelState&, const ChannelState&) = default;
};

enum class FadingKind {
  kRayleigh,
  kNone,  // amplitude pinned to its mean
};

// 32.4 + 20 log10(f_GHz) + 20 log10(d_m).
inline double path_loss_db(double distance_m, double carrier_ghz) {
  if (!(distance_m > 0.0) || !(carrier_ghz > 0.0))
    throw std::domain_error("path_loss_db: distance and carrier must be > 0");
  return 32.4 + 20.0 * std::log10(carrier_ghz) + 20.0 * std::log10(distance_m);
}

// Mean of the fading amplitude, i.e. the path-loss amplitude attenuation.
inline double mean_amplitude(double distance_m, double carrier_ghz) {
  return std::pow(10.0, -path_loss_db(distance_m, carrier_ghz) / 20.0);
}

// Draws independent downlink and uplink amplitudes, Rayleigh with mean
// 10^(-PL/20), and returns their squares as power gains. The downlink draw is
// taken first so sequences stay reproducible.
inline ChannelState sample_channel(const DeviceProfile& profile, const RadioConfig& radio,
                                   RandomStream& rng,
                                   FadingKind fading = FadingKind::kRayleigh) {
  const double mean = mean_amplitude(profile.distance_m, radio.carrier_ghz);
  if (fading == FadingKind::kNone) return {mean * mean, mean * mean};
  const double sigma = mean / std::sqrt(std::numbers::pi / 2.0);
  const double h_down = rng.rayleigh(sigma);
  const double h_up = rng.rayleigh(sigma);
  return {h_down * h_down, h_up * h_up};
}

namespace detail {

// B log2(1 + P g / (N0 B)), 0 at B = 0.
inline double shannon_rate(double bandwidth_hz, double power_w, double gain, double n0_w_hz) {
  if (bandwidth_hz < 0.0) throw std::domain_error("rate: bandwidth must be >= 0");
  if (bandwidth_hz == 0.0) return 0.0;
  const double snr = power_w * gain / (n0_w_hz * bandwidth_hz);
  return bandwidth_hz * std::log1p(snr) / std::numbers::ln2;
}

}  // namespace detail

inline double downlink_rate(double bandwidth_hz, const DeviceProfile& profile,
                            const ChannelState& channel, const RadioConfig& radio) {
  return detail::shannon_rate(bandwidth_hz, profile.p_down_w, channel.g_down,
                              radio.noise_psd_w_hz());
}

inline double uplink_rate(double bandwidth_hz, const DeviceProfile& profile,
                          const ChannelState& channel, const RadioConfig& radio) {
  return detail::shannon_rate(bandwidth_hz, profile.p_up_w, channel.g_up,
                              radio.noise_psd_w_hz());
}

}  // namespace wdmoe
