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

#include <cmath>
#include <numbers>

#include "gtest/gtest.h"
#include "wdmoe/channel.hpp"

namespace wdmoe {
namespace {

// Reference values from tests/oracles/derive_values.py.
constexpr double kPathLoss100m = 83.28136088700551271;
constexpr double kPathLoss10m = 63.28136088700551271;
constexpr double kDownlinkRate = 220206134.9603379965;
constexpr double kUplinkRate = 149662329.37629959573;

TEST(PathLossTest, ReferenceDistances) {
  EXPECT_NEAR(path_loss_db(100.0, 3.5), kPathLoss100m, 1e-12);
  EXPECT_NEAR(path_loss_db(10.0, 3.5), kPathLoss10m, 1e-12);
}

TEST(PathLossTest, TwentyDecibelsPerDecade) {
  for (double d : {1.0, 7.0, 55.0, 300.0})
    EXPECT_NEAR(path_loss_db(10.0 * d, 3.5) - path_loss_db(d, 3.5), 20.0, 1e-12);
}

TEST(PathLossTest, RejectsNonPositiveInputs) {
  EXPECT_THROW(path_loss_db(0.0, 3.5), std::domain_error);
  EXPECT_THROW(path_loss_db(-5.0, 3.5), std::domain_error);
  EXPECT_THROW(path_loss_db(10.0, 0.0), std::domain_error);
}

TEST(ChannelTest, EmpiricalMeanAmplitude) {
  const DeviceProfile dev{0, 100.0};
  const RadioConfig radio;
  RandomStream rng(11);
  double sum = 0.0;
  constexpr int kDraws = 1'000'000;
  for (int n = 0; n < kDraws / 2; ++n) {
    const auto c = sample_channel(dev, radio, rng);
    sum += std::sqrt(c.g_down) + std::sqrt(c.g_up);
  }
  const double expected = std::pow(10.0, -kPathLoss100m / 20.0);
  EXPECT_NEAR(sum / kDraws / expected, 1.0, 0.01);
}

TEST(ChannelTest, SameSeedSameDraws) {
  const DeviceProfile dev{0, 42.0};
  const RadioConfig radio;
  RandomStream a(5, 1, 2), b(5, 1, 2), c(5, 1, 3);
  const auto x = sample_channel(dev, radio, a);
  EXPECT_EQ(x, sample_channel(dev, radio, b));
  EXPECT_NE(x, sample_channel(dev, radio, c));
}

TEST(ChannelTest, NoFadingPinsMeanPower) {
  const DeviceProfile dev{0, 100.0};
  RandomStream rng(1);
  const auto c = sample_channel(dev, RadioConfig{}, rng, FadingKind::kNone);
  const double mean = mean_amplitude(100.0, 3.5);
  EXPECT_DOUBLE_EQ(c.g_down, mean * mean);
  EXPECT_DOUBLE_EQ(c.g_up, mean * mean);
}

TEST(RateTest, ReferenceValues) {
  const RadioConfig radio;
  const DeviceProfile dev{0, 100.0, 10.0, 0.2};
  const ChannelState ch{1e-9, 1e-9};
  EXPECT_NEAR(downlink_rate(12.5e6, dev, ch, radio) / kDownlinkRate, 1.0, 1e-12);
  EXPECT_NEAR(uplink_rate(12.5e6, dev, ch, radio) / kUplinkRate, 1.0, 1e-12);
}

TEST(RateTest, ZeroBandwidthIsZeroRate) {
  const DeviceProfile dev{0, 10.0};
  EXPECT_EQ(downlink_rate(0.0, dev, {1e-8, 1e-8}, RadioConfig{}), 0.0);
  EXPECT_EQ(uplink_rate(0.0, dev, {1e-8, 1e-8}, RadioConfig{}), 0.0);
  EXPECT_THROW(downlink_rate(-1.0, dev, {1e-8, 1e-8}, RadioConfig{}), std::domain_error);
}

TEST(RateTest, IncreasingAndConcaveInBandwidth) {
  const RadioConfig radio;
  const DeviceProfile dev{0, 250.0};
  RandomStream rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto ch = sample_channel(dev, radio, rng);
    const double b = 1e5 + 1e8 * rng.uniform();
    const double h = 1e4 + 1e6 * rng.uniform();
    const double lo = downlink_rate(b - h / 2, dev, ch, radio);
    const double mid = downlink_rate(b, dev, ch, radio);
    const double hi = downlink_rate(b + h / 2, dev, ch, radio);
    EXPECT_LT(lo, mid);
    EXPECT_LT(mid, hi);
    EXPECT_GE(mid, 0.5 * (lo + hi) * (1.0 - 1e-12));
  }
}

TEST(RateTest, NeverExceedsWidebandLimit) {
  const RadioConfig radio;
  const DeviceProfile dev{0, 30.0};
  const ChannelState ch{1e-7, 1e-7};
  const double limit = dev.p_down_w * ch.g_down / radio.noise_psd_w_hz() / std::numbers::ln2;
  for (double b : {1e3, 1e6, 1e9, 1e12}) EXPECT_LT(downlink_rate(b, dev, ch, radio), limit);
}

TEST(ConfigValidationTest, RejectsBadFields) {
  RadioConfig radio;
  radio.total_bandwidth_hz = 0.0;
  EXPECT_THROW(radio.validate(), std::domain_error);
  DeviceProfile dev{0, 10.0};
  dev.p_up_w = 0.0;
  EXPECT_THROW(dev.validate(), std::domain_error);
}

}  // namespace
}  // namespace wdmoe
