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

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "wdmoe/channel.hpp"
#include "wdmoe/latency.hpp"
#include "wdmoe/rng.hpp"
#include "wdmoe/selection_matrix.hpp"

namespace wdmoe {

struct BandwidthAllocation {
  std::vector<double> shares_hz;

  double total_hz() const { return std::accumulate(shares_hz.begin(), shares_hz.end(), 0.0); }
  friend bool operator==(const BandwidthAllocation&, const BandwidthAllocation&) = default;
};

inline BandwidthAllocation uniform_allocation(std::size_t devices, double total_hz) {
  return {std::vector<double>(devices, total_hz / static_cast<double>(devices))};
}

struct SolverReport {
  double objective_s = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  double kkt_residual = 0.0;
  bool degenerate = false;  // no device holds any token
};

struct SolverOptions {
  double tolerance = 1e-5;  // relative duality gap
  std::size_t max_iterations = 1000;
  // Restrict Newton steps to the tangent space of the bandwidth simplex and
  // project the final iterate onto it. Switching this off exists only to test
  // that the verifier catches an infeasible solver.
  bool project_to_simplex = true;
};

// Inputs of the bandwidth problem shared by the objective, the solver and the
// probes: one profile and one frozen channel per device, and a device-level
// selection matrix.
struct BandwidthProblem {
  const SelectionMatrix& selection;
  std::span<const DeviceProfile> devices;
  std::span<const ChannelState> channels;
  const ModelDims& dims;
  const RadioConfig& radio;

  void validate() const {
    if (devices.size() != channels.size() || devices.size() != selection.columns())
      throw std::invalid_argument("bandwidth: devices, channels and selection columns differ");
    if (devices.empty()) throw std::invalid_argument("bandwidth: no devices");
    radio.validate();
  }
};

// sum_i max_k q^i_k t_k(B_k); +inf when a loaded device has no bandwidth.
inline double objective(const BandwidthAllocation& allocation, const BandwidthProblem& p) {
  p.validate();
  if (allocation.shares_hz.size() != p.devices.size())
    throw std::invalid_argument("objective: allocation size mismatch");
  std::vector<double> per_token(p.devices.size());
  for (std::size_t k = 0; k < p.devices.size(); ++k)
    per_token[k] =
        token_latency(p.dims, allocation.shares_hz[k], p.devices[k], p.channels[k], p.radio).total_s;
  double total = 0.0;
  for (std::size_t i = 0; i < p.selection.blocks(); ++i) {
    double worst = 0.0;
    for (std::size_t k = 0; k < p.devices.size(); ++k) {
      const std::size_t load = p.selection.load(i, k);
      if (load > 0) worst = std::max(worst, static_cast<double>(load) * per_token[k]);
    }
    total += worst;
  }
  return total;
}

// Euclidean projection onto {x >= 0, sum x = total}.
inline std::vector<double> project_onto_simplex(std::span<const double> v, double total) {
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, tau = 0.0;
  for (std::size_t r = 0; r < u.size(); ++r) {
    cum += u[r];
    const double candidate = (cum - total) / static_cast<double>(r + 1);
    if (u[r] - candidate > 0.0) tau = candidate;
  }
  std::vector<double> x(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) x[k] = std::max(v[k] - tau, 0.0);
  return x;
}

namespace detail {

// Per-token latency of one device as a function of its bandwidth fraction x,
// with first and second derivatives. Rates are B x log2(1 + a / x).
struct DeviceCurve {
  double total_hz = 0.0;
  double bits = 0.0;
  double alpha_down = 0.0;
  double alpha_up = 0.0;
  double comp_s = 0.0;

  struct Eval {
    double value, d1, d2;
  };

  Eval link(double x, double alpha) const {
    const double ln2 = std::numbers::ln2;
    const double r = total_hz * x * std::log1p(alpha / x) / ln2;
    const double r1 = total_hz * (std::log1p(alpha / x) - alpha / (x + alpha)) / ln2;
    const double r2 = -total_hz * alpha * alpha / (x * (x + alpha) * (x + alpha) * ln2);
    return {bits / r, -bits * r1 / (r * r), bits * (2.0 * r1 * r1 / (r * r * r) - r2 / (r * r))};
  }

  Eval operator()(double x) const {
    const Eval d = link(x, alpha_down);
    const Eval u = link(x, alpha_up);
    return {d.value + u.value + comp_s, d.d1 + u.d1, d.d2 + u.d2};
  }
};

}  // namespace detail

// Minimizes the summed attention waiting latency over the bandwidth simplex.
// Uses a log-barrier interior-point method on the epigraph form
//   min sum_i s_i  s.t.  s_i >= q^i_k t_k(B_k),  sum_k B_k = B,
// restricted to devices and blocks that carry tokens. Idle devices get zero
// bandwidth.
inline std::pair<BandwidthAllocation, SolverReport> allocate(const BandwidthProblem& p,
                                                             const SolverOptions& options = {}) {
  p.validate();
  const std::size_t devices = p.devices.size();
  const double total = p.radio.total_bandwidth_hz;
  const BandwidthAllocation uniform = uniform_allocation(devices, total);

  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < devices; ++k) {
    bool loaded = false;
    for (std::size_t i = 0; i < p.selection.blocks() && !loaded; ++i)
      loaded = p.selection.load(i, k) > 0;
    if (loaded) active.push_back(k);
  }
  std::vector<std::size_t> busy_blocks;
  for (std::size_t i = 0; i < p.selection.blocks(); ++i)
    for (std::size_t k : active)
      if (p.selection.load(i, k) > 0) {
        busy_blocks.push_back(i);
        break;
      }

  SolverReport report;
  if (active.empty()) {
    report.degenerate = true;
    report.converged = true;
    report.objective_s = 0.0;
    return {uniform, report};
  }
  if (active.size() == 1) {
    BandwidthAllocation a{std::vector<double>(devices, 0.0)};
    a.shares_hz[active[0]] = total;
    report.objective_s = objective(a, p);
    report.converged = true;
    return {a, report};
  }

  const std::size_t nx = active.size();
  const std::size_t ns = busy_blocks.size();
  const std::size_t dim = nx + ns;
  const double n0 = p.radio.noise_psd_w_hz();

  std::vector<detail::DeviceCurve> curves(nx);
  for (std::size_t a = 0; a < nx; ++a) {
    const auto& dev = p.devices[active[a]];
    const auto& ch = p.channels[active[a]];
    curves[a] = {total, token_comm_bits(p.dims), dev.p_down_w * ch.g_down / (n0 * total),
                 dev.p_up_w * ch.g_up / (n0 * total), expert_flops(p.dims) / dev.compute_flops};
  }

  const double scale = objective(uniform, p) / static_cast<double>(ns);
  // load[b][a] = q^i_k / scale for busy block b and active device a.
  std::vector<std::vector<double>> load(ns, std::vector<double>(nx, 0.0));
  std::size_t constraints = nx;
  for (std::size_t b = 0; b < ns; ++b)
    for (std::size_t a = 0; a < nx; ++a) {
      load[b][a] = static_cast<double>(p.selection.load(busy_blocks[b], active[a])) / scale;
      if (load[b][a] > 0.0) ++constraints;
    }
  const double m = static_cast<double>(constraints);

  Eigen::VectorXd z(dim);
  for (std::size_t a = 0; a < nx; ++a) z[a] = 1.0 / static_cast<double>(nx);
  for (std::size_t b = 0; b < ns; ++b) {
    double worst = 0.0;
    for (std::size_t a = 0; a < nx; ++a)
      if (load[b][a] > 0.0) worst = std::max(worst, load[b][a] * curves[a](z[a]).value);
    z[nx + b] = 1.1 * worst;
  }

  // Barrier value; +inf outside the strictly feasible region.
  auto barrier = [&](const Eigen::VectorXd& v, double t) {
    double f = 0.0;
    for (std::size_t a = 0; a < nx; ++a) {
      if (!(v[a] > 0.0)) return std::numeric_limits<double>::infinity();
      f -= std::log(v[a]);
    }
    for (std::size_t b = 0; b < ns; ++b) {
      f += t * v[nx + b];
      for (std::size_t a = 0; a < nx; ++a) {
        if (load[b][a] == 0.0) continue;
        const double c = v[nx + b] - load[b][a] * curves[a](v[a]).value;
        if (!(c > 0.0)) return std::numeric_limits<double>::infinity();
        f -= std::log(c);
      }
    }
    return f;
  };

  Eigen::VectorXd grad(dim);
  Eigen::MatrixXd hess(dim, dim);
  Eigen::MatrixXd kkt(dim + 1, dim + 1);
  Eigen::VectorXd rhs(dim + 1);

  double t = m / z.tail(ns).sum();
  constexpr double kMu = 10.0;
  constexpr double kNewtonTol = 1e-10;
  constexpr std::size_t kMaxCenteringSteps = 80;
  bool capped = false;
  double gap = m / t;

  while (true) {
    // Centering.
    for (std::size_t inner = 0; inner < kMaxCenteringSteps; ++inner) {
      if (report.iterations >= options.max_iterations) {
        capped = true;
        break;
      }
      grad.setZero();
      hess.setZero();
      for (std::size_t a = 0; a < nx; ++a) {
        grad[a] -= 1.0 / z[a];
        hess(a, a) += 1.0 / (z[a] * z[a]);
      }
      for (std::size_t b = 0; b < ns; ++b) {
        const std::size_t s = nx + b;
        grad[s] += t;
        for (std::size_t a = 0; a < nx; ++a) {
          if (load[b][a] == 0.0) continue;
          const auto e = curves[a](z[a]);
          const double c = z[s] - load[b][a] * e.value;
          const double dc_dx = -load[b][a] * e.d1;
          grad[a] -= dc_dx / c;
          grad[s] -= 1.0 / c;
          hess(a, a) += dc_dx * dc_dx / (c * c) + load[b][a] * e.d2 / c;
          hess(a, s) += dc_dx / (c * c);
          hess(s, a) += dc_dx / (c * c);
          hess(s, s) += 1.0 / (c * c);
        }
      }
      Eigen::VectorXd step;
      if (options.project_to_simplex) {
        kkt.setZero();
        kkt.topLeftCorner(dim, dim) = hess;
        for (std::size_t a = 0; a < nx; ++a) kkt(dim, a) = kkt(a, dim) = 1.0;
        rhs.head(dim) = -grad;
        rhs[dim] = 0.0;
        step = kkt.partialPivLu().solve(rhs).head(dim);
      } else {
        step = hess.partialPivLu().solve(-grad);
      }
      const double decrement = -grad.dot(step);
      ++report.iterations;
      if (!(decrement > 0.0) || decrement / 2.0 <= kNewtonTol) break;

      const double f0 = barrier(z, t);
      double alpha = 1.0;
      Eigen::VectorXd next = z + alpha * step;
      while (barrier(next, t) > f0 - 0.25 * alpha * decrement && alpha > 1e-12) {
        alpha *= 0.5;
        next = z + alpha * step;
      }
      // No representable descent left at this t.
      if (alpha <= 1e-12) break;
      z = next;
    }
    gap = m / t;
    if (capped || gap <= options.tolerance * z.tail(ns).sum()) break;
    t *= kMu;
  }

  std::vector<double> x(nx);
  for (std::size_t a = 0; a < nx; ++a) x[a] = z[a];
  if (options.project_to_simplex) x = project_onto_simplex(x, 1.0);

  BandwidthAllocation result{std::vector<double>(devices, 0.0)};
  for (std::size_t a = 0; a < nx; ++a) result.shares_hz[active[a]] = x[a] * total;

  report.objective_s = objective(result, p);
  const double infeasibility = std::abs(result.total_hz() - total) / total;
  report.kkt_residual = std::max(infeasibility, gap / z.tail(ns).sum());
  report.converged = !capped && report.kkt_residual <= options.tolerance;

  if (options.project_to_simplex) {
    const double base = objective(uniform, p);
    if (!(report.objective_s <= base)) {
      report.objective_s = base;
      return {uniform, report};
    }
  }
  return {result, report};
}

// Worst midpoint-convexity violation f((B1 + B2) / 2) - (f(B1) + f(B2)) / 2
// over random pairs drawn uniformly from the simplex.
inline double convexity_probe(const BandwidthProblem& p, RandomStream& rng, std::size_t trials) {
  if (trials == 0) throw std::invalid_argument("convexity_probe: trials must be >= 1");
  p.validate();
  const std::size_t devices = p.devices.size();
  const double total = p.radio.total_bandwidth_hz;
  auto draw = [&] {
    BandwidthAllocation a{std::vector<double>(devices)};
    double s = 0.0;
    for (auto& v : a.shares_hz) s += (v = rng.exponential());
    for (auto& v : a.shares_hz) v *= total / s;
    return a;
  };
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const auto b1 = draw();
    const auto b2 = draw();
    BandwidthAllocation mid{std::vector<double>(devices)};
    for (std::size_t k = 0; k < devices; ++k)
      mid.shares_hz[k] = 0.5 * (b1.shares_hz[k] + b2.shares_hz[k]);
    worst = std::max(worst, objective(mid, p) - 0.5 * (objective(b1, p) + objective(b2, p)));
  }
  return worst;
}

}  // namespace wdmoe
