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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "wdmoe/io.hpp"
#include "wdmoe/verify.hpp"

namespace wdmoe::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitVerification = 3;

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

// Caps scenario threads at WDMOE_THREADS when it is set.
inline void apply_thread_cap(Scenario& s) {
  const char* env = std::getenv("WDMOE_THREADS");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  const unsigned long cap = std::strtoul(env, &end, 10);
  if (*end != '\0' || cap == 0) throw ConfigError("WDMOE_THREADS must be a positive integer");
  const std::size_t current = resolve_threads(s.threads, std::numeric_limits<std::size_t>::max());
  s.threads = std::min<std::size_t>(current, cap);
}

// Runs `body` and maps the library's exception types onto exit codes.
template <typename Body>
int guarded(Streams io, const char* command, Body&& body) {
  try {
    return body();
  } catch (const TraceValidationError& e) {
    io.err << command << ": " << e.what() << '\n';
    return kExitValidation;
  } catch (const TraceFormatError& e) {
    io.err << command << ": " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    io.err << command << ": " << e.what() << '\n';
    return kExitUsage;
  }
}

struct Loaded {
  RunConfig config;
  GatingTrace trace;
  std::filesystem::path out_dir;
};

inline Loaded load(const std::string& config_path, const std::optional<std::string>& out_dir) {
  Loaded l{load_run_config(config_path), {}, {}};
  l.trace = materialize_trace(l.config);
  l.config.scenario.validate(l.trace);
  apply_thread_cap(l.config.scenario);
  l.out_dir = out_dir.value_or(l.config.out_dir);
  std::filesystem::create_directories(l.out_dir);
  return l;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + path.string());
}

inline int cmd_simulate(const std::string& config_path, const std::optional<std::string>& out_dir,
                        Streams io) {
  return guarded(io, "simulate", [&] {
    const auto l = load(config_path, out_dir);
    const auto reports = run_policies(l.config.scenario, l.trace, l.config.policies);

    json doc{{"seed", l.config.scenario.seed},
             {"batches", l.config.scenario.batches},
             {"total_bandwidth_hz", l.config.scenario.radio.total_bandwidth_hz},
             {"reports", json::array()}};
    for (const auto& r : reports) doc["reports"].push_back(to_json(r));
    write_text(l.out_dir / "report.json", doc.dump(2) + "\n");

    std::ostringstream csv;
    write_summary_csv(csv, reports);
    write_text(l.out_dir / "summary.csv", csv.str());

    for (const auto& r : reports)
      io.out << std::left << std::setw(22) << to_string(r.policy) << std::fixed
             << std::setprecision(3) << r.total_latency_s * 1e3 << " ms +/- "
             << r.total_latency_ci95_s * 1e3 << '\n';
    return kExitOk;
  });
}

inline int cmd_sweep(const std::string& config_path, double b_min_hz, double b_max_hz,
                     std::size_t points, const std::optional<std::string>& out_dir, Streams io) {
  return guarded(io, "sweep", [&] {
    if (!(b_min_hz > 0.0) || !(b_max_hz > b_min_hz) || !std::isfinite(b_max_hz))
      throw ConfigError("need 0 < b-min < b-max");
    if (points < 2) throw ConfigError("need at least 2 points");
    const auto l = load(config_path, out_dir);
    std::vector<double> grid(points);
    for (std::size_t v = 0; v < points; ++v)
      grid[v] = b_min_hz + (b_max_hz - b_min_hz) * static_cast<double>(v) /
                               static_cast<double>(points - 1);
    grid.back() = b_max_hz;
    const auto sweep = sweep_bandwidth(l.config.scenario, l.trace, grid, l.config.policies);
    std::ostringstream csv;
    write_sweep_csv(csv, sweep);
    write_text(l.out_dir / "sweep.csv", csv.str());
    io.out << "wrote " << (l.out_dir / "sweep.csv").string() << " (" << sweep.size() << " rows)\n";
    return kExitOk;
  });
}

inline int cmd_synth_trace(std::uint64_t seed, std::size_t blocks, std::size_t tokens,
                           std::size_t experts, double peakedness, const std::string& out_path,
                           Streams io) {
  return guarded(io, "synth-trace", [&] {
    write_trace(synth_trace(seed, blocks, tokens, experts, peakedness), out_path);
    io.out << "wrote " << out_path << '\n';
    return kExitOk;
  });
}

inline int cmd_verify(const std::string& config_path, verify::Sabotage sabotage, Streams io) {
  return guarded(io, "verify", [&] {
    RunConfig cfg = load_run_config(config_path);
    const GatingTrace trace = materialize_trace(cfg);
    cfg.scenario.validate(trace);
    const auto results = verify::run_suite(cfg.scenario, trace, sabotage);
    bool all = true;
    for (const auto& r : results) {
      io.out << (r.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(36) << r.name
             << r.detail << '\n';
      all = all && r.passed;
    }
    return all ? kExitOk : kExitVerification;
  });
}

}  // namespace wdmoe::cli
