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

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "wdmoe/simulator.hpp"
#include "wdmoe/trace.hpp"

namespace wdmoe {

using json = nlohmann::json;

struct SynthTraceParams {
  std::uint64_t seed = 1;
  std::uint32_t blocks = 32;
  std::uint32_t tokens = 64;
  std::uint32_t experts = 8;
  double peakedness = 2.0;
};

struct RunConfig {
  Scenario scenario;  // `policy` is unused; see `policies`
  std::vector<Policy> policies;
  std::variant<std::string, SynthTraceParams> trace_source;
  std::string out_dir = "out";
};

// Config problem pinned to a 1-based line of the source text (0 if unknown).
class ConfigParseError : public ConfigError {
 public:
  ConfigParseError(std::size_t line, const std::string& what)
      : ConfigError(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

// Walks `text` along a JSON path (object keys and array indices) and returns
// the 1-based line where the addressed value's key or element begins.
inline std::size_t locate_line(std::string_view text, const std::vector<std::string>& path) {
  std::size_t pos = 0;
  auto skip_string = [&](std::size_t p) {  // p at opening quote; returns index after close
    for (++p; p < text.size(); ++p) {
      if (text[p] == '\\') ++p;
      else if (text[p] == '"') return p + 1;
    }
    return text.size();
  };
  auto skip_ws = [&](std::size_t p) {
    while (p < text.size() && std::isspace(static_cast<unsigned char>(text[p]))) ++p;
    return p;
  };
  // Index after the value starting at p.
  auto skip_value = [&](std::size_t p) {
    p = skip_ws(p);
    if (p >= text.size()) return p;
    if (text[p] == '"') return skip_string(p);
    if (text[p] == '{' || text[p] == '[') {
      int depth = 0;
      for (; p < text.size(); ++p) {
        if (text[p] == '"') {
          p = skip_string(p) - 1;
          continue;
        }
        if (text[p] == '{' || text[p] == '[') ++depth;
        if (text[p] == '}' || text[p] == ']') {
          if (--depth == 0) return p + 1;
        }
      }
      return p;
    }
    while (p < text.size() && text[p] != ',' && text[p] != '}' && text[p] != ']') ++p;
    return p;
  };

  for (const auto& step : path) {
    pos = skip_ws(pos);
    if (pos >= text.size()) break;
    if (text[pos] == '{') {
      std::size_t p = pos + 1;
      bool found = false;
      while (p < text.size()) {
        p = skip_ws(p);
        if (p >= text.size() || text[p] == '}') break;
        const std::size_t key_end = skip_string(p);
        const auto key = text.substr(p + 1, key_end - p - 2);
        p = skip_ws(key_end);
        if (p < text.size() && text[p] == ':') ++p;
        if (key == step) {
          pos = p;
          found = true;
          break;
        }
        p = skip_ws(skip_value(p));
        if (p < text.size() && text[p] == ',') ++p;
      }
      if (!found) break;
    } else if (text[pos] == '[') {
      std::size_t index = 0;
      try {
        index = std::stoul(step);
      } catch (...) {
        break;
      }
      std::size_t p = pos + 1;
      for (std::size_t e = 0; e < index && p < text.size(); ++e) {
        p = skip_ws(skip_value(p));
        if (p < text.size() && text[p] == ',') ++p;
      }
      pos = skip_ws(p);
    } else {
      break;
    }
  }
  pos = skip_ws(pos);
  std::size_t line = 1;
  for (std::size_t p = 0; p < pos && p < text.size(); ++p)
    if (text[p] == '\n') ++line;
  return line;
}

// Field reader that remembers its JSON path for error reporting.
class Reader {
 public:
  Reader(const json& node, std::string_view text, std::vector<std::string> path)
      : node_(node), text_(text), path_(std::move(path)) {}

  [[noreturn]] void fail(const std::string& what, const std::vector<std::string>& at) const {
    std::string dotted;
    for (const auto& p : at) dotted += (dotted.empty() ? "" : ".") + p;
    throw ConfigParseError(locate_line(text_, at), (dotted.empty() ? "" : dotted + ": ") + what);
  }
  [[noreturn]] void fail(const std::string& what) const { fail(what, path_); }

  std::vector<std::string> child_path(const std::string& key) const {
    auto p = path_;
    p.push_back(key);
    return p;
  }

  void expect_object() const {
    if (!node_.is_object()) fail("expected an object");
  }

  void reject_unknown(std::initializer_list<std::string_view> known) const {
    for (const auto& [key, value] : node_.items()) {
      bool ok = false;
      for (auto k : known) ok = ok || k == key;
      if (!ok) fail("unknown key '" + key + "'", child_path(key));
    }
  }

  bool has(const std::string& key) const { return node_.contains(key); }

  Reader child(const std::string& key) const { return {node_.at(key), text_, child_path(key)}; }

  Reader element(std::size_t index) const {
    return {node_.at(index), text_, child_path(std::to_string(index))};
  }

  const json& node() const { return node_; }

  double number(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const auto& v = node_.at(key);
    if (!v.is_number()) fail("expected a number", child_path(key));
    return v.get<double>();
  }

  std::uint64_t unsigned_int(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const auto& v = node_.at(key);
    if (!v.is_number_unsigned()) fail("expected a non-negative integer", child_path(key));
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& v = node_.at(key);
    if (!v.is_boolean()) fail("expected true or false", child_path(key));
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    const auto& v = node_.at(key);
    if (!v.is_string()) fail("expected a string", child_path(key));
    return v.get<std::string>();
  }

 private:
  const json& node_;
  std::string_view text_;
  std::vector<std::string> path_;
};

}  // namespace detail

// Parses and validates a run config. Units are SI throughout.
inline RunConfig parse_run_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    // nlohmann reports "parse error at line L, column C: ..."
    std::size_t line = 0;
    const std::string msg = e.what();
    if (auto at = msg.find("line "); at != std::string::npos) line = std::stoul(msg.substr(at + 5));
    throw ConfigParseError(line, "malformed JSON: " + msg);
  }
  const detail::Reader top(root, text, {});
  top.expect_object();
  top.reject_unknown({"radio", "devices", "dims", "policies", "seed", "batches", "fading_mode",
                      "selection", "expert_to_device", "solver_tolerance", "trace", "out_dir",
                      "threads"});

  RunConfig cfg;
  Scenario& s = cfg.scenario;
  s = default_scenario();

  if (top.has("radio")) {
    const auto r = top.child("radio");
    r.expect_object();
    r.reject_unknown({"carrier_ghz", "noise_psd_dbm_hz", "total_bandwidth_hz"});
    s.radio.carrier_ghz = r.number("carrier_ghz", s.radio.carrier_ghz);
    s.radio.noise_psd_dbm_hz = r.number("noise_psd_dbm_hz", s.radio.noise_psd_dbm_hz);
    s.radio.total_bandwidth_hz = r.number("total_bandwidth_hz", s.radio.total_bandwidth_hz);
    try {
      s.radio.validate();
    } catch (const std::domain_error& e) {
      r.fail(e.what());
    }
  }

  if (top.has("devices")) {
    const auto list = top.child("devices");
    if (!list.node().is_array() || list.node().empty()) list.fail("expected a non-empty array");
    s.devices.clear();
    for (std::size_t k = 0; k < list.node().size(); ++k) {
      const auto d = list.element(k);
      d.expect_object();
      d.reject_unknown({"distance_m", "p_down_w", "p_up_w", "compute_flops"});
      if (!d.has("distance_m")) d.fail("missing distance_m");
      DeviceProfile p;
      p.id = k;
      p.distance_m = d.number("distance_m", 0.0);
      p.p_down_w = d.number("p_down_w", p.p_down_w);
      p.p_up_w = d.number("p_up_w", p.p_up_w);
      p.compute_flops = d.number("compute_flops", p.compute_flops);
      try {
        p.validate();
      } catch (const std::domain_error& e) {
        d.fail(e.what());
      }
      s.devices.push_back(p);
    }
  }

  if (top.has("dims")) {
    const auto d = top.child("dims");
    d.expect_object();
    d.reject_unknown({"embed_dim", "hidden_dim", "quant_bits", "act_flops_per_elem", "num_blocks",
                      "num_experts"});
    auto u32 = [&](const char* key, std::uint32_t fallback) {
      const auto v = d.unsigned_int(key, fallback);
      if (v > 0xffffffffu) d.fail("value too large", d.child_path(key));
      return static_cast<std::uint32_t>(v);
    };
    s.dims.embed_dim = u32("embed_dim", s.dims.embed_dim);
    s.dims.hidden_dim = u32("hidden_dim", s.dims.hidden_dim);
    s.dims.quant_bits = u32("quant_bits", s.dims.quant_bits);
    s.dims.act_flops_per_elem = u32("act_flops_per_elem", s.dims.act_flops_per_elem);
    s.dims.num_blocks = u32("num_blocks", s.dims.num_blocks);
    s.dims.num_experts = u32("num_experts", s.dims.num_experts);
    try {
      s.dims.validate();
    } catch (const std::domain_error& e) {
      d.fail(e.what());
    }
  }

  if (!top.has("policies")) top.fail("missing 'policies'");
  {
    const auto list = top.child("policies");
    if (!list.node().is_array() || list.node().empty()) list.fail("expected a non-empty array");
    for (std::size_t p = 0; p < list.node().size(); ++p) {
      const auto& v = list.node().at(p);
      const auto policy = v.is_string() ? policy_from_string(v.get<std::string>()) : std::nullopt;
      if (!policy) list.fail("unknown policy", list.child_path(std::to_string(p)));
      cfg.policies.push_back(*policy);
    }
  }

  s.seed = top.unsigned_int("seed", s.seed);
  s.batches = top.unsigned_int("batches", s.batches);
  if (s.batches == 0) top.fail("batches must be >= 1", top.child_path("batches"));
  s.threads = top.unsigned_int("threads", s.threads);
  s.solver_tolerance = top.number("solver_tolerance", s.solver_tolerance);
  if (!(s.solver_tolerance > 0.0))
    top.fail("solver_tolerance must be > 0", top.child_path("solver_tolerance"));
  {
    const auto mode = fading_mode_from_string(top.string("fading_mode", "per_batch"));
    if (!mode) top.fail("fading_mode must be per_batch, frozen or none", top.child_path("fading_mode"));
    s.fading_mode = *mode;
  }

  if (top.has("selection")) {
    const auto c = top.child("selection");
    c.expect_object();
    c.reject_unknown({"top_k", "theta_init", "theta_step", "wlr_growth", "wlr_window_blocks",
                      "stop_rule", "max_rounds"});
    auto& sel = s.selection;
    sel.top_k = c.unsigned_int("top_k", sel.top_k);
    sel.theta_init = c.number("theta_init", sel.theta_init);
    sel.theta_step = c.number("theta_step", sel.theta_step);
    sel.wlr_growth = c.number("wlr_growth", sel.wlr_growth);
    sel.wlr_window_blocks = c.unsigned_int("wlr_window_blocks", sel.wlr_window_blocks);
    sel.stop_rule = c.boolean("stop_rule", sel.stop_rule);
    sel.max_rounds = c.unsigned_int("max_rounds", sel.max_rounds);
    try {
      sel.validate(s.dims.num_experts);
    } catch (const std::invalid_argument& e) {
      c.fail(e.what());
    }
  }

  if (top.has("expert_to_device")) {
    const auto m = top.child("expert_to_device");
    if (!m.node().is_array()) m.fail("expected an array of device indices");
    for (std::size_t e = 0; e < m.node().size(); ++e) {
      const auto& v = m.node().at(e);
      if (!v.is_number_unsigned() || v.get<std::size_t>() >= s.devices.size())
        m.fail("device index out of range", m.child_path(std::to_string(e)));
      s.expert_to_device.push_back(v.get<std::size_t>());
    }
    if (s.expert_to_device.size() != s.dims.num_experts) m.fail("must list every expert");
  } else if (s.devices.size() != s.dims.num_experts) {
    top.fail("device count must equal dims.num_experts unless expert_to_device is given");
  }

  if (!top.has("trace")) top.fail("missing 'trace'");
  {
    const auto t = top.child("trace");
    t.expect_object();
    t.reject_unknown({"path", "synth"});
    if (t.has("path") == t.has("synth")) t.fail("exactly one of 'path' or 'synth' is required");
    if (t.has("path")) {
      cfg.trace_source = t.string("path", "");
    } else {
      const auto g = t.child("synth");
      g.expect_object();
      g.reject_unknown({"seed", "blocks", "tokens", "experts", "peakedness"});
      SynthTraceParams params;
      params.seed = g.unsigned_int("seed", params.seed);
      params.blocks = static_cast<std::uint32_t>(g.unsigned_int("blocks", s.dims.num_blocks));
      params.tokens = static_cast<std::uint32_t>(g.unsigned_int("tokens", params.tokens));
      params.experts = static_cast<std::uint32_t>(g.unsigned_int("experts", s.dims.num_experts));
      params.peakedness = g.number("peakedness", params.peakedness);
      if (params.blocks == 0 || params.tokens == 0 || params.experts == 0)
        g.fail("dimensions must be positive");
      if (!(params.peakedness >= 0.0)) g.fail("peakedness must be >= 0");
      cfg.trace_source = params;
    }
  }
  cfg.out_dir = top.string("out_dir", cfg.out_dir);
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

inline GatingTrace materialize_trace(const RunConfig& cfg) {
  if (const auto* path = std::get_if<std::string>(&cfg.trace_source)) return load_trace(*path);
  const auto& params = std::get<SynthTraceParams>(cfg.trace_source);
  return synth_trace(params.seed, params.blocks, params.tokens, params.experts, params.peakedness);
}

// ---- report serialization -------------------------------------------------

inline json to_json(const LatencyReport& r) {
  json allocations = json::array();
  for (const auto& a : r.allocations) allocations.push_back(a.shares_hz);
  return {{"policy", std::string(to_string(r.policy))},
          {"per_block_latency_s", r.per_block_latency_s},
          {"total_latency_s", r.total_latency_s},
          {"total_latency_ci95_s", r.total_latency_ci95_s},
          {"wlr_total", r.wlr_total},
          {"active_pairs", r.active_pairs},
          {"batch_total_latency_s", r.batch_total_latency_s},
          {"allocations_hz", allocations}};
}

inline LatencyReport report_from_json(const json& j) {
  LatencyReport r;
  const auto policy = policy_from_string(j.at("policy").get<std::string>());
  if (!policy) throw ConfigError("report: unknown policy");
  r.policy = *policy;
  r.per_block_latency_s = j.at("per_block_latency_s").get<std::vector<double>>();
  r.total_latency_s = j.at("total_latency_s").get<double>();
  r.total_latency_ci95_s = j.at("total_latency_ci95_s").get<double>();
  r.wlr_total = j.at("wlr_total").get<double>();
  r.active_pairs = j.at("active_pairs").get<double>();
  r.batch_total_latency_s = j.at("batch_total_latency_s").get<std::vector<double>>();
  for (const auto& a : j.at("allocations_hz"))
    r.allocations.push_back({a.get<std::vector<double>>()});
  return r;
}

inline std::vector<LatencyReport> load_reports(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open report " + path);
  const json doc = json::parse(f);
  std::vector<LatencyReport> out;
  for (const auto& r : doc.at("reports")) out.push_back(report_from_json(r));
  return out;
}

// ---- CSV (RFC 4180: CRLF line ends, no field here needs quoting) ----------

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_summary_csv(std::ostream& os, const std::vector<LatencyReport>& reports) {
  os << "policy,total_latency_s,wlr_total,active_pairs\r\n";
  for (const auto& r : reports)
    os << to_string(r.policy) << ',' << format_real(r.total_latency_s) << ','
       << format_real(r.wlr_total) << ',' << format_real(r.active_pairs) << "\r\n";
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepPoint>& points) {
  os << "bandwidth_hz,policy,latency_s\r\n";
  for (const auto& p : points)
    os << format_real(p.bandwidth_hz) << ',' << to_string(p.policy) << ','
       << format_real(p.latency_s) << "\r\n";
}

}  // namespace wdmoe
