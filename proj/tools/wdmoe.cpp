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

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "wdmoe/cli.hpp"

int main(int argc, char** argv) {
  using namespace wdmoe;
  CLI::App app{"Wireless distributed MoE latency simulator"};
  app.require_subcommand(1);
  std::optional<std::string> out_dir;
  app.add_option("--out-dir", out_dir, "Output directory (default: config out_dir, else ./out)");

  std::string config;
  auto* simulate = app.add_subcommand("simulate", "Run every configured policy");
  simulate->add_option("--config", config, "Run config (JSON)")->required();

  double b_min = 0.0, b_max = 0.0;
  std::size_t points = 0;
  auto* sweep = app.add_subcommand("sweep", "Latency versus total bandwidth");
  sweep->add_option("--config", config, "Run config (JSON)")->required();
  sweep->add_option("--b-min", b_min, "Lowest bandwidth in Hz")->required();
  sweep->add_option("--b-max", b_max, "Highest bandwidth in Hz")->required();
  sweep->add_option("--points", points, "Number of bandwidth points")->required();

  std::uint64_t seed = 0;
  std::size_t blocks = 0, tokens = 0, experts = 0;
  double peakedness = 0.0;
  std::string out_path;
  auto* synth = app.add_subcommand("synth-trace", "Write a synthetic gating trace");
  synth->add_option("--seed", seed)->required();
  synth->add_option("--blocks", blocks)->required();
  synth->add_option("--tokens", tokens)->required();
  synth->add_option("--experts", experts)->required();
  synth->add_option("--peakedness", peakedness)->required();
  synth->add_option("--out", out_path)->required();

  std::string sabotage_name = "none";
  auto* verify_cmd = app.add_subcommand("verify", "Check solvers against brute-force oracles");
  verify_cmd->add_option("--config", config, "Run config (JSON)")->required();
  verify_cmd->add_option("--sabotage", sabotage_name,
                         "Inject a defect: none, step-truncation, no-projection, wrong-quartile");

  for (auto* sub : {simulate, sweep, verify_cmd})
    sub->add_option("--out-dir", out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kExitOk : cli::kExitUsage;
  }

  const cli::Streams io{std::cout, std::cerr};
  if (*simulate) return cli::cmd_simulate(config, out_dir, io);
  if (*sweep) return cli::cmd_sweep(config, b_min, b_max, points, out_dir, io);
  if (*synth) return cli::cmd_synth_trace(seed, blocks, tokens, experts, peakedness, out_path, io);
  const auto sabotage = verify::sabotage_from_string(sabotage_name);
  if (!sabotage) {
    std::cerr << "verify: unknown sabotage '" << sabotage_name << "'\n";
    return cli::kExitUsage;
  }
  return cli::cmd_verify(config, *sabotage, io);
}
