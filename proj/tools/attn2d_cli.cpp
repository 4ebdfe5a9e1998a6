// Copyright 2026 The Attention2D Simulator Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "attn2d/cli.hpp"

namespace {

using attn2d::ConfigError;

// "8,16,32" -> {8, 16, 32}; an empty string is an empty list.
template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof()) throw ConfigError(std::string("bad value '") + item + "' in " + what);
    out.push_back(v);
  }
  return out;
}

bool parse_mask(const std::string& m) {
  if (m == "causal") return true;
  if (m == "none") return false;
  throw ConfigError("mask must be 'causal' or 'none'");
}

// Runs `fn` with the requested output stream (stdout when path is empty).
template <typename Fn>
int with_output(const std::string& path, Fn fn) {
  if (path.empty()) return fn(std::cout);
  std::ofstream file(path);
  if (!file) throw ConfigError("cannot open '" + path + "' for writing");
  return fn(file);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic simulator for 2D-parallel exact attention"};
  app.set_help_flag("--help", "Print this help message and exit");
  app.require_subcommand(1);

  std::string strategy, p_text = "1,4,16";
  std::size_t max_n = 64;
  bool inject_fault = false;
  std::uint64_t seed = 1;
  auto* verify = app.add_subcommand("verify", "oracle, gradient and ledger checks");
  verify->add_option("--strategy", strategy, "ring, attn2d_no or attn2d_o");
  verify->add_option("--max-n", max_n, "largest context length to include");
  verify->add_option("--p", p_text, "processor counts, comma separated");
  verify->add_option("--seed", seed, "input seed");
  verify->add_flag("--inject-fault", inject_fault, "corrupt one ledger count (test hook)");

  std::string strategies = "attn2d_no,attn2d_o,ring", n_text = "256", sweep_p = "4,16,64";
  std::string mask = "causal", out_path;
  std::size_t h = 8;
  auto* sweep = app.add_subcommand("sweep", "per-processor communication sweep (CSV)");
  sweep->add_option("--strategies", strategies, "comma separated strategies");
  sweep->add_option("--n", n_text, "context lengths, comma separated");
  sweep->add_option("--p", sweep_p, "processor counts, comma separated");
  sweep->add_option("--h", h, "head dimension");
  sweep->add_option("--mask", mask, "causal or none");
  sweep->add_option("--seed", seed, "input seed");
  sweep->add_option("--out", out_path, "write CSV here instead of stdout");

  std::string sim_strategy = "attn2d_no", json_path;
  std::size_t sim_n = 8, sim_p = 4, sim_h = 4;
  std::optional<double> scale;
  auto* simulate = app.add_subcommand("simulate", "one forward+backward run, JSON report");
  simulate->add_option("--strategy", sim_strategy, "ring, attn2d_no or attn2d_o");
  simulate->add_option("--n", sim_n, "context length");
  simulate->add_option("--p", sim_p, "processors");
  simulate->add_option("--h", sim_h, "head dimension");
  simulate->add_option("--mask", mask, "causal or none");
  simulate->add_option("--scale", scale, "score scale (default 1/sqrt(h))");
  simulate->add_option("--seed", seed, "input seed");
  simulate->add_option("--json", json_path, "write JSON here instead of stdout");

  std::string preset, params_text, cost_p = "4,16,64", cost_n, format = "csv";
  double batch = 1, flops_rate = 0;
  std::optional<double> alpha, beta;
  auto* cost = app.add_subcommand("cost", "analytic cost table");
  auto* preset_opt = cost->add_option("--preset", preset, "760M, 2.7B, 13B, 66B or 175B");
  auto* params_opt = cost->add_option("--params", params_text, "explicit b,n,h,m,l");
  preset_opt->excludes(params_opt);
  cost->add_option("--p", cost_p, "processor counts, comma separated");
  cost->add_option("--n", cost_n, "context lengths, comma separated");
  cost->add_option("--batch", batch, "batch size used with --preset");
  cost->add_option("--alpha", alpha, "seconds per message");
  cost->add_option("--beta", beta, "seconds per word");
  cost->add_option("--flops-rate", flops_rate, "scalar operations per second");
  cost->add_option("--format", format, "csv or json");
  cost->add_option("--out", out_path, "write output here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : attn2d::cli::kExitConfig;
  }

  try {
    const attn2d::Precision precision = attn2d::cli::precision_from_env();
    if (verify->parsed()) {
      attn2d::cli::VerifyOptions o;
      if (!strategy.empty()) o.strategy = attn2d::dist::parse_strategy(strategy);
      o.max_n = max_n;
      o.p_list = parse_list<std::size_t>(p_text, "--p");
      o.inject_fault = inject_fault;
      o.seed = seed;
      o.precision = precision;
      return attn2d::cli::cmd_verify(o, std::cout, std::cerr);
    }
    if (sweep->parsed()) {
      attn2d::cli::SweepOptions o;
      for (const auto& s : parse_list<std::string>(strategies, "--strategies")) {
        o.strategies.push_back(attn2d::dist::parse_strategy(s));
      }
      o.n_list = parse_list<std::size_t>(n_text, "--n");
      o.p_list = parse_list<std::size_t>(sweep_p, "--p");
      o.h = h;
      o.causal = parse_mask(mask);
      o.seed = seed;
      o.precision = precision;
      return with_output(out_path,
                         [&](std::ostream& os) { return attn2d::cli::cmd_sweep(o, os, std::cerr); });
    }
    if (simulate->parsed()) {
      attn2d::cli::RunConfig rc;
      rc.strategy = attn2d::dist::parse_strategy(sim_strategy);
      rc.n = sim_n;
      rc.p = sim_p;
      rc.h = sim_h;
      rc.causal = parse_mask(mask);
      rc.precision = precision;
      rc.scale = scale;
      rc.seed = seed;
      return with_output(json_path, [&](std::ostream& os) {
        return attn2d::cli::cmd_simulate(rc, os, std::cerr);
      });
    }
    if (cost->parsed()) {
      attn2d::cli::CostOptions o;
      if (!preset.empty()) o.preset = preset;
      if (!params_text.empty()) o.params = parse_list<double>(params_text, "--params");
      o.p_list = parse_list<double>(cost_p, "--p");
      o.n_list = parse_list<double>(cost_n, "--n");
      o.batch = batch;
      o.alpha = alpha;
      o.beta = beta;
      o.flops_rate = flops_rate;
      if (format != "csv" && format != "json") throw ConfigError("--format must be csv or json");
      o.json = format == "json";
      return with_output(out_path,
                         [&](std::ostream& os) { return attn2d::cli::cmd_cost(o, os, std::cerr); });
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return attn2d::cli::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return attn2d::cli::kExitFailure;
  }
  return attn2d::cli::kExitConfig;
}
