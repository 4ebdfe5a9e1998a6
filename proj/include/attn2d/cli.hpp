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

// Subcommands of the attn2d command-line tool. Each returns the process exit
// status: 0 success, 1 verification failure, 2 configuration error.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "attn2d/cost_model.hpp"
#include "attn2d/dist_attention.hpp"

namespace attn2d::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

// Dense oracle only below this context length.
inline constexpr std::size_t kOracleMaxN = 4096;

inline constexpr const char* kSweepSchema = "# attn2d-sweep v1";
inline constexpr const char* kCostSchema = "# attn2d-cost v1";

// ATTN2D_PRECISION in {single, double}; double when unset.
Precision precision_from_env();

struct VerifyOptions {
  std::optional<dist::Strategy> strategy;
  std::size_t max_n = 64;
  std::vector<std::size_t> p_list = {1, 4, 16};
  bool inject_fault = false;  // flips one ledger count in the first case
  std::uint64_t seed = 1;
  Precision precision = Precision::kDouble;
};

int cmd_verify(const VerifyOptions& opts, std::ostream& out, std::ostream& err);

struct SweepOptions {
  std::vector<dist::Strategy> strategies;
  std::vector<std::size_t> n_list;
  std::vector<std::size_t> p_list;
  std::size_t h = 8;
  bool causal = true;
  std::uint64_t seed = 1;
  Precision precision = Precision::kDouble;
};

int cmd_sweep(const SweepOptions& opts, std::ostream& out, std::ostream& err);

struct RunConfig {
  dist::Strategy strategy = dist::Strategy::kAttn2dNo;
  std::size_t n = 8;
  std::size_t h = 4;
  std::size_t p = 4;
  bool causal = true;
  Precision precision = Precision::kDouble;
  std::optional<double> scale;  // default 1/sqrt(h)
  std::uint64_t seed = 1;
};

int cmd_simulate(const RunConfig& cfg, std::ostream& out, std::ostream& err);

struct CostOptions {
  std::optional<std::string> preset;
  // Explicit b, n, h, m, l when no preset is given.
  std::optional<std::vector<double>> params;
  std::vector<double> p_list = {4, 16, 64};
  std::vector<double> n_list;  // overrides n; default 32768 with a preset
  double batch = 1;
  std::optional<double> alpha;
  std::optional<double> beta;
  double flops_rate = 0;
  bool json = false;
};

int cmd_cost(const CostOptions& opts, std::ostream& out, std::ostream& err);

}  // namespace attn2d::cli
