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

// Analytic communication, memory and time costs, plus reconciliation of the
// closed-form per-processor word counts against measured ledgers.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attn2d/dist_attention.hpp"
#include "attn2d/mesh.hpp"

namespace attn2d::cost {

enum class CostStrategy { kMegatron, kMegatronSp, kSeqPar, kRing, kLightSeq, kUlysses, kUsp, kAttn2d };

const char* to_string(CostStrategy s);
CostStrategy parse_cost_strategy(const std::string& name);  // ConfigError on unknown names
std::span<const CostStrategy> all_cost_strategies();

struct CostParams {
  double b = 1;  // batch
  double n = 1;  // context length
  double h = 1;  // head dimension
  double m = 1;  // heads
  double l = 1;  // layers
  double p = 1;  // processors
  // Degree of the head-parallel dimension for ulysses/usp; defaults to p.
  std::optional<double> head_parallel;
  bool causal = true;

  void validate() const;  // ConfigError unless all positive
};

struct ModelPreset {
  std::string name;
  std::size_t l;
  std::size_t m;
  std::size_t h;
  std::size_t hidden() const { return m * h; }
};

std::span<const ModelPreset> model_presets();
const ModelPreset& find_preset(const std::string& name);  // ConfigError when unknown
CostParams with_preset(const ModelPreset& preset, double b, double n, double p);

struct FabricParams {
  double alpha = 0;       // seconds per message
  double beta = 0;        // seconds per word
  double flops_rate = 0;  // scalar ops per second; 0 disables the compute term

  void validate() const;  // ConfigError on negative fields
};

struct CommCost {
  // Words per layer with order constants dropped.
  double asymptotic = 0;
  // Exact per-processor forward+backward words per layer for the simulated
  // schedules (ring, attn2d); empty for formula-only strategies.
  std::optional<double> leading;
  bool formula_only = true;
};

// Throws InfeasibleStrategyError when the head-parallel degree of ulysses or
// usp exceeds the number of heads.
CommCost comm_cost(CostStrategy s, const CostParams& params);

enum class Dominance { kLinear, kAttention, kComparable };
const char* to_string(Dominance d);

struct StepCost {
  double linear = 0;     // L M^2 H^2
  double attention = 0;  // B L M N H / sqrt(P)
  double total = 0;
  Dominance dominant = Dominance::kComparable;
};

StepCost total_step_cost(const CostParams& params);

struct MemoryCost {
  double persistent = 0;  // B L M N H / P
  double transient = 0;   // B N H / sqrt(P) for attn2d
  double total = 0;
  bool simplified = false;  // transient term negligible (L M > sqrt(P))
  bool boundary = false;    // L M == sqrt(P): both terms of the same order
  bool formula_only = true;
};

MemoryCost memory_cost(CostStrategy s, const CostParams& params);

struct TimeEstimate {
  double latency = 0;
  double bandwidth = 0;
  double compute = 0;
  double total = 0;
};

// Per training step: alpha * messages + beta * words + flops / flops_rate.
TimeEstimate estimate_time(CostStrategy s, const CostParams& params, const FabricParams& fabric);

// Closed-form per-processor words sent in each (phase, op) of a simulated run.
struct TermPrediction {
  std::size_t rank;
  mesh::Phase phase;
  std::string op;
  std::uint64_t words;
};

std::vector<TermPrediction> predict_terms(const dist::DistAttnConfig& cfg, bool with_backward);
std::uint64_t predict_proc_words(const dist::DistAttnConfig& cfg, std::size_t rank,
                                 mesh::Phase phase);

struct TermCheck {
  std::size_t rank;
  mesh::Phase phase;
  std::string op;
  std::uint64_t predicted;
  std::uint64_t measured_sent;
  std::uint64_t measured_recv;
  bool match() const { return predicted == measured_sent && predicted == measured_recv; }
};

struct ReconcileReport {
  std::vector<TermCheck> terms;
  std::size_t mismatches = 0;
  bool ok() const { return mismatches == 0; }
};

// Compares every predicted term and every measured attention-phase entry.
// ConfigError when the ledger mentions processors outside cfg's grid.
ReconcileReport reconcile(const mesh::CommLedger& ledger, const dist::DistAttnConfig& cfg,
                          bool with_backward);

}  // namespace attn2d::cost
