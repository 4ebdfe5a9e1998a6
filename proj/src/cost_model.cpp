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

#include "attn2d/cost_model.hpp"

#include <array>
#include <cmath>
#include <map>
#include <tuple>

namespace attn2d::cost {

using dist::DistAttnConfig;
using dist::Strategy;
using mesh::Phase;

namespace {

constexpr std::array<CostStrategy, 8> kAll = {
    CostStrategy::kMegatron, CostStrategy::kMegatronSp, CostStrategy::kSeqPar,
    CostStrategy::kRing,     CostStrategy::kLightSeq,   CostStrategy::kUlysses,
    CostStrategy::kUsp,      CostStrategy::kAttn2d};

const std::vector<ModelPreset>& preset_table() {
  static const std::vector<ModelPreset> table = {
      {"760M", 24, 16, 96}, {"2.7B", 32, 32, 80},   {"13B", 40, 40, 128},
      {"66B", 64, 72, 128}, {"175B", 96, 96, 128},
  };
  return table;
}

// Per-head, per-processor words of one simulated layer (N/P-row shards).
struct Schedule {
  double fwd_words = 0;
  double bwd_words = 0;
  double fwd_msgs = 0;
  double bwd_msgs = 0;
};

Schedule attn2d_schedule(double n, double h, double p) {
  const double s = std::sqrt(p);
  const double b = n / p;
  const double transpose = s > 1 ? 2 * b * h : 0;  // an off-diagonal processor
  Schedule out;
  out.fwd_words = transpose + (s - 1) * b * h + 2 * (s - 1) * b * h + (s - 1) * b * (h + 2);
  out.bwd_words = (s - 1) * b * (3 * h + 2) + 2 * (s - 1) * b * h + (s - 1) * b * h +
                  2 * (s - 1) * b * h + transpose;
  const double t_msgs = s > 1 ? 1 : 0;
  out.fwd_msgs = t_msgs + 3 * (s - 1);
  out.bwd_msgs = 4 * (s - 1) + t_msgs;
  return out;
}

Schedule ring_schedule(double n, double h, double p) {
  const double b = n / p;
  Schedule out;
  out.fwd_words = (p - 1) * 2 * b * h;
  out.bwd_words = (p - 1) * 2 * b * h + (p > 1 ? p * 2 * b * h : 0);
  out.fwd_msgs = p - 1;
  out.bwd_msgs = (p - 1) + (p > 1 ? p : 0);
  return out;
}

void check_head_parallel(CostStrategy s, const CostParams& params) {
  if (s != CostStrategy::kUlysses && s != CostStrategy::kUsp) return;
  const double degree = params.head_parallel.value_or(params.p);
  if (degree > params.m) {
    throw InfeasibleStrategyError(std::string(to_string(s)) + ": head-parallel degree " +
                                  std::to_string(static_cast<long long>(degree)) +
                                  " exceeds the number of heads " +
                                  std::to_string(static_cast<long long>(params.m)));
  }
}

}  // namespace

const char* to_string(CostStrategy s) {
  switch (s) {
    case CostStrategy::kMegatron:
      return "megatron";
    case CostStrategy::kMegatronSp:
      return "megatron_sp";
    case CostStrategy::kSeqPar:
      return "seq_par";
    case CostStrategy::kRing:
      return "ring";
    case CostStrategy::kLightSeq:
      return "lightseq";
    case CostStrategy::kUlysses:
      return "ulysses";
    case CostStrategy::kUsp:
      return "usp";
    case CostStrategy::kAttn2d:
      return "attn2d";
  }
  return "?";
}

CostStrategy parse_cost_strategy(const std::string& name) {
  for (CostStrategy s : kAll) {
    if (name == to_string(s)) return s;
  }
  throw ConfigError("unknown cost strategy '" + name + "'");
}

std::span<const CostStrategy> all_cost_strategies() { return kAll; }

void CostParams::validate() const {
  for (double x : {b, n, h, m, l, p}) {
    if (!(x > 0) || !std::isfinite(x)) throw ConfigError("cost parameters must be positive");
  }
  if (head_parallel && !(*head_parallel >= 1)) {
    throw ConfigError("head-parallel degree must be at least 1");
  }
}

std::span<const ModelPreset> model_presets() { return preset_table(); }

const ModelPreset& find_preset(const std::string& name) {
  for (const auto& p : preset_table()) {
    if (p.name == name) return p;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

CostParams with_preset(const ModelPreset& preset, double b, double n, double p) {
  CostParams c;
  c.b = b;
  c.n = n;
  c.p = p;
  c.l = static_cast<double>(preset.l);
  c.m = static_cast<double>(preset.m);
  c.h = static_cast<double>(preset.h);
  return c;
}

void FabricParams::validate() const {
  if (alpha < 0 || beta < 0 || flops_rate < 0) throw ConfigError("fabric parameters must be >= 0");
}

CommCost comm_cost(CostStrategy s, const CostParams& params) {
  params.validate();
  check_head_parallel(s, params);
  const double bnmh = params.b * params.n * params.m * params.h;
  CommCost out;
  switch (s) {
    case CostStrategy::kUlysses:
    case CostStrategy::kUsp:
      out.asymptotic = params.b * params.n * params.h;
      break;
    case CostStrategy::kAttn2d: {
      out.asymptotic = bnmh / std::sqrt(params.p);
      const Schedule sch = attn2d_schedule(params.n, params.h, params.p);
      out.leading = params.b * params.m * (sch.fwd_words + sch.bwd_words);
      out.formula_only = false;
      break;
    }
    case CostStrategy::kRing: {
      out.asymptotic = bnmh;
      const Schedule sch = ring_schedule(params.n, params.h, params.p);
      out.leading = params.b * params.m * (sch.fwd_words + sch.bwd_words);
      out.formula_only = false;
      break;
    }
    default:
      out.asymptotic = bnmh;
      break;
  }
  return out;
}

const char* to_string(Dominance d) {
  switch (d) {
    case Dominance::kLinear:
      return "linear";
    case Dominance::kAttention:
      return "attention";
    case Dominance::kComparable:
      return "comparable";
  }
  return "?";
}

StepCost total_step_cost(const CostParams& params) {
  params.validate();
  StepCost out;
  out.linear = params.l * params.m * params.m * params.h * params.h;
  out.attention = params.b * params.l * params.m * params.n * params.h / std::sqrt(params.p);
  out.total = out.linear + out.attention;
  const double mh = params.m * params.h;
  out.dominant = params.n > mh   ? Dominance::kAttention
                 : params.n < mh ? Dominance::kLinear
                                 : Dominance::kComparable;
  return out;
}

MemoryCost memory_cost(CostStrategy s, const CostParams& params) {
  params.validate();
  MemoryCost out;
  out.persistent = params.b * params.l * params.m * params.n * params.h / params.p;
  if (s == CostStrategy::kAttn2d) {
    out.formula_only = false;
    out.transient = params.b * params.n * params.h / std::sqrt(params.p);
    const double lm = params.l * params.m;
    const double side = std::sqrt(params.p);
    out.simplified = lm > side;
    out.boundary = lm == side;
  } else {
    out.simplified = true;
  }
  out.total = out.persistent + out.transient;
  return out;
}

TimeEstimate estimate_time(CostStrategy s, const CostParams& params, const FabricParams& fabric) {
  fabric.validate();
  const CommCost comm = comm_cost(s, params);
  double msgs_per_layer = 0;
  if (s == CostStrategy::kAttn2d) {
    const Schedule sch = attn2d_schedule(params.n, params.h, params.p);
    msgs_per_layer = sch.fwd_msgs + sch.bwd_msgs;
  } else if (s == CostStrategy::kRing) {
    const Schedule sch = ring_schedule(params.n, params.h, params.p);
    msgs_per_layer = sch.fwd_msgs + sch.bwd_msgs;
  } else {
    // One ring collective each way.
    msgs_per_layer = 2 * (params.p - 1);
  }
  const double elems = params.causal ? params.n * (params.n + 1) / 2 : params.n * params.n;
  const double flops = 14 * params.h * elems * params.b * params.m * params.l / params.p;

  TimeEstimate out;
  out.latency = fabric.alpha * msgs_per_layer * params.l;
  out.bandwidth = fabric.beta * comm.asymptotic * params.l;
  out.compute = fabric.flops_rate > 0 ? flops / fabric.flops_rate : 0;
  out.total = out.latency + out.bandwidth + out.compute;
  return out;
}

std::vector<TermPrediction> predict_terms(const DistAttnConfig& cfg, bool with_backward) {
  cfg.validate();
  const auto grid = cfg.grid();
  const std::uint64_t b = cfg.shard_rows();
  const std::uint64_t h = cfg.h;
  std::vector<TermPrediction> out;
  for (std::size_t rank = 0; rank < grid.size(); ++rank) {
    auto add = [&](Phase ph, const char* op, std::uint64_t w) { out.push_back({rank, ph, op, w}); };
    if (cfg.strategy == Strategy::kRing) {
      const std::uint64_t p = cfg.p;
      add(Phase::kAttentionFwd, dist::ops::kKvRing, (p - 1) * 2 * b * h);
      if (with_backward) {
        add(Phase::kAttentionBwd, dist::ops::kKvRing, (p - 1) * 2 * b * h);
        add(Phase::kAttentionBwd, dist::ops::kDkvRing, p > 1 ? p * 2 * b * h : 0);
      }
      continue;
    }
    const std::uint64_t s = grid.side();
    const auto who = grid.coord(rank);
    const std::uint64_t transpose = who.r == who.c ? 0 : 2 * b * h;
    add(Phase::kAttentionFwd, dist::ops::kKvTranspose, transpose);
    add(Phase::kAttentionFwd, dist::ops::kQGather, (s - 1) * b * h);
    add(Phase::kAttentionFwd, dist::ops::kKvGather, 2 * (s - 1) * b * h);
    add(Phase::kAttentionFwd, dist::ops::kOutReduceScatter, (s - 1) * b * (h + 2));
    if (with_backward) {
      add(Phase::kAttentionBwd, dist::ops::kQGather, (s - 1) * b * (3 * h + 2));
      add(Phase::kAttentionBwd, dist::ops::kKvGather, 2 * (s - 1) * b * h);
      add(Phase::kAttentionBwd, dist::ops::kDqReduceScatter, (s - 1) * b * h);
      add(Phase::kAttentionBwd, dist::ops::kDkvReduceScatter, 2 * (s - 1) * b * h);
      add(Phase::kAttentionBwd, dist::ops::kDkvTranspose, transpose);
    }
  }
  return out;
}

std::uint64_t predict_proc_words(const DistAttnConfig& cfg, std::size_t rank, Phase phase) {
  std::uint64_t total = 0;
  for (const auto& t : predict_terms(cfg, phase == Phase::kAttentionBwd)) {
    if (t.rank == rank && t.phase == phase) total += t.words;
  }
  return total;
}

ReconcileReport reconcile(const mesh::CommLedger& ledger, const DistAttnConfig& cfg,
                          bool with_backward) {
  const auto grid = cfg.grid();
  for (const auto& [key, counters] : ledger.entries()) {
    if (key.rank >= grid.size()) {
      throw ConfigError("ledger has processor " + std::to_string(key.rank) + " but the grid has " +
                        std::to_string(grid.size()));
    }
  }
  ReconcileReport report;
  std::map<std::tuple<std::size_t, Phase, std::string>, bool> covered;
  for (const auto& t : predict_terms(cfg, with_backward)) {
    const auto c = ledger.at(t.rank, t.phase, t.op);
    report.terms.push_back({t.rank, t.phase, t.op, t.words, c.words_sent, c.words_received});
    covered[{t.rank, t.phase, t.op}] = true;
  }
  // Anything measured in an attention phase that no term predicts.
  for (const auto& [key, c] : ledger.entries()) {
    if (key.phase != Phase::kAttentionFwd && key.phase != Phase::kAttentionBwd) continue;
    if (!with_backward && key.phase == Phase::kAttentionBwd) continue;
    if (covered.count({key.rank, key.phase, key.op})) continue;
    report.terms.push_back({key.rank, key.phase, key.op, 0, c.words_sent, c.words_received});
  }
  for (const auto& t : report.terms) {
    if (!t.match()) ++report.mismatches;
  }
  return report;
}

}  // namespace attn2d::cost
