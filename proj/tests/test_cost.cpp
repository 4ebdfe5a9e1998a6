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

#include <cmath>

#include "attn2d/cost_model.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace attn2d;
using namespace attn2d::cost;
using mesh::Phase;

namespace {

CostParams params(double n, double p) {
  CostParams c;
  c.b = 2;
  c.n = n;
  c.h = 64;
  c.m = 16;
  c.l = 4;
  c.p = p;
  return c;
}

dist::DistRun<double> simulate(dist::Strategy s, std::size_t n, std::size_t h, std::size_t p,
                               bool backward) {
  dist::DistAttnConfig cfg;
  cfg.strategy = s;
  cfg.n = n;
  cfg.h = h;
  cfg.p = p;
  cfg.mask = MaskKind::kCausal;
  const auto q = oracle::random_matrix(n, h, 1);
  const auto k = oracle::random_matrix(n, h, 2);
  const auto v = oracle::random_matrix(n, h, 3);
  const auto d = oracle::random_matrix(n, h, 4);
  return dist::run_distributed(cfg, q, k, v, backward ? &d : nullptr);
}

dist::DistAttnConfig config(dist::Strategy s, std::size_t n, std::size_t h, std::size_t p) {
  dist::DistAttnConfig cfg;
  cfg.strategy = s;
  cfg.n = n;
  cfg.h = h;
  cfg.p = p;
  cfg.mask = MaskKind::kCausal;
  return cfg;
}

}  // namespace

TEST_CASE("presets") {
  CHECK(model_presets().size() == 5);
  for (const auto& p : model_presets()) CHECK(p.hidden() == p.m * p.h);
  const auto& p27 = find_preset("2.7B");
  CHECK(p27.l == 32);
  CHECK(p27.m == 32);
  CHECK(p27.h == 80);
  CHECK(find_preset("175B").hidden() == 12288);
  CHECK(find_preset("760M").l == 24);
  CHECK(find_preset("66B").m == 72);
  CHECK(find_preset("13B").h == 128);
  CHECK_THROWS_AS(find_preset("7B"), ConfigError);
}

TEST_CASE("communication cost ratios") {
  const auto p27 = find_preset("2.7B");
  const auto at16 = with_preset(p27, 1, 65536, 16);
  const auto at64 = with_preset(p27, 1, 65536, 64);
  CHECK(comm_cost(CostStrategy::kRing, at64).asymptotic /
            comm_cost(CostStrategy::kRing, at16).asymptotic ==
        1.0);
  CHECK(comm_cost(CostStrategy::kAttn2d, at64).asymptotic /
            comm_cost(CostStrategy::kAttn2d, at16).asymptotic ==
        0.5);
  CHECK(comm_cost(CostStrategy::kAttn2d, at16).asymptotic ==
        1.0 * 65536 * 32 * 80 / 4);
  for (auto s : {CostStrategy::kMegatron, CostStrategy::kMegatronSp, CostStrategy::kSeqPar,
                 CostStrategy::kLightSeq}) {
    CHECK(comm_cost(s, at64).asymptotic == comm_cost(s, at16).asymptotic);
    CHECK(comm_cost(s, at64).formula_only);
  }
  CHECK_FALSE(comm_cost(CostStrategy::kRing, at16).formula_only);
  CHECK(comm_cost(CostStrategy::kUlysses, at16).asymptotic == 65536.0 * 80);
}

TEST_CASE("head-parallel strategies are bounded by the head count") {
  const auto p27 = find_preset("2.7B");
  CHECK_THROWS_AS(comm_cost(CostStrategy::kUlysses, with_preset(p27, 1, 4096, 64)),
                  InfeasibleStrategyError);
  CHECK_THROWS_AS(comm_cost(CostStrategy::kUsp, with_preset(p27, 1, 4096, 64)),
                  InfeasibleStrategyError);
  CHECK_NOTHROW(comm_cost(CostStrategy::kUlysses, with_preset(p27, 1, 4096, 32)));
  auto hybrid = with_preset(p27, 1, 4096, 64);
  hybrid.head_parallel = 8;
  CHECK_NOTHROW(comm_cost(CostStrategy::kUsp, hybrid));
  CHECK_NOTHROW(comm_cost(CostStrategy::kAttn2d, with_preset(p27, 1, 4096, 1024)));
}

TEST_CASE("monotonicity in P") {
  double prev_2d = INFINITY, prev_ring_leading = 0;
  for (double p : {1.0, 4.0, 16.0, 64.0, 256.0}) {
    const auto c = params(65536, p);
    const double two_d = comm_cost(CostStrategy::kAttn2d, c).asymptotic;
    CHECK(two_d < prev_2d);
    prev_2d = two_d;
    const double ring = *comm_cost(CostStrategy::kRing, c).leading;
    CHECK(ring >= prev_ring_leading);
    prev_ring_leading = ring;
    // Forward+backward ring words approach 6 N H per head from below.
    CHECK(ring <= c.b * c.m * 6 * c.n * c.h);
  }
  CHECK(*comm_cost(CostStrategy::kRing, params(65536, 1)).leading == 0);
  CHECK(*comm_cost(CostStrategy::kAttn2d, params(65536, 1)).leading == 0);
}

TEST_CASE("step cost dominance") {
  CostParams c;
  c.m = 4;
  c.h = 8;
  c.n = 32;
  CHECK(total_step_cost(c).dominant == Dominance::kComparable);
  c.n = 33;
  CHECK(total_step_cost(c).dominant == Dominance::kAttention);
  c.n = 31;
  CHECK(total_step_cost(c).dominant == Dominance::kLinear);

  const auto big = with_preset(find_preset("175B"), 1, 131072, 64);
  const auto s = total_step_cost(big);
  CHECK(s.dominant == Dominance::kAttention);
  CHECK(s.linear == 96.0 * 96 * 96 * 128 * 128);
  CHECK(s.attention == 96.0 * 96 * 131072 * 128 / 8);

  CostParams unit;
  for (double n : {10.0, 1000.0}) {
    unit.n = n;
    CHECK(total_step_cost(unit).attention == n);
    CHECK(total_step_cost(unit).linear == 1);
  }
}

TEST_CASE("memory cost") {
  CostParams c;
  c.l = 2;
  c.m = 2;
  c.p = 16;
  c.n = 64;
  c.h = 8;
  const auto m = memory_cost(CostStrategy::kAttn2d, c);
  CHECK(m.boundary);
  CHECK_FALSE(m.simplified);
  CHECK(m.persistent == m.transient);

  const auto p27 = memory_cost(CostStrategy::kAttn2d, with_preset(find_preset("2.7B"), 1, 4096, 64));
  CHECK(p27.simplified);
  CHECK_FALSE(p27.boundary);

  CostParams one;
  one.n = 100;
  one.h = 4;
  one.m = 3;
  one.l = 2;
  one.b = 5;
  CHECK(memory_cost(CostStrategy::kAttn2d, one).persistent == 5 * 2 * 3 * 100 * 4);
  CHECK(memory_cost(CostStrategy::kRing, one).formula_only);
}

TEST_CASE("time estimates") {
  CostParams c = params(4096, 16);
  c.causal = false;
  const FabricParams compute_only{0, 0, 1e12};
  const double t = estimate_time(CostStrategy::kAttn2d, c, compute_only).total;
  CostParams c2 = c;
  c2.n *= 2;
  CHECK(estimate_time(CostStrategy::kAttn2d, c2, compute_only).total / t == doctest::Approx(4));
  CostParams c3 = c;
  c3.p = 64;
  CHECK(estimate_time(CostStrategy::kAttn2d, c3, compute_only).total / t ==
        doctest::Approx(0.25));

  const FabricParams bw{0, 1e-9, 0};
  const double b16 = estimate_time(CostStrategy::kAttn2d, params(65536, 16), bw).bandwidth;
  const double b64 = estimate_time(CostStrategy::kAttn2d, params(65536, 64), bw).bandwidth;
  CHECK(b64 / b16 == doctest::Approx(0.5));
  const double r64 = estimate_time(CostStrategy::kRing, params(65536, 64), bw).bandwidth;
  CHECK(r64 / b64 == doctest::Approx(8));

  const FabricParams lat{1e-6, 0, 0};
  CHECK(estimate_time(CostStrategy::kAttn2d, params(1024, 1), lat).latency == 0);
  CHECK(estimate_time(CostStrategy::kRing, params(1024, 4), lat).latency ==
        doctest::Approx(1e-6 * 4 * (3 + 3 + 4)));
  CHECK_THROWS_AS(estimate_time(CostStrategy::kRing, c, FabricParams{-1, 0, 0}), ConfigError);
}

TEST_CASE("reconcile worked examples") {
  {
    const auto run = simulate(dist::Strategy::kAttn2dNo, 8, 4, 4, false);
    const auto cfg = config(dist::Strategy::kAttn2dNo, 8, 4, 4);
    CHECK(predict_proc_words(cfg, 1, Phase::kAttentionFwd) == 16 + 8 + 16 + 12);
    CHECK(predict_proc_words(cfg, 0, Phase::kAttentionFwd) == 8 + 16 + 12);
    const auto rep = reconcile(run.ledger, cfg, false);
    CHECK(rep.ok());
    CHECK(rep.terms.size() == 16);
  }
  {
    const auto run = simulate(dist::Strategy::kRing, 8, 4, 4, false);
    const auto cfg = config(dist::Strategy::kRing, 8, 4, 4);
    for (std::size_t r = 0; r < 4; ++r) CHECK(predict_proc_words(cfg, r, Phase::kAttentionFwd) == 48);
    CHECK(reconcile(run.ledger, cfg, false).ok());
  }
  for (auto s : {dist::Strategy::kAttn2dNo, dist::Strategy::kAttn2dO, dist::Strategy::kRing}) {
    const auto run = simulate(s, 8, 4, 1, true);
    const auto cfg = config(s, 8, 4, 1);
    CHECK(predict_proc_words(cfg, 0, Phase::kAttentionFwd) == 0);
    CHECK(predict_proc_words(cfg, 0, Phase::kAttentionBwd) == 0);
    CHECK(reconcile(run.ledger, cfg, true).ok());
  }
}

TEST_CASE("reconcile flags mismatches and config errors") {
  auto run = simulate(dist::Strategy::kAttn2dO, 16, 2, 4, true);
  const auto cfg = config(dist::Strategy::kAttn2dO, 16, 2, 4);
  CHECK(reconcile(run.ledger, cfg, true).ok());
  auto bad = run.ledger;
  bad.corrupt_for_testing(2, Phase::kAttentionBwd, dist::ops::kDqReduceScatter, 3);
  const auto rep = reconcile(bad, cfg, true);
  CHECK(rep.mismatches == 1);
  // A charge under an unexpected label is reported as well.
  auto extra = run.ledger;
  extra.record_send(0, Phase::kAttentionFwd, "stray", 5);
  CHECK(reconcile(extra, cfg, true).mismatches == 1);
  // Ledger of a bigger grid.
  const auto big = simulate(dist::Strategy::kAttn2dNo, 16, 2, 16, false);
  CHECK_THROWS_AS(reconcile(big.ledger, cfg, false), ConfigError);
}

TEST_CASE("reconcile is exact over a sweep") {
  for (auto s : {dist::Strategy::kAttn2dNo, dist::Strategy::kAttn2dO, dist::Strategy::kRing}) {
    for (std::size_t p : {1, 4, 16, 64}) {
      for (std::size_t n : {128, 256}) {
        CAPTURE(p);
        CAPTURE(n);
        const auto run = simulate(s, n, 2, p, true);
        CHECK(reconcile(run.ledger, config(s, n, 2, p), true).ok());
      }
    }
  }
}
