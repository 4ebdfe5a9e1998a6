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

#include <string>

#include "attn2d/attention.hpp"
#include "attn2d/mesh.hpp"
#include "doctest.h"

using namespace attn2d;
using namespace attn2d::mesh;

namespace {

Payload<double> scalar_payload(double x) { return Payload<double>{{Matrix<double>(1, 1, x)}, {}}; }
double scalar_of(const Payload<double>& p) { return p.mats.at(0)(0, 0); }

ProcCoord right_in_row(const Comm& c) {
  const std::size_t s = c.grid().side();
  return {c.coord().r, (c.coord().c + 1) % s};
}
ProcCoord left_in_row(const Comm& c) {
  const std::size_t s = c.grid().side();
  return {c.coord().r, (c.coord().c + s - 1) % s};
}

}  // namespace

TEST_CASE("grids") {
  const auto g = ProcGrid::square(16);
  CHECK(g.side() == 4);
  CHECK(g.rank({2, 3}) == 11);
  CHECK(g.coord(11) == ProcCoord{2, 3});
  CHECK(g.row_group(1).size() == 4);
  CHECK(g.col_group(2)[3] == ProcCoord{3, 2});
  CHECK_THROWS_AS(ProcGrid::square(3), ConfigError);
  CHECK_THROWS_AS(ProcGrid::square(0), ConfigError);
  CHECK_THROWS_AS(ProcGrid::line(4).side(), ConfigError);
  CHECK(to_string(ProcCoord{1, 2}) == "p(1,2)");
}

TEST_CASE("single processor returns its coordinate") {
  auto res = run_spmd(ProcGrid::square(1), [](Comm& c) { return c.coord(); });
  REQUIRE(res.results.size() == 1);
  CHECK(res.results[0] == ProcCoord{0, 0});
  CHECK(res.ledger.total() == Counters{});
}

TEST_CASE("row ring rotates ranks") {
  auto res = run_spmd(ProcGrid::square(4), [](Comm& c) {
    const auto got = c.send_recv(scalar_payload(static_cast<double>(c.rank())), right_in_row(c),
                                 left_in_row(c), "ring");
    return static_cast<std::size_t>(scalar_of(got));
  });
  // Rank layout: p(0,0)=0, p(0,1)=1, p(1,0)=2, p(1,1)=3.
  CHECK(res.results == std::vector<std::size_t>{1, 0, 3, 2});
}

TEST_CASE("deadlock is diagnosed") {
  // p(0,0) waits on p(1,1), which never sends.
  try {
    run_spmd(ProcGrid::square(4), [](Comm& c) {
      if (c.rank() == 0) c.send_recv(scalar_payload(1), ProcCoord{0, 1}, ProcCoord{1, 1}, "never");
      return 0;
    });
    FAIL("expected a deadlock");
  } catch (const DeadlockError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("p(0,0) waits on 'never' from p(1,1)") != std::string::npos);
  }
}

TEST_CASE("send_recv charges payload words") {
  auto res = run_spmd(ProcGrid::square(4), [](Comm& c) {
    if (c.coord().r != 0) return Matrix<double>();
    const Payload<double> p{{Matrix<double>(2, 4, static_cast<double>(c.rank()))}, {}};
    return c.send_recv(p, right_in_row(c), left_in_row(c), "x").mats[0];
  });
  CHECK(res.results[0](0, 0) == 1.0);
  CHECK(res.results[1](1, 3) == 0.0);
  for (std::size_t r : {0, 1}) {
    const auto cnt = res.ledger.at(r, Phase::kAttentionFwd, "x");
    CHECK(cnt.words_sent == 8);
    CHECK(cnt.words_received == 8);
    CHECK(cnt.messages_sent == 1);
  }
  CHECK(res.ledger.for_proc(2) == Counters{});
}

TEST_CASE("self exchange is free") {
  auto res = run_spmd(ProcGrid::square(4), [](Comm& c) {
    const ProcCoord mirror{c.coord().c, c.coord().r};
    return scalar_of(c.send_recv(scalar_payload(static_cast<double>(c.rank())), mirror, mirror,
                                 "transpose"));
  });
  CHECK(res.results == std::vector<double>{0, 2, 1, 3});
  CHECK(res.ledger.for_proc(0).words_sent == 0);
  CHECK(res.ledger.for_proc(3).words_sent == 0);
  CHECK(res.ledger.for_proc(1).words_sent == 1);
}

TEST_CASE("mismatched payload shapes are rejected") {
  CHECK_THROWS_AS(run_spmd(ProcGrid::square(4),
                           [](Comm& c) {
                             const Payload<double> p{{Matrix<double>(1, c.rank() + 1)}, {}};
                             c.send_recv(p, right_in_row(c), left_in_row(c), "x");
                             return 0;
                           }),
                  ShapeError);
}

TEST_CASE("async exchange waited at once behaves like send_recv") {
  auto res = run_spmd(ProcGrid::square(4), [](Comm& c) {
    PhaseScope scope(c, Phase::kLayout);
    auto ex = c.async_send_recv(scalar_payload(static_cast<double>(c.rank())), right_in_row(c),
                                left_in_row(c), "a");
    c.wait(ex.handle);
    return scalar_of(ex.incoming.get());
  });
  CHECK(res.results == std::vector<double>{1, 0, 3, 2});
  CHECK(res.ledger.at(0, Phase::kLayout, "a").words_sent == 1);
  CHECK(res.ledger.at(0, Phase::kLayout, "a").words_received == 1);
  CHECK(res.stats.outstanding_handles == 0);
}

TEST_CASE("async charges only on completion") {
  auto res = run_spmd(ProcGrid::square(4), [](Comm& c) {
    auto ex = c.async_send_recv(scalar_payload(1), right_in_row(c), left_in_row(c), "a");
    // Something else happens before the wait.
    c.send_recv(scalar_payload(2), right_in_row(c), left_in_row(c), "b");
    c.wait(ex.handle);
    return 0;
  });
  CHECK(res.ledger.total().words_sent == 8);
}

TEST_CASE("handle misuse is a fault") {
  SUBCASE("read before wait") {
    CHECK_THROWS_AS(run_spmd(ProcGrid::square(4),
                             [](Comm& c) {
                               auto ex = c.async_send_recv(scalar_payload(1), right_in_row(c),
                                                           left_in_row(c), "a");
                               const double x = scalar_of(ex.incoming.get());
                               c.wait(ex.handle);
                               return x;
                             }),
                    SimulationFault);
  }
  SUBCASE("double wait") {
    CHECK_THROWS_AS(run_spmd(ProcGrid::square(4),
                             [](Comm& c) {
                               auto ex = c.async_send_recv(scalar_payload(1), right_in_row(c),
                                                           left_in_row(c), "a");
                               c.wait(ex.handle);
                               c.wait(ex.handle);
                               return 0;
                             }),
                    SimulationFault);
  }
  SUBCASE("leaked handle") {
    CHECK_THROWS_AS(run_spmd(ProcGrid::square(4),
                             [](Comm& c) {
                               c.async_send_recv(scalar_payload(1), right_in_row(c),
                                                 left_in_row(c), "a");
                               return 0;
                             }),
                    SimulationFault);
  }
  SUBCASE("unbound handle") {
    CHECK_THROWS_AS(run_spmd(ProcGrid::square(1),
                             [](Comm& c) {
                               AsyncHandle h;
                               c.wait(h);
                               return 0;
                             }),
                    SimulationFault);
  }
}

TEST_CASE("double buffer allows two live slots and faults on a third") {
  auto ok = run_spmd(ProcGrid::square(4), [](Comm& c) {
    DoubleBuffer<double> buf(c, "s", scalar_payload(static_cast<double>(c.rank())));
    std::vector<double> seen;
    for (int step = 0; step < 3; ++step) {
      buf.exchange_async(left_in_row(c), right_in_row(c), "s");
      seen.push_back(scalar_of(buf.front()));
      buf.wait();
      buf.swap();
    }
    seen.push_back(scalar_of(buf.front()));
    return seen;
  });
  CHECK(ok.results[0] == std::vector<double>{0, 1, 0, 1});
  CHECK(ok.stats.peak_live_buffers.at("s") == 2);

  CHECK_THROWS_AS(run_spmd(ProcGrid::square(4),
                           [](Comm& c) {
                             DoubleBuffer<double> buf(c, "s", scalar_payload(1));
                             buf.exchange_async(left_in_row(c), right_in_row(c), "s");
                             buf.exchange_async(left_in_row(c), right_in_row(c), "s");
                             buf.wait();
                             return 0;
                           }),
                  SimulationFault);
}

TEST_CASE("all_gather") {
  SUBCASE("group of one") {
    auto res = run_spmd(ProcGrid::square(1), [](Comm& c) {
      const auto g = c.grid().row_group(0);
      return c.all_gather(scalar_payload(5), g, "g");
    });
    CHECK(res.results[0] == scalar_payload(5));
    CHECK(res.ledger.total().words_sent == 0);
  }
  SUBCASE("two members") {
    auto res = run_spmd(ProcGrid::square(4), [](Comm& c) {
      const auto g = c.grid().row_group(c.coord().r);
      return c.all_gather(scalar_payload(static_cast<double>(c.coord().c + 1)), g, "g").mats[0];
    });
    for (const auto& m : res.results) CHECK(m == Matrix<double>::from_rows({{1}, {2}}));
    for (std::size_t r = 0; r < 4; ++r) CHECK(res.ledger.for_proc(r).words_sent == 1);
  }
  SUBCASE("four members, 2x4 shards") {
    auto res = run_spmd(ProcGrid::square(16), [](Comm& c) {
      const auto g = c.grid().row_group(c.coord().r);
      const Payload<double> p{{Matrix<double>(2, 4, static_cast<double>(c.coord().c))}, {}};
      return c.all_gather(p, g, "g").mats[0];
    });
    CHECK(res.results[5].rows() == 8);
    CHECK(res.results[5](6, 0) == 3.0);
    for (std::size_t r = 0; r < 16; ++r) {
      CHECK(res.ledger.for_proc(r).words_sent == 24);
      CHECK(res.ledger.for_proc(r).messages_sent == 3);
    }
  }
  SUBCASE("unequal shards") {
    CHECK_THROWS_AS(run_spmd(ProcGrid::square(4),
                             [](Comm& c) {
                               const auto g = c.grid().row_group(c.coord().r);
                               const Payload<double> p{{Matrix<double>(c.coord().c + 1, 1)}, {}};
                               return c.all_gather(p, g, "g").mats[0].rows();
                             }),
                    ShapeError);
  }
}

TEST_CASE("reduce_scatter") {
  const Reducer<double> sum = [](const Payload<double>& a, const Payload<double>& b) {
    return Payload<double>{{add(a.mats[0], b.mats[0])}, {}};
  };
  SUBCASE("group of one") {
    auto res = run_spmd(ProcGrid::square(1), [&](Comm& c) {
      const Payload<double> p{{Matrix<double>::from_rows({{1}, {2}})}, {}};
      return c.reduce_scatter(p, c.grid().row_group(0), sum, {{0, 1}}, "rs");
    });
    CHECK(res.results[0].mats[0] == Matrix<double>::from_rows({{1}, {2}}));
  }
  SUBCASE("two members summing") {
    auto res = run_spmd(ProcGrid::square(4), [&](Comm& c) {
      const double f = c.coord().c == 0 ? 1 : 10;
      const Payload<double> p{{Matrix<double>::from_rows({{f}, {2 * f}})}, {}};
      return c.reduce_scatter(p, c.grid().row_group(c.coord().r), sum, {{0}, {1}}, "rs").mats[0];
    });
    CHECK(res.results[0] == Matrix<double>::from_rows({{11}}));
    CHECK(res.results[1] == Matrix<double>::from_rows({{22}}));
    CHECK(res.ledger.for_proc(0).words_sent == 1);
  }
  SUBCASE("attn_fix reducer") {
    auto partial = [](double shift) {
      return PartialAttn<double>{{shift, -shift}, Matrix<double>::from_rows({{1, shift}, {2, 3}}),
                                 {1 + shift, 2}};
    };
    const Reducer<double> fix = [](const Payload<double>& a, const Payload<double>& b) {
      const auto r = attn_fix(PartialAttn<double>{a.vecs[0], a.mats[0], a.vecs[1]},
                              PartialAttn<double>{b.vecs[0], b.mats[0], b.vecs[1]});
      return Payload<double>{{r.n}, {r.m, r.d}};
    };
    auto res = run_spmd(ProcGrid::square(4), [&](Comm& c) {
      const auto p = partial(c.coord().c == 0 ? 0.5 : 1.5);
      return c.reduce_scatter(Payload<double>{{p.n}, {p.m, p.d}},
                              c.grid().row_group(c.coord().r), fix, {{1}, {0}}, "rs");
    });
    const auto direct = attn_fix(partial(0.5), partial(1.5));
    const std::vector<std::size_t> row1{1}, row0{0};
    CHECK(res.results[0].mats[0] == select_rows<double>(direct.n, row1));
    CHECK(res.results[0].vecs[0] == select<double>(direct.m, row1));
    CHECK(res.results[1].vecs[1] == select<double>(direct.d, row0));
    CHECK(res.ledger.for_proc(0).words_sent == 2 + 2);
  }
  SUBCASE("layout must partition") {
    CHECK_THROWS_AS(run_spmd(ProcGrid::square(4),
                             [&](Comm& c) {
                               const Payload<double> p{{Matrix<double>(2, 1)}, {}};
                               return c.reduce_scatter(p, c.grid().row_group(c.coord().r), sum,
                                                       {{0}, {0}}, "rs");
                             }),
                    ShapeError);
  }
}

TEST_CASE("ledger bookkeeping") {
  auto prog = [](Comm& c) {
    const auto g = c.grid().row_group(c.coord().r);
    PhaseScope a(c, Phase::kAttentionBwd);
    c.all_gather(Payload<double>{{Matrix<double>(1, 3)}, {{1.0, 2.0}}}, g, "g");
    return 0;
  };
  const auto r1 = run_spmd(ProcGrid::square(16), prog);
  const auto r2 = run_spmd(ProcGrid::square(16), prog);
  CHECK(r1.ledger == r2.ledger);
  const auto t = r1.ledger.total();
  CHECK(t.words_sent == t.words_received);
  CHECK(t.words_sent == 16 * 3 * 5);
  CHECK(r1.ledger.for_proc(4, Phase::kAttentionBwd).words_sent == 15);
  CHECK(r1.ledger.for_proc(4, Phase::kAttentionFwd).words_sent == 0);

  const auto j = r1.ledger.to_json(ProcGrid::square(16));
  CHECK(j["totals"]["words_sent"] == 240);
  CHECK(j["per_proc"].size() == 16);
  CHECK(j["per_proc"][0]["phase"] == "attention_bwd");
  CHECK(j["per_proc"][0]["op"] == "g");
  CHECK(j["per_proc"][5]["r"] == 1);
  CHECK(j["per_proc"][5]["c"] == 1);
  CHECK(j["per_proc"][5]["msgs_recv"] == 3);

  auto bad = r1.ledger;
  bad.corrupt_for_testing(0, Phase::kAttentionBwd, "g", 1);
  CHECK_FALSE(bad == r1.ledger);
  CHECK(bad.total().words_sent != bad.total().words_received);
  CHECK(std::string(to_string(Phase::kCollectiveInternal)) == "collective_internal");
}
