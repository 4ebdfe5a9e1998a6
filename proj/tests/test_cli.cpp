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

#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

#include "attn2d/cli.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace attn2d;
using namespace attn2d::cli;

namespace {

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) out.push_back(line);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::string get(std::size_t row, const std::string& col) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == col) return rows.at(row).at(i);
    }
    FAIL("no column " << col);
    return {};
  }
};

Csv parse_csv(const std::string& text) {
  const auto ls = lines_of(text);
  Csv csv;
  csv.header = fields(ls.at(1));
  for (std::size_t i = 2; i < ls.size(); ++i) csv.rows.push_back(fields(ls[i]));
  return csv;
}

}  // namespace

TEST_CASE("verify exit codes") {
  std::ostringstream out, err;
  VerifyOptions all;
  CHECK(cmd_verify(all, out, err) == kExitOk);
  CHECK(out.str().find("192 cases, 0 failed") != std::string::npos);

  VerifyOptions p1;
  p1.p_list = {1};
  std::ostringstream o1;
  CHECK(cmd_verify(p1, o1, err) == kExitOk);
  CHECK(o1.str().find(" p=4 ") == std::string::npos);

  VerifyOptions fault;
  fault.strategy = dist::Strategy::kAttn2dNo;
  fault.max_n = 16;
  fault.inject_fault = true;
  std::ostringstream o2, e2;
  CHECK(cmd_verify(fault, o2, e2) == kExitFailure);
  CHECK(o2.str().find("ledger=MISMATCH") != std::string::npos);
  CHECK(e2.str().find("predicted") != std::string::npos);
}

TEST_CASE("sweep columns") {
  SweepOptions o;
  o.strategies = {dist::Strategy::kAttn2dNo, dist::Strategy::kRing};
  o.n_list = {256};
  o.p_list = {4, 16, 64};
  std::ostringstream out, err;
  REQUIRE(cmd_sweep(o, out, err) == kExitOk);
  const auto text = out.str();
  CHECK(lines_of(text).at(0) == kSweepSchema);
  const Csv csv = parse_csv(text);
  CHECK(csv.header == std::vector<std::string>{"strategy", "n", "h", "p", "mask", "phase",
                                               "words_measured", "words_predicted", "match",
                                               "score_elems_min", "score_elems_max", "note"});
  REQUIRE(csv.rows.size() == 12);
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    CHECK(csv.get(i, "match") == "true");
    CHECK(csv.get(i, "words_measured") == csv.get(i, "words_predicted"));
  }
  // attn2d_no forward rows are 0, 2, 4: minus the transpose, words halve (up to the ring factor).
  auto fwd = [&](std::size_t row) { return std::stod(csv.get(row, "words_measured")); };
  const double b4 = 256.0 / 4, b16 = 256.0 / 16, b64 = 256.0 / 64;
  CHECK(fwd(0) - 2 * b4 * 8 == 1 * b4 * (8 + 16 + 10));
  CHECK((fwd(2) - 2 * b16 * 8) / 3 * 4 / ((fwd(0) - 2 * b4 * 8) / 1 * 2) == doctest::Approx(0.5));
  CHECK((fwd(4) - 2 * b64 * 8) / 7 * 8 / ((fwd(2) - 2 * b16 * 8) / 3 * 4) == doctest::Approx(0.5));
  // Ring forward rows 6, 8, 10 follow (P-1)/P.
  CHECK(fwd(8) / fwd(6) == doctest::Approx((15.0 / 16) / (3.0 / 4)));
  CHECK(fwd(10) / fwd(8) == doctest::Approx((63.0 / 64) / (15.0 / 16)));
}

TEST_CASE("sweep edge cases") {
  SweepOptions o;
  o.strategies = {dist::Strategy::kAttn2dO};
  o.n_list = {64};
  std::ostringstream out, err;
  CHECK(cmd_sweep(o, out, err) == kExitOk);
  CHECK(lines_of(out.str()).size() == 2);

  o.strategies = {dist::Strategy::kRing, dist::Strategy::kAttn2dNo};
  o.n_list = {8};
  o.p_list = {16, 3};
  std::ostringstream out2;
  CHECK(cmd_sweep(o, out2, err) == kExitOk);
  const Csv csv = parse_csv(out2.str());
  REQUIRE(csv.rows.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(csv.get(i, "note").rfind("skipped:", 0) == 0);
    CHECK(csv.get(i, "words_measured").empty());
  }
}

TEST_CASE("simulate report") {
  RunConfig rc;
  rc.strategy = dist::Strategy::kAttn2dNo;
  rc.n = 8;
  rc.p = 4;
  rc.h = 4;
  std::ostringstream out, err;
  REQUIRE(cmd_simulate(rc, out, err) == kExitOk);
  const auto j = nlohmann::json::parse(out.str());
  CHECK(j["max_error"].get<double>() < 1e-9);
  CHECK(j["grad_max_error"].get<double>() < 1e-8);
  CHECK(j["score_elements"] == std::vector<int>{10, 6, 10, 10});
  CHECK(j["reconcile"]["ok"] == true);
  CHECK(j["ledger"]["totals"]["words_sent"] == j["ledger"]["totals"]["words_recv"]);
  CHECK(j["saved_state_words"].size() == 4);

  std::ostringstream again;
  cmd_simulate(rc, again, err);
  CHECK(again.str() == out.str());

  rc.p = 1;
  std::ostringstream one;
  REQUIRE(cmd_simulate(rc, one, err) == kExitOk);
  const auto j1 = nlohmann::json::parse(one.str());
  CHECK(j1["ledger"]["totals"]["words_sent"] == 0);
  for (const auto& e : j1["ledger"]["per_proc"]) CHECK(e["words_sent"] == 0);

  rc.p = 3;
  std::ostringstream bad, bad_err;
  CHECK(cmd_simulate(rc, bad, bad_err) == kExitConfig);
  CHECK(bad_err.str().find("configuration error") != std::string::npos);
  rc.n = 9;
  CHECK(cmd_simulate(rc, bad, bad_err) == kExitConfig);
}

TEST_CASE("cost table") {
  CostOptions o;
  o.preset = "2.7B";
  o.p_list = {16, 64};
  std::ostringstream out, err;
  REQUIRE(cmd_cost(o, out, err) == kExitOk);
  const auto text = out.str();
  CHECK(lines_of(text).at(0).find("l=32 m=32 h=80") != std::string::npos);
  const Csv csv = parse_csv(text);
  double attn16 = 0, attn64 = 0, ring16 = 0, ring64 = 0;
  bool ulysses64_infeasible = false;
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto s = csv.get(i, "strategy");
    const auto p = csv.get(i, "p");
    if (s == "attn2d") (p == "16" ? attn16 : attn64) = std::stod(csv.get(i, "words_per_layer"));
    if (s == "ring") (p == "16" ? ring16 : ring64) = std::stod(csv.get(i, "words_per_layer"));
    if (s == "ulysses" && p == "64") {
      ulysses64_infeasible = csv.get(i, "feasible") == "false" &&
                             csv.get(i, "note").find("infeasible") != std::string::npos;
    }
  }
  CHECK(attn16 / attn64 == 2.0);
  CHECK(ring16 / ring64 == 1.0);
  CHECK(ulysses64_infeasible);

  o.json = true;
  o.alpha = 1e-6;
  o.beta = 1e-9;
  std::ostringstream js;
  REQUIRE(cmd_cost(o, js, err) == kExitOk);
  const auto j = nlohmann::json::parse(js.str());
  CHECK(j["preset"]["hidden"] == 2560);
  CHECK(j["rows"].size() == 16);
  CHECK(j["rows"][0]["time_s"].is_number());

  CostOptions bad;
  bad.preset = "1B";
  std::ostringstream e;
  CHECK(cmd_cost(bad, out, e) == kExitConfig);
  CostOptions explicit_params;
  explicit_params.params = std::vector<double>{1, 1024, 64, 8, 2};
  std::ostringstream ep;
  CHECK(cmd_cost(explicit_params, ep, e) == kExitOk);
  explicit_params.params = std::vector<double>{1, 1024};
  CHECK(cmd_cost(explicit_params, ep, e) == kExitConfig);
}

TEST_CASE("precision from the environment") {
  unsetenv("ATTN2D_PRECISION");
  CHECK(precision_from_env() == Precision::kDouble);
  setenv("ATTN2D_PRECISION", "single", 1);
  CHECK(precision_from_env() == Precision::kSingle);
  setenv("ATTN2D_PRECISION", "half", 1);
  CHECK_THROWS_AS(precision_from_env(), ConfigError);
  unsetenv("ATTN2D_PRECISION");

  RunConfig rc;
  rc.precision = Precision::kSingle;
  rc.n = 16;
  std::ostringstream out, err;
  CHECK(cmd_simulate(rc, out, err) == kExitOk);
  CHECK(nlohmann::json::parse(out.str())["config"]["precision"] == "single");
}
