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

#include "attn2d/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace attn2d::cli {

using dist::DistAttnConfig;
using dist::Strategy;
using mesh::Phase;
using Json = nlohmann::ordered_json;

Precision precision_from_env() {
  const char* v = std::getenv("ATTN2D_PRECISION");
  if (v == nullptr || *v == '\0') return Precision::kDouble;
  const std::string s(v);
  if (s == "double") return Precision::kDouble;
  if (s == "single") return Precision::kSingle;
  throw ConfigError("ATTN2D_PRECISION must be 'single' or 'double', got '" + s + "'");
}

namespace {

const char* precision_name(Precision p) { return p == Precision::kSingle ? "single" : "double"; }
const char* mask_name(bool causal) { return causal ? "causal" : "none"; }

std::string num(double x) {
  char buf[64];
  if (std::isfinite(x) && x == std::floor(x) && std::abs(x) < 1e15) {
    std::snprintf(buf, sizeof buf, "%.0f", x);
  } else {
    std::snprintf(buf, sizeof buf, "%.12g", x);
  }
  return buf;
}

std::string sci(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3e", x);
  return buf;
}

// Quotes a field that contains a comma or a quote.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

struct Inputs {
  Matrix<double> q, k, v, d_out;
};

// Uniform [-1, 1] entries for Q, K, V and dO, drawn in that order.
Inputs make_inputs(std::size_t n, std::size_t h, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  auto draw = [&] {
    Matrix<double> m(n, h);
    for (auto& x : m.data()) x = dist(gen);
    return m;
  };
  Inputs in;
  in.q = draw();
  in.k = draw();
  in.v = draw();
  in.d_out = draw();
  return in;
}

struct CaseOutcome {
  Matrix<double> out;
  Gradients<double> grads;
  mesh::CommLedger ledger;
  mesh::SimStats stats;
  std::vector<std::size_t> score_elements;
  std::vector<std::size_t> saved_words;
  std::optional<double> fwd_err;
  std::optional<double> grad_err;
};

template <typename T>
CaseOutcome run_typed(const DistAttnConfig& cfg, const Inputs& in) {
  CaseOutcome o;
  const Matrix<T> d_out = cast<T>(in.d_out);
  auto run = dist::run_distributed<T>(cfg, cast<T>(in.q), cast<T>(in.k), cast<T>(in.v), &d_out);
  o.out = cast<double>(run.out);
  o.grads = {cast<double>(run.grads->dq), cast<double>(run.grads->dk),
             cast<double>(run.grads->dv)};
  o.ledger = std::move(run.ledger);
  o.stats = std::move(run.stats);
  o.score_elements = std::move(run.score_elements);
  o.saved_words = std::move(run.saved_words);
  return o;
}

CaseOutcome run_case(const DistAttnConfig& cfg, std::uint64_t seed) {
  const Inputs in = make_inputs(cfg.n, cfg.h, seed);
  CaseOutcome o = cfg.precision == Precision::kSingle ? run_typed<float>(cfg, in)
                                                      : run_typed<double>(cfg, in);
  if (cfg.n <= kOracleMaxN) {
    const auto mask =
        cfg.mask == MaskKind::kCausal ? MaskSpec<double>::causal() : MaskSpec<double>::none();
    const auto ref = reference_attention(in.q, in.k, in.v, mask, cfg.scale);
    o.fwd_err = relative_error(o.out, ref);
    const auto g = reference_attention_grad(in.q, in.k, in.v, mask, cfg.scale, in.d_out);
    o.grad_err = std::max({relative_error(o.grads.dq, g.dq), relative_error(o.grads.dk, g.dk),
                           relative_error(o.grads.dv, g.dv)});
  }
  return o;
}

DistAttnConfig make_config(Strategy s, std::size_t n, std::size_t h, std::size_t p, bool causal,
                           Precision prec, std::optional<double> scale) {
  DistAttnConfig cfg;
  cfg.strategy = s;
  cfg.n = n;
  cfg.h = h;
  cfg.p = p;
  cfg.mask = causal ? MaskKind::kCausal : MaskKind::kNone;
  cfg.precision = prec;
  cfg.scale = scale.value_or(1.0 / std::sqrt(static_cast<double>(h)));
  cfg.validate();
  return cfg;
}

// Unmasked score pairs each processor must evaluate, by enumeration.
std::vector<std::size_t> enumerate_scores(const DistAttnConfig& cfg) {
  const auto grid = cfg.grid();
  std::vector<std::size_t> out;
  for (std::size_t rank = 0; rank < grid.size(); ++rank) {
    const auto who = grid.coord(rank);
    std::vector<std::size_t> qs, ks;
    if (cfg.strategy == Strategy::kRing) {
      qs = dist::ring_indices(cfg.n, cfg.p, who.c);
      for (std::size_t j = 0; j < cfg.n; ++j) ks.push_back(j);
    } else {
      qs = dist::layout_indices({cfg.n, cfg.p, dist::LayoutForm::kRowGathered}, who);
      ks = dist::layout_indices({cfg.n, cfg.p, dist::LayoutForm::kColGathered}, who);
    }
    std::size_t count = 0;
    for (std::size_t i : qs)
      for (std::size_t j : ks)
        if (cfg.mask != MaskKind::kCausal || i >= j) ++count;
    out.push_back(count);
  }
  return out;
}

struct Tolerance {
  double fwd;
  double grad;
};

Tolerance tolerance_for(Precision p) {
  return p == Precision::kSingle ? Tolerance{1e-4, 1e-3} : Tolerance{1e-9, 1e-8};
}

}  // namespace

int cmd_verify(const VerifyOptions& opts, std::ostream& out, std::ostream& err) {
  std::vector<Strategy> strategies = {Strategy::kRing, Strategy::kAttn2dNo, Strategy::kAttn2dO};
  if (opts.strategy) strategies = {*opts.strategy};
  const Tolerance tol = tolerance_for(opts.precision);
  std::size_t cases = 0, failures = 0, skipped = 0;
  bool fault_pending = opts.inject_fault;

  for (Strategy s : strategies) {
    for (std::size_t p : opts.p_list) {
      for (std::size_t n : {8, 16, 32, 64, 128, 256}) {
        if (n > opts.max_n) continue;
        for (std::size_t h : {2, 4, 8}) {
          for (bool causal : {false, true}) {
            DistAttnConfig cfg;
            try {
              cfg = make_config(s, n, h, p, causal, opts.precision, std::nullopt);
            } catch (const ConfigError&) {
              ++skipped;
              continue;
            }
            ++cases;
            CaseOutcome o = run_case(cfg, opts.seed + cases);
            if (fault_pending) {
              const auto terms = cost::predict_terms(cfg, true);
              o.ledger.corrupt_for_testing(terms.front().rank, terms.front().phase,
                                           terms.front().op, 1);
              fault_pending = false;
            }
            std::vector<std::string> problems;
            if (o.fwd_err && !(*o.fwd_err < tol.fwd)) problems.push_back("forward error");
            if (o.grad_err && !(*o.grad_err < tol.grad)) problems.push_back("gradient error");
            const auto rep = cost::reconcile(o.ledger, cfg, true);
            if (!rep.ok()) {
              std::ostringstream msg;
              msg << rep.mismatches << " ledger term(s) off";
              for (const auto& t : rep.terms) {
                if (!t.match()) {
                  msg << "; rank " << t.rank << ' ' << mesh::to_string(t.phase) << '/' << t.op
                      << " predicted " << t.predicted << " sent " << t.measured_sent
                      << " recv " << t.measured_recv;
                }
              }
              problems.push_back(msg.str());
            }
            const auto total = o.ledger.total();
            if (total.words_sent != total.words_received) problems.push_back("words not conserved");
            if (o.stats.outstanding_handles != 0) problems.push_back("outstanding handles");
            for (const auto& [stream, peak] : o.stats.peak_live_buffers) {
              if (peak > 2) problems.push_back("stream " + stream + " used more than two buffers");
            }
            if (o.score_elements != enumerate_scores(cfg)) problems.push_back("score counts");

            out << (problems.empty() ? "ok   " : "FAIL ") << dist::to_string(s) << " n=" << n
                << " h=" << h << " p=" << p << " mask=" << mask_name(causal)
                << " fwd_err=" << (o.fwd_err ? sci(*o.fwd_err) : "n/a")
                << " grad_err=" << (o.grad_err ? sci(*o.grad_err) : "n/a")
                << " ledger=" << (rep.ok() ? "match" : "MISMATCH") << '\n';
            if (!problems.empty()) {
              ++failures;
              for (const auto& pr : problems) err << "  " << pr << '\n';
            }
          }
        }
      }
    }
  }
  out << "verify: " << cases << " cases, " << failures << " failed, " << skipped
      << " invalid combinations skipped (" << precision_name(opts.precision) << ")\n";
  return failures == 0 ? kExitOk : kExitFailure;
}

int cmd_sweep(const SweepOptions& opts, std::ostream& out, std::ostream& err) {
  (void)err;
  out << kSweepSchema << '\n'
      << "strategy,n,h,p,mask,phase,words_measured,words_predicted,match,score_elems_min,"
         "score_elems_max,note\n";
  for (Strategy s : opts.strategies) {
    for (std::size_t n : opts.n_list) {
      for (std::size_t p : opts.p_list) {
        const std::string prefix = std::string(dist::to_string(s)) + ',' + std::to_string(n) +
                                   ',' + std::to_string(opts.h) + ',' + std::to_string(p) + ',' +
                                   mask_name(opts.causal) + ',';
        DistAttnConfig cfg;
        try {
          cfg = make_config(s, n, opts.h, p, opts.causal, opts.precision, std::nullopt);
        } catch (const ConfigError& e) {
          out << prefix << ",,,,,," << csv_field(std::string("skipped: ") + e.what()) << '\n';
          continue;
        }
        const CaseOutcome o = run_case(cfg, opts.seed);
        const auto rep = cost::reconcile(o.ledger, cfg, true);
        const auto [mn, mx] = std::minmax_element(o.score_elements.begin(), o.score_elements.end());
        for (Phase ph : {Phase::kAttentionFwd, Phase::kAttentionBwd}) {
          std::uint64_t measured = 0, predicted = 0;
          for (std::size_t rank = 0; rank < p; ++rank) {
            measured = std::max(measured, o.ledger.for_proc(rank, ph).words_sent);
            predicted = std::max(predicted, cost::predict_proc_words(cfg, rank, ph));
          }
          bool match = true;
          for (const auto& t : rep.terms) {
            if (t.phase == ph && !t.match()) match = false;
          }
          out << prefix << mesh::to_string(ph) << ',' << measured << ',' << predicted << ','
              << (match ? "true" : "false") << ',' << *mn << ',' << *mx << ",\n";
        }
      }
    }
  }
  return kExitOk;
}

int cmd_simulate(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  DistAttnConfig cfg;
  try {
    cfg = make_config(rc.strategy, rc.n, rc.h, rc.p, rc.causal, rc.precision, rc.scale);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  }
  const CaseOutcome o = run_case(cfg, rc.seed);
  const auto rep = cost::reconcile(o.ledger, cfg, true);
  const Tolerance tol = tolerance_for(rc.precision);

  double checksum = 0;
  for (double x : o.out.data()) checksum += x;

  Json j;
  j["schema"] = "attn2d-simulate v1";
  j["config"] = {{"strategy", dist::to_string(rc.strategy)},
                 {"n", rc.n},
                 {"h", rc.h},
                 {"p", rc.p},
                 {"mask", mask_name(rc.causal)},
                 {"precision", precision_name(rc.precision)},
                 {"scale", cfg.scale},
                 {"seed", rc.seed}};
  j["output_checksum"] = checksum;
  j["max_error"] = o.fwd_err ? Json(*o.fwd_err) : Json(nullptr);
  j["grad_max_error"] = o.grad_err ? Json(*o.grad_err) : Json(nullptr);
  j["ledger"] = o.ledger.to_json(cfg.grid());
  j["score_elements"] = o.score_elements;
  j["saved_state_words"] = o.saved_words;
  Json terms = Json::array();
  for (const auto& t : rep.terms) {
    terms.push_back({{"rank", t.rank},
                     {"phase", mesh::to_string(t.phase)},
                     {"op", t.op},
                     {"predicted", t.predicted},
                     {"measured_sent", t.measured_sent},
                     {"measured_recv", t.measured_recv},
                     {"match", t.match()}});
  }
  j["reconcile"] = {{"ok", rep.ok()}, {"mismatches", rep.mismatches}, {"terms", terms}};
  out << j.dump(2) << '\n';

  const bool numeric_ok =
      (!o.fwd_err || *o.fwd_err < tol.fwd) && (!o.grad_err || *o.grad_err < tol.grad);
  if (!numeric_ok) err << "error vs oracle above tolerance\n";
  if (!rep.ok()) err << "ledger does not match the closed-form prediction\n";
  return numeric_ok && rep.ok() ? kExitOk : kExitFailure;
}

int cmd_cost(const CostOptions& opts, std::ostream& out, std::ostream& err) {
  cost::CostParams base;
  std::optional<cost::ModelPreset> preset;
  std::vector<double> n_list = opts.n_list;
  try {
    if (opts.preset && opts.params) throw ConfigError("give either a preset or explicit params");
    if (opts.preset) {
      preset = cost::find_preset(*opts.preset);
      base = cost::with_preset(*preset, opts.batch, 32768, 1);
      if (n_list.empty()) n_list = {32768};
    } else if (opts.params) {
      const auto& v = *opts.params;
      if (v.size() != 5) throw ConfigError("--params expects b,n,h,m,l");
      base.b = v[0];
      base.n = v[1];
      base.h = v[2];
      base.m = v[3];
      base.l = v[4];
      if (n_list.empty()) n_list = {v[1]};
    } else {
      throw ConfigError("cost needs --preset or --params");
    }
    base.validate();
    cost::FabricParams{opts.alpha.value_or(0), opts.beta.value_or(0), opts.flops_rate}.validate();
    for (double p : opts.p_list) {
      if (!(p >= 1)) throw ConfigError("processor counts must be >= 1");
    }
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  }
  const bool with_time = opts.alpha || opts.beta || opts.flops_rate > 0;
  const cost::FabricParams fabric{opts.alpha.value_or(0), opts.beta.value_or(0), opts.flops_rate};

  Json rows = Json::array();
  for (double n : n_list) {
    for (double p : opts.p_list) {
      cost::CostParams params = base;
      params.n = n;
      params.p = p;
      const cost::StepCost step = cost::total_step_cost(params);
      for (cost::CostStrategy s : cost::all_cost_strategies()) {
        Json row;
        row["strategy"] = cost::to_string(s);
        row["b"] = params.b;
        row["n"] = params.n;
        row["h"] = params.h;
        row["m"] = params.m;
        row["l"] = params.l;
        row["p"] = params.p;
        try {
          const cost::CommCost c = cost::comm_cost(s, params);
          const cost::MemoryCost mem = cost::memory_cost(s, params);
          row["feasible"] = true;
          row["words_per_layer"] = c.asymptotic;
          row["words_per_step"] = c.asymptotic * params.l;
          row["leading_words_per_layer"] = c.leading ? Json(*c.leading) : Json(nullptr);
          row["formula_only"] = c.formula_only;
          row["step_linear"] = step.linear;
          row["step_attention"] = step.attention;
          row["dominant"] = cost::to_string(step.dominant);
          row["mem_persistent"] = mem.persistent;
          row["mem_transient"] = mem.transient;
          row["mem_simplified"] = mem.simplified;
          row["time_s"] = with_time ? Json(cost::estimate_time(s, params, fabric).total)
                                    : Json(nullptr);
          row["note"] = "";
        } catch (const InfeasibleStrategyError& e) {
          row["feasible"] = false;
          for (const char* k : {"words_per_layer", "words_per_step", "leading_words_per_layer",
                                "formula_only", "step_linear", "step_attention", "dominant",
                                "mem_persistent", "mem_transient", "mem_simplified", "time_s"}) {
            row[k] = nullptr;
          }
          row["note"] = std::string("infeasible: ") + e.what();
        }
        rows.push_back(std::move(row));
      }
    }
  }

  if (opts.json) {
    Json j;
    j["schema"] = "attn2d-cost v1";
    j["preset"] = preset ? Json{{"name", preset->name},
                                {"l", preset->l},
                                {"m", preset->m},
                                {"h", preset->h},
                                {"hidden", preset->hidden()}}
                         : Json(nullptr);
    j["rows"] = rows;
    out << j.dump(2) << '\n';
    return kExitOk;
  }

  out << kCostSchema;
  if (preset) {
    out << " preset=" << preset->name << " l=" << preset->l << " m=" << preset->m
        << " h=" << preset->h << " hidden=" << preset->hidden();
  }
  out << '\n';
  static const char* kCols[] = {"strategy",       "b",
                                "n",              "h",
                                "m",              "l",
                                "p",              "feasible",
                                "words_per_layer", "words_per_step",
                                "leading_words_per_layer", "formula_only",
                                "step_linear",    "step_attention",
                                "dominant",       "mem_persistent",
                                "mem_transient",  "mem_simplified",
                                "time_s",         "note"};
  for (std::size_t i = 0; i < std::size(kCols); ++i) out << (i ? "," : "") << kCols[i];
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < std::size(kCols); ++i) {
      if (i) out << ',';
      const Json& v = row[kCols[i]];
      if (v.is_null()) continue;
      if (v.is_boolean()) {
        out << (v.get<bool>() ? "true" : "false");
      } else if (v.is_number()) {
        out << num(v.get<double>());
      } else {
        out << csv_field(v.get<std::string>());
      }
    }
    out << '\n';
  }
  return kExitOk;
}

}  // namespace attn2d::cli
