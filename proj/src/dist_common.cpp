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

#include "dist_internal.hpp"

namespace attn2d::dist {

using mesh::Comm;
using mesh::Phase;
using mesh::PhaseScope;
using mesh::ProcCoord;
using mesh::ProcGrid;

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::kAttn2dNo:
      return "attn2d_no";
    case Strategy::kAttn2dO:
      return "attn2d_o";
    case Strategy::kRing:
      return "ring";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "attn2d_no") return Strategy::kAttn2dNo;
  if (name == "attn2d_o") return Strategy::kAttn2dO;
  if (name == "ring") return Strategy::kRing;
  throw ConfigError("unknown strategy '" + name + "'");
}

void DistAttnConfig::validate() const {
  if (n == 0 || h == 0 || p == 0) throw ConfigError("n, h and p must be positive");
  if (block == 0) throw ConfigError("block must be positive");
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("scale must be positive");
  if (mask == MaskKind::kAdditive) {
    throw ConfigError("distributed strategies support none or causal masks only");
  }
  if (n % p != 0) {
    throw ConfigError("p=" + std::to_string(p) + " does not divide n=" + std::to_string(n));
  }
  if (strategy == Strategy::kRing) {
    if (n % (2 * p) != 0) {
      throw ConfigError("ring needs 2p to divide n (p=" + std::to_string(p) +
                        ", n=" + std::to_string(n) + ")");
    }
  } else {
    const auto s = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(p))));
    if (s * s != p) throw ConfigError("p=" + std::to_string(p) + " is not a perfect square");
  }
}

ProcGrid DistAttnConfig::grid() const {
  validate();
  return strategy == Strategy::kRing ? ProcGrid::line(p) : ProcGrid::square(p);
}

std::vector<std::size_t> input_indices(const DistAttnConfig& cfg, ProcCoord who) {
  if (cfg.strategy == Strategy::kRing) return ring_indices(cfg.n, cfg.p, who.c);
  return internal::column_major(cfg, who);
}

template <typename T>
LocalInputs<T> local_inputs(const DistAttnConfig& cfg, ProcCoord who, const Matrix<T>& q,
                            const Matrix<T>& k, const Matrix<T>& v) {
  const auto idx = input_indices(cfg, who);
  return {TokenShard<T>(select_rows<T>(q, idx), idx), TokenShard<T>(select_rows<T>(k, idx), idx),
          TokenShard<T>(select_rows<T>(v, idx), idx)};
}

namespace {

template <typename T>
struct ProcOutcome {
  TokenShard<T> out;
  std::optional<GradShards<T>> grads;
  std::size_t score_elements = 0;
  std::size_t saved_words = 0;
  unsigned saved_access = 0;
};

template <typename T>
ForwardOutput<T> forward(Comm& comm, const DistAttnConfig& cfg, const LocalInputs<T>& in) {
  switch (cfg.strategy) {
    case Strategy::kAttn2dNo:
      return attn2d_no_forward(comm, cfg, in);
    case Strategy::kAttn2dO:
      return attn2d_o_forward(comm, cfg, in);
    case Strategy::kRing:
      return ring_forward(comm, cfg, in);
  }
  throw ConfigError("unknown strategy");
}

template <typename T>
GradShards<T> backward(Comm& comm, const DistAttnConfig& cfg, const SavedState<T>& saved,
                       const TokenShard<T>& d_out) {
  switch (cfg.strategy) {
    case Strategy::kAttn2dNo:
      return attn2d_no_backward(comm, cfg, saved, d_out);
    case Strategy::kAttn2dO:
      return attn2d_o_backward(comm, cfg, saved, d_out);
    case Strategy::kRing:
      return ring_backward(comm, cfg, saved, d_out);
  }
  throw ConfigError("unknown strategy");
}

template <typename T>
void scatter_rows(Matrix<T>& dst, const TokenShard<T>& shard) {
  for (std::size_t i = 0; i < shard.global_indices.size(); ++i) {
    const auto src = shard.data.row(i);
    auto out = dst.row(shard.global_indices[i]);
    std::copy(src.begin(), src.end(), out.begin());
  }
}

}  // namespace

template <typename T>
DistRun<T> run_distributed(const DistAttnConfig& cfg, const Matrix<T>& q, const Matrix<T>& k,
                           const Matrix<T>& v, const Matrix<T>* d_out) {
  const ProcGrid grid = cfg.grid();
  for (const Matrix<T>* m : {&q, &k, &v}) {
    if (m->rows() != cfg.n || m->cols() != cfg.h) throw ShapeError("inputs must be n x h");
  }
  if (d_out && (d_out->rows() != cfg.n || d_out->cols() != cfg.h)) {
    throw ShapeError("d_out must be n x h");
  }

  auto spmd = mesh::run_spmd(grid, [&](Comm& comm) {
    const LocalInputs<T> in = local_inputs(cfg, comm.coord(), q, k, v);
    ProcOutcome<T> res;
    ForwardOutput<T> fwd;
    {
      PhaseScope scope(comm, Phase::kAttentionFwd);
      fwd = forward(comm, cfg, in);
    }
    res.score_elements = fwd.score_elements;
    res.saved_words = fwd.saved.words();
    if (d_out) {
      const auto& idx = fwd.out.global_indices;
      const TokenShard<T> d_shard(select_rows<T>(*d_out, idx), idx);
      fwd.saved.reset_audit();
      PhaseScope scope(comm, Phase::kAttentionBwd);
      res.grads = backward(comm, cfg, fwd.saved, d_shard);
      res.saved_access = fwd.saved.accessed();
    }
    res.out = std::move(fwd.out);
    return res;
  });

  DistRun<T> run;
  run.out = Matrix<T>(cfg.n, cfg.h);
  if (d_out) run.grads = Gradients<T>{Matrix<T>(cfg.n, cfg.h), Matrix<T>(cfg.n, cfg.h),
                                      Matrix<T>(cfg.n, cfg.h)};
  for (const auto& r : spmd.results) {
    scatter_rows(run.out, r.out);
    if (r.grads) {
      scatter_rows(run.grads->dq, r.grads->dq);
      scatter_rows(run.grads->dk, r.grads->dk);
      scatter_rows(run.grads->dv, r.grads->dv);
    }
    run.score_elements.push_back(r.score_elements);
    run.saved_words.push_back(r.saved_words);
    run.saved_access.push_back(r.saved_access);
  }
  run.ledger = std::move(spmd.ledger);
  run.stats = std::move(spmd.stats);
  return run;
}

#define ATTN2D_INSTANTIATE(T)                                                                 \
  template LocalInputs<T> local_inputs(const DistAttnConfig&, ProcCoord, const Matrix<T>&,    \
                                       const Matrix<T>&, const Matrix<T>&);                   \
  template DistRun<T> run_distributed(const DistAttnConfig&, const Matrix<T>&,                \
                                      const Matrix<T>&, const Matrix<T>&, const Matrix<T>*);

ATTN2D_INSTANTIATE(float)
ATTN2D_INSTANTIATE(double)

#undef ATTN2D_INSTANTIATE

}  // namespace attn2d::dist
