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

// Attention2D with overlap: gathers, flash-attention blocks and the
// reduce-scatter are interleaved through asynchronous ring exchanges.

#include "dist_internal.hpp"

namespace attn2d::dist {

using mesh::AsyncExchange;
using mesh::Comm;
using mesh::DoubleBuffer;
using mesh::Payload;
using mesh::ProcCoord;
using namespace internal;

template <typename T>
GatherComputeResult<T> gthr_cmpt(Comm& comm, const DistAttnConfig& cfg, const TokenShard<T>& q,
                                 const TokenShard<T>& k_t, const TokenShard<T>& v_t,
                                 FlashStats* stats) {
  const ProcCoord me = comm.coord();
  const std::size_t s = comm.grid().side();
  const auto mask = mask_of<T>(cfg);
  const T scale = static_cast<T>(cfg.scale);
  const ProcCoord up = up_of(me, s);
  const ProcCoord down = down_of(me, s);

  std::vector<Payload<T>> blocks;
  std::vector<std::vector<std::size_t>> block_idx;
  Payload<T> current{{k_t.data, v_t.data}, {}};
  AsyncExchange<T> gather;
  PartialAttn<T> acc;
  for (std::size_t i = 1; i <= s; ++i) {
    // Block i holds K_t/V_t of grid row (r + i - 1) mod side.
    const auto idx = row_major(cfg, {(me.r + i - 1) % s, me.c});
    if (i > 1) {
      comm.wait(gather.handle);
      current = gather.incoming.get();
    }
    if (i < s) gather = comm.async_send_recv(current, up, down, ops::kKvGather);

    const TokenShard<T> k_i(current.mats[0], idx);
    const TokenShard<T> v_i(current.mats[1], idx);
    PartialAttn<T> part = flash_attn_forward(q, k_i, v_i, mask, scale, cfg.block, stats);
    acc = i > 1 ? attn_fix(part, acc) : std::move(part);
    blocks.push_back(current);
    block_idx.push_back(idx);
  }
  auto [kv, kv_idx] = merge_sorted(blocks, block_idx);
  return {TokenShard<T>(std::move(kv.mats[0]), kv_idx),
          TokenShard<T>(std::move(kv.mats[1]), kv_idx), std::move(acc)};
}

template <typename T>
PartialAttn<T> gthr_cmpt_sctr(Comm& comm, const DistAttnConfig& cfg, DoubleBuffer<T>& q_stream,
                              const TokenShard<T>& k_g, const TokenShard<T>& v_g,
                              FlashStats* stats) {
  const ProcCoord me = comm.coord();
  const std::size_t s = comm.grid().side();
  if (s == 1) return PartialAttn<T>::empty(cfg.shard_rows(), cfg.h);
  const auto mask = mask_of<T>(cfg);
  const T scale = static_cast<T>(cfg.scale);
  const ProcCoord left = left_of(me, s);
  const ProcCoord right = right_of(me, s);

  AsyncExchange<T> scatter;
  for (std::size_t i = 1; i < s; ++i) {
    if (i > 1) q_stream.wait();
    if (i < s - 1) q_stream.exchange_async(left, right, ops::kQGather);

    // The block in hand belongs to p(r, c + i).
    const TokenShard<T> q_n(q_stream.front().mats[0], column_major(cfg, {me.r, (me.c + i) % s}));
    PartialAttn<T> part = flash_attn_forward(q_n, k_g, v_g, mask, scale, cfg.block, stats);
    if (i > 1) {
      comm.wait(scatter.handle);
      part = attn_fix(part, to_partial(scatter.incoming.get()));
    }
    scatter = comm.async_send_recv(to_payload(part), left, right, ops::kOutReduceScatter);
    q_stream.swap();
  }
  comm.wait(scatter.handle);
  return to_partial(scatter.incoming.get());
}

template <typename T>
ForwardOutput<T> attn2d_o_forward(Comm& comm, const DistAttnConfig& cfg,
                                  const LocalInputs<T>& in) {
  const ProcCoord me = comm.coord();
  const std::size_t s = comm.grid().side();

  const Payload<T> kv = comm.send_recv(Payload<T>{{in.k.data, in.v.data}, {}}, mirror_of(me),
                                       mirror_of(me), ops::kKvTranspose);
  const auto kt_idx = row_major(cfg, me);
  TokenShard<T> k_t(kv.mats[0], kt_idx);
  TokenShard<T> v_t(kv.mats[1], kt_idx);

  // First query block goes out in the background while the column gather runs.
  DoubleBuffer<T> q_stream(comm, streams::kQBlock, Payload<T>{{in.q.data}, {}});
  q_stream.exchange_async(left_of(me, s), right_of(me, s), ops::kQGather);

  FlashStats stats;
  GatherComputeResult<T> gc = gthr_cmpt(comm, cfg, in.q, k_t, v_t, &stats);

  q_stream.wait();
  q_stream.swap();
  const PartialAttn<T> others = gthr_cmpt_sctr(comm, cfg, q_stream, gc.k_g, gc.v_g, &stats);

  const PartialAttn<T> mine = attn_fix(gc.local, others);
  Matrix<T> o = finalize(mine);

  ForwardOutput<T> result;
  result.out = TokenShard<T>(o, in.q.global_indices);
  result.saved = SavedState<T>(in.q, std::move(k_t), std::move(v_t), std::move(o), mine.m, mine.d);
  result.score_elements = stats.score_elements;
  return result;
}

namespace {

template <typename T>
GatherComputeBwdResult<T> gthr_cmpt_bwd(Comm& comm, const DistAttnConfig& cfg,
                                        const SavedState<T>& saved, const Matrix<T>& d_out) {
  const ProcCoord me = comm.coord();
  const std::size_t s = comm.grid().side();
  const auto mask = mask_of<T>(cfg);
  const T scale = static_cast<T>(cfg.scale);
  const ProcCoord up = up_of(me, s);
  const ProcCoord down = down_of(me, s);

  std::vector<Payload<T>> blocks;
  std::vector<std::vector<std::size_t>> block_idx;
  Payload<T> current{{saved.k().data, saved.v().data}, {}};
  AsyncExchange<T> gather;
  Matrix<T> dq;
  for (std::size_t i = 1; i <= s; ++i) {
    const auto idx = row_major(cfg, {(me.r + i - 1) % s, me.c});
    if (i > 1) {
      comm.wait(gather.handle);
      current = gather.incoming.get();
    }
    if (i < s) gather = comm.async_send_recv(current, up, down, ops::kKvGather);

    const Gradients<T> g = flash_attn_backward(
        saved.q(), TokenShard<T>(current.mats[0], idx), TokenShard<T>(current.mats[1], idx),
        saved.o(), d_out, saved.m(), saved.d(), mask, scale, cfg.block);
    if (i > 1) {
      add_inplace(dq, g.dq);
    } else {
      dq = g.dq;
    }
    blocks.push_back(Payload<T>{{current.mats[0], current.mats[1], g.dk, g.dv}, {}});
    block_idx.push_back(idx);
  }
  auto [merged, idx] = merge_sorted(blocks, block_idx);
  return {TokenShard<T>(merged.mats[0], idx), TokenShard<T>(merged.mats[1], idx), std::move(dq),
          std::move(merged.mats[2]), std::move(merged.mats[3])};
}

// Gradient of the last query block against K_g/V_g, computed one row-major
// block at a time while dK/dV are ring reduce-scattered within the column.
// Blocks are visited from grid row r + 1 onwards so that the last one is
// this processor's own K_t slice.
template <typename T>
Gradients<T> cmpt_sctr_bwd(Comm& comm, const DistAttnConfig& cfg, const TokenShard<T>& q_n,
                           const Payload<T>& bundle, const TokenShard<T>& k_g,
                           const TokenShard<T>& v_g, const Matrix<T>& dk_g,
                           const Matrix<T>& dv_g) {
  const ProcCoord me = comm.coord();
  const std::size_t s = comm.grid().side();
  const auto mask = mask_of<T>(cfg);
  const T scale = static_cast<T>(cfg.scale);
  const ProcCoord up = up_of(me, s);
  const ProcCoord down = down_of(me, s);
  const Matrix<T>& o_n = bundle.mats[1];
  const Matrix<T>& do_n = bundle.mats[2];
  const RealVector<T>& m_n = bundle.vecs[0];
  const RealVector<T>& d_n = bundle.vecs[1];

  auto block_grad = [&](std::size_t grid_row) {
    const auto pos = strided(grid_row, s, cfg.shard_rows());
    const auto idx = row_major(cfg, {grid_row, me.c});
    Gradients<T> g = flash_attn_backward(q_n, TokenShard<T>(select_rows<T>(k_g.data, pos), idx),
                                         TokenShard<T>(select_rows<T>(v_g.data, pos), idx), o_n,
                                         do_n, m_n, d_n, mask, scale, cfg.block);
    add_inplace(g.dk, select_rows<T>(dk_g, pos));
    add_inplace(g.dv, select_rows<T>(dv_g, pos));
    return g;
  };

  Matrix<T> dq;
  AsyncExchange<T> scatter;
  for (std::size_t i = 2; i <= s; ++i) {
    Gradients<T> g = block_grad((me.r + i - 1) % s);
    if (i > 2) {
      add_inplace(dq, g.dq);
      comm.wait(scatter.handle);
      add_inplace(g.dk, scatter.incoming.get().mats[0]);
      add_inplace(g.dv, scatter.incoming.get().mats[1]);
    } else {
      dq = g.dq;
    }
    scatter = comm.async_send_recv(Payload<T>{{g.dk, g.dv}, {}}, up, down, ops::kDkvReduceScatter);
  }
  Gradients<T> own = block_grad(me.r);
  add_inplace(dq, own.dq);
  comm.wait(scatter.handle);
  add_inplace(own.dk, scatter.incoming.get().mats[0]);
  add_inplace(own.dv, scatter.incoming.get().mats[1]);
  return {std::move(dq), std::move(own.dk), std::move(own.dv)};
}

// Returns dQ contributions of the other columns for this processor's query
// block, plus the fully reduced row-major dK_t/dV_t.
template <typename T>
Gradients<T> gthr_cmpt_sctr_bwd(Comm& comm, const DistAttnConfig& cfg,
                                DoubleBuffer<T>& q_stream, const TokenShard<T>& k_g,
                                const TokenShard<T>& v_g, Matrix<T> dk_g, Matrix<T> dv_g) {
  const ProcCoord me = comm.coord();
  const std::size_t s = comm.grid().side();
  if (s == 1) return {Matrix<T>(cfg.shard_rows(), cfg.h), std::move(dk_g), std::move(dv_g)};
  const auto mask = mask_of<T>(cfg);
  const T scale = static_cast<T>(cfg.scale);
  const ProcCoord left = left_of(me, s);
  const ProcCoord right = right_of(me, s);

  Matrix<T> dk;
  Matrix<T> dv;
  AsyncExchange<T> scatter;
  for (std::size_t i = 1; i < s; ++i) {
    if (i > 1) q_stream.wait();
    const Payload<T>& b = q_stream.front();
    const TokenShard<T> q_n(b.mats[0], column_major(cfg, {me.r, (me.c + i) % s}));
    Matrix<T> dq_p;
    if (i < s - 1) {
      q_stream.exchange_async(left, right, ops::kQGather);
      Gradients<T> g = flash_attn_backward(q_n, k_g, v_g, b.mats[1], b.mats[2], b.vecs[0],
                                           b.vecs[1], mask, scale, cfg.block);
      add_inplace(dk_g, g.dk);
      add_inplace(dv_g, g.dv);
      dq_p = std::move(g.dq);
    } else {
      Gradients<T> g = cmpt_sctr_bwd(comm, cfg, q_n, b, k_g, v_g, dk_g, dv_g);
      dq_p = std::move(g.dq);
      dk = std::move(g.dk);
      dv = std::move(g.dv);
    }
    if (i > 1) {
      comm.wait(scatter.handle);
      add_inplace(dq_p, scatter.incoming.get().mats[0]);
    }
    scatter = comm.async_send_recv(Payload<T>{{dq_p}, {}}, left, right, ops::kDqReduceScatter);
    q_stream.swap();
  }
  comm.wait(scatter.handle);
  return {scatter.incoming.get().mats[0], std::move(dk), std::move(dv)};
}

}  // namespace

template <typename T>
GradShards<T> attn2d_o_backward(Comm& comm, const DistAttnConfig& cfg, const SavedState<T>& saved,
                                const TokenShard<T>& d_out) {
  const ProcCoord me = comm.coord();
  const std::size_t s = comm.grid().side();

  DoubleBuffer<T> q_stream(
      comm, streams::kQBundle,
      Payload<T>{{saved.q().data, saved.o(), d_out.data}, {saved.m(), saved.d()}});
  q_stream.exchange_async(left_of(me, s), right_of(me, s), ops::kQGather);

  GatherComputeBwdResult<T> gc = gthr_cmpt_bwd(comm, cfg, saved, d_out.data);

  q_stream.wait();
  q_stream.swap();
  Gradients<T> rest = gthr_cmpt_sctr_bwd(comm, cfg, q_stream, gc.k_g, gc.v_g, std::move(gc.dk_g),
                                         std::move(gc.dv_g));

  Matrix<T> dq = add(gc.dq, rest.dq);
  const Payload<T> dkv = comm.send_recv(Payload<T>{{rest.dk, rest.dv}, {}}, mirror_of(me),
                                        mirror_of(me), ops::kDkvTranspose);
  const auto idx = column_major(cfg, me);
  return {TokenShard<T>(std::move(dq), idx), TokenShard<T>(dkv.mats[0], idx),
          TokenShard<T>(dkv.mats[1], idx)};
}

#define ATTN2D_INSTANTIATE(T)                                                                   \
  template GatherComputeResult<T> gthr_cmpt(Comm&, const DistAttnConfig&, const TokenShard<T>&, \
                                            const TokenShard<T>&, const TokenShard<T>&,         \
                                            FlashStats*);                                       \
  template PartialAttn<T> gthr_cmpt_sctr(Comm&, const DistAttnConfig&, DoubleBuffer<T>&,        \
                                         const TokenShard<T>&, const TokenShard<T>&,            \
                                         FlashStats*);                                          \
  template ForwardOutput<T> attn2d_o_forward(Comm&, const DistAttnConfig&,                      \
                                             const LocalInputs<T>&);                            \
  template GradShards<T> attn2d_o_backward(Comm&, const DistAttnConfig&, const SavedState<T>&,  \
                                           const TokenShard<T>&);

ATTN2D_INSTANTIATE(float)
ATTN2D_INSTANTIATE(double)

#undef ATTN2D_INSTANTIATE

}  // namespace attn2d::dist
