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

// Attention2D without overlap: separate gather, compute and reduce-scatter
// phases over a square processor grid.

#include "dist_internal.hpp"

namespace attn2d::dist {

using mesh::Comm;
using mesh::Payload;
using mesh::ProcCoord;
using namespace internal;

template <typename T>
PartialAttn<T> row_reduce_scatter(Comm& comm, const DistAttnConfig& cfg,
                                  const PartialAttn<T>& gathered) {
  const std::size_t s = comm.grid().side();
  const ProcCoord me = comm.coord();
  if (gathered.rows() != cfg.n / s) throw ShapeError("row_reduce_scatter: expected n/side rows");
  // Member (r, k) keeps local rows {k + j*side}, i.e. global {r + side*k + j*p}.
  std::vector<std::vector<std::size_t>> layout;
  for (std::size_t k = 0; k < s; ++k) layout.push_back(strided(k, s, cfg.shard_rows()));
  const auto group = comm.grid().row_group(me.r);
  Payload<T> out = comm.reduce_scatter(to_payload(gathered), group, attn_fix_reducer<T>(),
                                       layout, ops::kOutReduceScatter);
  return to_partial(out);
}

template <typename T>
ForwardOutput<T> attn2d_no_forward(Comm& comm, const DistAttnConfig& cfg,
                                   const LocalInputs<T>& in) {
  const ProcCoord me = comm.coord();
  const auto mask = mask_of<T>(cfg);
  const T scale = static_cast<T>(cfg.scale);

  // Column-major -> row-major for K and V.
  const Payload<T> kv = comm.send_recv(Payload<T>{{in.k.data, in.v.data}, {}}, mirror_of(me),
                                       mirror_of(me), ops::kKvTranspose);
  const auto kt_idx = row_major(cfg, me);
  TokenShard<T> k_t(kv.mats[0], kt_idx);
  TokenShard<T> v_t(kv.mats[1], kt_idx);

  // Row all-gather of Q.
  const auto row = comm.grid().row_group(me.r);
  const auto q_blocks = comm.all_gather_blocks(Payload<T>{{in.q.data}, {}}, row, ops::kQGather);
  std::vector<std::vector<std::size_t>> q_idx;
  for (const auto& member : row) q_idx.push_back(column_major(cfg, member));
  auto [q_pay, q_g_idx] = merge_sorted(q_blocks, q_idx);
  const TokenShard<T> q_g(std::move(q_pay.mats[0]), std::move(q_g_idx));

  // Column all-gather of K_t and V_t.
  const auto col = comm.grid().col_group(me.c);
  const auto kv_blocks =
      comm.all_gather_blocks(Payload<T>{{k_t.data, v_t.data}, {}}, col, ops::kKvGather);
  std::vector<std::vector<std::size_t>> kv_idx;
  for (const auto& member : col) kv_idx.push_back(row_major(cfg, member));
  auto [kv_pay, kv_g_idx] = merge_sorted(kv_blocks, kv_idx);
  const TokenShard<T> k_g(std::move(kv_pay.mats[0]), kv_g_idx);
  const TokenShard<T> v_g(std::move(kv_pay.mats[1]), std::move(kv_g_idx));

  FlashStats stats;
  const PartialAttn<T> partial = flash_attn_forward(q_g, k_g, v_g, mask, scale, cfg.block, &stats);

  const PartialAttn<T> mine = row_reduce_scatter(comm, cfg, partial);
  Matrix<T> o = finalize(mine);

  ForwardOutput<T> result;
  result.out = TokenShard<T>(o, in.q.global_indices);
  result.saved = SavedState<T>(in.q, std::move(k_t), std::move(v_t), std::move(o), mine.m, mine.d);
  result.score_elements = stats.score_elements;
  return result;
}

template <typename T>
GradShards<T> attn2d_no_backward(Comm& comm, const DistAttnConfig& cfg, const SavedState<T>& saved,
                                 const TokenShard<T>& d_out) {
  const ProcCoord me = comm.coord();
  const std::size_t s = comm.grid().side();
  const auto mask = mask_of<T>(cfg);
  const T scale = static_cast<T>(cfg.scale);

  // Row all-gather of {Q, O, dO, M, D}.
  const auto row = comm.grid().row_group(me.r);
  const Payload<T> bundle{{saved.q().data, saved.o(), d_out.data}, {saved.m(), saved.d()}};
  const auto q_blocks = comm.all_gather_blocks(bundle, row, ops::kQGather);
  std::vector<std::vector<std::size_t>> q_idx;
  for (const auto& member : row) q_idx.push_back(column_major(cfg, member));
  auto [q_pay, q_g_idx] = merge_sorted(q_blocks, q_idx);
  const TokenShard<T> q_g(q_pay.mats[0], std::move(q_g_idx));

  // Column all-gather of {K_t, V_t}.
  const auto col = comm.grid().col_group(me.c);
  const auto kv_blocks =
      comm.all_gather_blocks(Payload<T>{{saved.k().data, saved.v().data}, {}}, col, ops::kKvGather);
  std::vector<std::vector<std::size_t>> kv_idx;
  for (const auto& member : col) kv_idx.push_back(row_major(cfg, member));
  auto [kv_pay, kv_g_idx] = merge_sorted(kv_blocks, kv_idx);
  const TokenShard<T> k_g(std::move(kv_pay.mats[0]), kv_g_idx);
  const TokenShard<T> v_g(std::move(kv_pay.mats[1]), std::move(kv_g_idx));

  const Gradients<T> g = flash_attn_backward(q_g, k_g, v_g, q_pay.mats[1], q_pay.mats[2],
                                             q_pay.vecs[0], q_pay.vecs[1], mask, scale, cfg.block);

  std::vector<std::vector<std::size_t>> layout;
  for (std::size_t k = 0; k < s; ++k) layout.push_back(strided(k, s, cfg.shard_rows()));

  // dQ within rows, dK/dV within columns; both use the same local slicing.
  const Payload<T> dq = comm.reduce_scatter(Payload<T>{{g.dq}, {}}, row, sum_reducer<T>(), layout,
                                            ops::kDqReduceScatter);
  const Payload<T> dkv_t = comm.reduce_scatter(Payload<T>{{g.dk, g.dv}, {}}, col, sum_reducer<T>(),
                                               layout, ops::kDkvReduceScatter);

  // Row-major -> column-major for dK and dV.
  const Payload<T> dkv =
      comm.send_recv(dkv_t, mirror_of(me), mirror_of(me), ops::kDkvTranspose);

  const auto idx = column_major(cfg, me);
  return {TokenShard<T>(dq.mats[0], idx), TokenShard<T>(dkv.mats[0], idx),
          TokenShard<T>(dkv.mats[1], idx)};
}

#define ATTN2D_INSTANTIATE(T)                                                                  \
  template PartialAttn<T> row_reduce_scatter(Comm&, const DistAttnConfig&,                     \
                                             const PartialAttn<T>&);                           \
  template ForwardOutput<T> attn2d_no_forward(Comm&, const DistAttnConfig&,                    \
                                              const LocalInputs<T>&);                          \
  template GradShards<T> attn2d_no_backward(Comm&, const DistAttnConfig&, const SavedState<T>&, \
                                            const TokenShard<T>&);

ATTN2D_INSTANTIATE(float)
ATTN2D_INSTANTIATE(double)

#undef ATTN2D_INSTANTIATE

}  // namespace attn2d::dist
