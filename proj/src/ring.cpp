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

// Load-balanced ring attention on a 1 x P line of processors. K/V blocks
// travel around the ring while each processor keeps its own queries.

#include "dist_internal.hpp"

namespace attn2d::dist {

using mesh::AsyncExchange;
using mesh::Comm;
using mesh::Payload;
using mesh::ProcCoord;
using namespace internal;

namespace {

ProcCoord ring_right(ProcCoord me, std::size_t p) { return {0, (me.c + 1) % p}; }
ProcCoord ring_left(ProcCoord me, std::size_t p) { return {0, (me.c + p - 1) % p}; }

}  // namespace

template <typename T>
ForwardOutput<T> ring_forward(Comm& comm, const DistAttnConfig& cfg, const LocalInputs<T>& in) {
  const ProcCoord me = comm.coord();
  const std::size_t p = comm.grid().size();
  const auto mask = mask_of<T>(cfg);
  const T scale = static_cast<T>(cfg.scale);

  FlashStats stats;
  Payload<T> current{{in.k.data, in.v.data}, {}};
  AsyncExchange<T> next;
  PartialAttn<T> acc;
  for (std::size_t t = 0; t < p; ++t) {
    // At step t the block in hand started on rank me - t.
    const auto idx = ring_indices(cfg.n, p, (me.c + p - t) % p);
    if (t > 0) {
      comm.wait(next.handle);
      current = next.incoming.get();
    }
    if (t + 1 < p) next = comm.async_send_recv(current, ring_right(me, p), ring_left(me, p), ops::kKvRing);
    PartialAttn<T> part =
        flash_attn_forward(in.q, TokenShard<T>(current.mats[0], idx),
                           TokenShard<T>(current.mats[1], idx), mask, scale, cfg.block, &stats);
    acc = t > 0 ? attn_fix(part, acc) : std::move(part);
  }
  Matrix<T> o = finalize(acc);

  ForwardOutput<T> result;
  result.out = TokenShard<T>(o, in.q.global_indices);
  result.saved = SavedState<T>(in.q, in.k, in.v, std::move(o), acc.m, acc.d);
  result.score_elements = stats.score_elements;
  return result;
}

template <typename T>
GradShards<T> ring_backward(Comm& comm, const DistAttnConfig& cfg, const SavedState<T>& saved,
                            const TokenShard<T>& d_out) {
  const ProcCoord me = comm.coord();
  const std::size_t p = comm.grid().size();
  const auto mask = mask_of<T>(cfg);
  const T scale = static_cast<T>(cfg.scale);
  const ProcCoord right = ring_right(me, p);
  const ProcCoord left = ring_left(me, p);

  Payload<T> current{{saved.k().data, saved.v().data}, {}};
  Payload<T> grads{{Matrix<T>(saved.k().data.rows(), cfg.h), Matrix<T>(saved.v().data.rows(), cfg.h)}, {}};
  Matrix<T> dq;
  for (std::size_t t = 0; t < p; ++t) {
    const auto idx = ring_indices(cfg.n, p, (me.c + p - t) % p);
    const Gradients<T> g = flash_attn_backward(
        saved.q(), TokenShard<T>(current.mats[0], idx), TokenShard<T>(current.mats[1], idx),
        saved.o(), d_out.data, saved.m(), saved.d(), mask, scale, cfg.block);
    if (t > 0) {
      add_inplace(dq, g.dq);
    } else {
      dq = g.dq;
    }
    add_inplace(grads.mats[0], g.dk);
    add_inplace(grads.mats[1], g.dv);
    // The dK/dV accumulator follows its block; after p hops it is home.
    AsyncExchange<T> kv;
    if (t + 1 < p) kv = comm.async_send_recv(current, right, left, ops::kKvRing);
    AsyncExchange<T> acc = comm.async_send_recv(grads, right, left, ops::kDkvRing);
    comm.wait(acc.handle);
    grads = acc.incoming.get();
    if (t + 1 < p) {
      comm.wait(kv.handle);
      current = kv.incoming.get();
    }
  }
  const auto idx = saved.q().global_indices;
  return {TokenShard<T>(std::move(dq), idx), TokenShard<T>(grads.mats[0], idx),
          TokenShard<T>(grads.mats[1], idx)};
}

#define ATTN2D_INSTANTIATE(T)                                                                    \
  template ForwardOutput<T> ring_forward(Comm&, const DistAttnConfig&, const LocalInputs<T>&);   \
  template GradShards<T> ring_backward(Comm&, const DistAttnConfig&, const SavedState<T>&,       \
                                       const TokenShard<T>&);

ATTN2D_INSTANTIATE(float)
ATTN2D_INSTANTIATE(double)

#undef ATTN2D_INSTANTIATE

}  // namespace attn2d::dist
