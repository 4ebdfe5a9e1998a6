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

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "attn2d/attention.hpp"
#include "attn2d/layout.hpp"
#include "attn2d/mesh.hpp"

namespace attn2d::dist {

enum class Strategy { kAttn2dNo, kAttn2dO, kRing };

const char* to_string(Strategy s);
Strategy parse_strategy(const std::string& name);  // ConfigError on unknown names

// Ledger operation labels. Both 2D strategies use the same labels so one set
// of closed-form predictions covers them.
namespace ops {
inline constexpr const char* kKvTranspose = "kv_transpose";
inline constexpr const char* kQGather = "q_gather";
inline constexpr const char* kKvGather = "kv_gather";
inline constexpr const char* kOutReduceScatter = "out_reduce_scatter";
inline constexpr const char* kDqReduceScatter = "dq_reduce_scatter";
inline constexpr const char* kDkvReduceScatter = "dkv_reduce_scatter";
inline constexpr const char* kDkvTranspose = "dkv_transpose";
inline constexpr const char* kKvRing = "kv_ring";
inline constexpr const char* kDkvRing = "dkv_ring";
}  // namespace ops

// Double-buffered streams checked by the simulator's live-buffer gauge.
namespace streams {
inline constexpr const char* kQBlock = "q_block";
inline constexpr const char* kQBundle = "q_bundle";
}  // namespace streams

struct DistAttnConfig {
  std::size_t n = 8;
  std::size_t h = 4;
  std::size_t p = 1;
  MaskKind mask = MaskKind::kNone;
  double scale = 1.0;
  Precision precision = Precision::kDouble;
  Strategy strategy = Strategy::kAttn2dNo;
  std::size_t block = 16;  // key block of the local flash kernel

  // Throws ConfigError when p does not divide n, p is not square for the 2D
  // strategies, or 2p does not divide n for the ring.
  void validate() const;
  mesh::ProcGrid grid() const;
  std::size_t shard_rows() const { return n / p; }
};

template <typename T>
struct LocalInputs {
  TokenShard<T> q;
  TokenShard<T> k;
  TokenShard<T> v;
};

// Tensors a forward pass keeps for its backward pass. For the 2D strategies
// k/v are the row-major K_t/V_t shards; for the ring they are the local
// K/V shards. Every accessor is recorded so tests can audit what a backward
// pass consumed.
template <typename T>
class SavedState {
 public:
  enum Field : unsigned { kQ = 1, kK = 2, kV = 4, kO = 8, kM = 16, kD = 32 };
  static constexpr unsigned kAll = kQ | kK | kV | kO | kM | kD;

  SavedState() = default;
  SavedState(TokenShard<T> q, TokenShard<T> k, TokenShard<T> v, Matrix<T> o, RealVector<T> m,
             RealVector<T> d)
      : q_(std::move(q)), k_(std::move(k)), v_(std::move(v)), o_(std::move(o)),
        m_(std::move(m)), d_(std::move(d)) {}

  const TokenShard<T>& q() const {
    touch(kQ);
    return q_;
  }
  const TokenShard<T>& k() const {
    touch(kK);
    return k_;
  }
  const TokenShard<T>& v() const {
    touch(kV);
    return v_;
  }
  const Matrix<T>& o() const {
    touch(kO);
    return o_;
  }
  const RealVector<T>& m() const {
    touch(kM);
    return m_;
  }
  const RealVector<T>& d() const {
    touch(kD);
    return d_;
  }

  unsigned accessed() const { return accessed_; }
  void reset_audit() const { accessed_ = 0; }
  std::size_t words() const {
    return q_.data.size() + k_.data.size() + v_.data.size() + o_.size() + m_.size() + d_.size();
  }

 private:
  void touch(Field f) const { accessed_ |= f; }

  TokenShard<T> q_;
  TokenShard<T> k_;
  TokenShard<T> v_;
  Matrix<T> o_;
  RealVector<T> m_;
  RealVector<T> d_;
  mutable unsigned accessed_ = 0;
};

template <typename T>
struct ForwardOutput {
  TokenShard<T> out;
  SavedState<T> saved;
  std::size_t score_elements = 0;
};

template <typename T>
struct GradShards {
  TokenShard<T> dq;
  TokenShard<T> dk;
  TokenShard<T> dv;
};

// K_g, V_g after the overlapped column gather, plus the local partial of
// this processor's own query block against them.
template <typename T>
struct GatherComputeResult {
  TokenShard<T> k_g;
  TokenShard<T> v_g;
  PartialAttn<T> local;
};

template <typename T>
struct GatherComputeBwdResult {
  TokenShard<T> k_g;
  TokenShard<T> v_g;
  Matrix<T> dq;
  Matrix<T> dk_g;
  Matrix<T> dv_g;
};

// Rows of the global matrices that `who` starts with for `cfg.strategy`.
template <typename T>
LocalInputs<T> local_inputs(const DistAttnConfig& cfg, mesh::ProcCoord who, const Matrix<T>& q,
                            const Matrix<T>& k, const Matrix<T>& v);
std::vector<std::size_t> input_indices(const DistAttnConfig& cfg, mesh::ProcCoord who);

// --- Attention2D, non-overlapping ---
template <typename T>
ForwardOutput<T> attn2d_no_forward(mesh::Comm& comm, const DistAttnConfig& cfg,
                                   const LocalInputs<T>& in);

// Ring reduce-scatter of row-gathered partials within a grid row, AttnFix as
// the reducer; returns this processor's column-major cyclic slice.
template <typename T>
PartialAttn<T> row_reduce_scatter(mesh::Comm& comm, const DistAttnConfig& cfg,
                                  const PartialAttn<T>& gathered);

template <typename T>
GradShards<T> attn2d_no_backward(mesh::Comm& comm, const DistAttnConfig& cfg,
                                 const SavedState<T>& saved, const TokenShard<T>& d_out);

// --- Attention2D, overlapping ---
template <typename T>
ForwardOutput<T> attn2d_o_forward(mesh::Comm& comm, const DistAttnConfig& cfg,
                                  const LocalInputs<T>& in);

template <typename T>
GatherComputeResult<T> gthr_cmpt(mesh::Comm& comm, const DistAttnConfig& cfg,
                                 const TokenShard<T>& q, const TokenShard<T>& k_t,
                                 const TokenShard<T>& v_t, FlashStats* stats = nullptr);

// `q_stream` front must hold the already-received block of column c+1.
template <typename T>
PartialAttn<T> gthr_cmpt_sctr(mesh::Comm& comm, const DistAttnConfig& cfg,
                              mesh::DoubleBuffer<T>& q_stream, const TokenShard<T>& k_g,
                              const TokenShard<T>& v_g, FlashStats* stats = nullptr);

template <typename T>
GradShards<T> attn2d_o_backward(mesh::Comm& comm, const DistAttnConfig& cfg,
                                const SavedState<T>& saved, const TokenShard<T>& d_out);

// --- Ring baseline ---
template <typename T>
ForwardOutput<T> ring_forward(mesh::Comm& comm, const DistAttnConfig& cfg,
                              const LocalInputs<T>& in);

template <typename T>
GradShards<T> ring_backward(mesh::Comm& comm, const DistAttnConfig& cfg,
                            const SavedState<T>& saved, const TokenShard<T>& d_out);

// --- Driver ---
template <typename T>
struct DistRun {
  Matrix<T> out;
  std::optional<Gradients<T>> grads;
  mesh::CommLedger ledger;
  mesh::SimStats stats;
  std::vector<std::size_t> score_elements;  // per rank
  std::vector<std::size_t> saved_words;     // per rank
  std::vector<unsigned> saved_access;       // per rank, after backward
};

// Distributes q/k/v (and d_out) per the strategy's input layout, runs the
// forward (and backward when d_out is given) pass as one SPMD program, and
// reassembles the global results from the per-processor shards.
template <typename T>
DistRun<T> run_distributed(const DistAttnConfig& cfg, const Matrix<T>& q, const Matrix<T>& k,
                           const Matrix<T>& v, const Matrix<T>* d_out = nullptr);

}  // namespace attn2d::dist
