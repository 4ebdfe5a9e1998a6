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
#include <vector>

#include "attn2d/tensor.hpp"

namespace attn2d {

enum class MaskKind { kNone, kCausal, kAdditive };

// Additive masks (0 / -inf entries) are only honored by the dense reference
// path. Distributed paths evaluate causality from global token indices.
template <typename T>
struct MaskSpec {
  MaskKind kind = MaskKind::kNone;
  std::optional<Matrix<T>> additive;

  static MaskSpec none() { return {}; }
  static MaskSpec causal() { return {MaskKind::kCausal, std::nullopt}; }
  static MaskSpec from_additive(Matrix<T> m);

  // Query at global index i may attend key at global index j.
  bool allows(std::size_t i, std::size_t j) const {
    return kind != MaskKind::kCausal || i >= j;
  }
};

// Token rows of Q, K, V (or a gradient) plus the global positions they hold.
template <typename T>
struct TokenShard {
  Matrix<T> data;
  std::vector<std::size_t> global_indices;

  TokenShard() = default;
  TokenShard(Matrix<T> d, std::vector<std::size_t> idx);

  std::size_t rows() const { return data.rows(); }
  std::size_t cols() const { return data.cols(); }
};

// Mergeable attention state over some key subset: running row maxima M,
// unnormalized weighted values N, denominators D. The empty partial is
// (M=-inf, N=0, D=0) and acts as the identity of attn_fix.
template <typename T>
struct PartialAttn {
  RealVector<T> m;
  Matrix<T> n;
  RealVector<T> d;

  static PartialAttn empty(std::size_t rows, std::size_t cols);

  std::size_t rows() const { return n.rows(); }
  void validate() const;
  bool operator==(const PartialAttn&) const = default;
};

template <typename T>
struct Gradients {
  Matrix<T> dq;
  Matrix<T> dk;
  Matrix<T> dv;
};

struct FlashStats {
  std::size_t score_elements = 0;  // unmasked (query, key) pairs evaluated
};

// Dense softmax(scale * q k^T + X) v with max subtraction.
template <typename T>
Matrix<T> reference_attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                              const MaskSpec<T>& mask, T scale);

// Analytic gradients of sum(d_out .* O) with respect to q, k, v.
template <typename T>
Gradients<T> reference_attention_grad(const Matrix<T>& q, const Matrix<T>& k,
                                      const Matrix<T>& v, const MaskSpec<T>& mask, T scale,
                                      const Matrix<T>& d_out);

// Blockwise online-softmax forward over exactly the tokens in k/v, `block`
// keys at a time. Query rows with nothing to attend come back empty.
template <typename T>
PartialAttn<T> flash_attn_forward(const TokenShard<T>& q, const TokenShard<T>& k,
                                  const TokenShard<T>& v, const MaskSpec<T>& mask, T scale,
                                  std::size_t block, FlashStats* stats = nullptr);

template <typename T>
PartialAttn<T> attn_fix(const PartialAttn<T>& a, const PartialAttn<T>& b);

// O[i,:] = N[i,:] / D[i].
template <typename T>
Matrix<T> finalize(const PartialAttn<T>& p);

// Recomputes probabilities from the global statistics (m, d) and returns
// the gradient contributions of the given key/value tokens. dq from
// different key partitions add up.
template <typename T>
Gradients<T> flash_attn_backward(const TokenShard<T>& q, const TokenShard<T>& k,
                                 const TokenShard<T>& v, const Matrix<T>& o,
                                 const Matrix<T>& d_out, const RealVector<T>& m,
                                 const RealVector<T>& d, const MaskSpec<T>& mask, T scale,
                                 std::size_t block = 64);

// Log-sum-exp form of the softmax statistics, L = M + log D.
template <typename T>
RealVector<T> to_log_sum_exp(const RealVector<T>& m, const RealVector<T>& d);

// Inverse of to_log_sum_exp with M := L and D := 1.
template <typename T>
std::pair<RealVector<T>, RealVector<T>> from_log_sum_exp(const RealVector<T>& lse);

// Wraps a full matrix as a shard holding global rows 0..rows-1.
template <typename T>
TokenShard<T> whole(const Matrix<T>& m);

}  // namespace attn2d
