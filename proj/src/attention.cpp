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

#include "attn2d/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace attn2d {

namespace {

template <typename T>
void check_qkv(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v) {
  if (q.cols() != k.cols() || k.cols() != v.cols()) {
    throw ShapeError("q, k, v must share the head dimension");
  }
  if (k.rows() != v.rows()) throw ShapeError("k and v must hold the same tokens");
}

// exp(from - to) for rescaling a running maximum; -inf maps to 0.
template <typename T>
T rescale_factor(T from, T to) {
  if (from == neg_inf<T>()) return T(0);
  return std::exp(from - to);
}

// Dense softmax probabilities; throws when a row has no admissible key.
template <typename T>
Matrix<T> dense_probabilities(const Matrix<T>& q, const Matrix<T>& k, const MaskSpec<T>& mask,
                              T scale) {
  Matrix<T> s = scaled(matmul(q, k, /*transpose_b=*/true), scale);
  if (mask.kind == MaskKind::kAdditive) {
    if (!mask.additive) throw ConfigError("additive mask kind without a mask matrix");
    require_same_shape(s, *mask.additive, "additive mask");
    add_inplace(s, *mask.additive);
  } else if (mask.kind == MaskKind::kCausal) {
    for (std::size_t i = 0; i < s.rows(); ++i) {
      for (std::size_t j = i + 1; j < s.cols(); ++j) s(i, j) = neg_inf<T>();
    }
  }
  const RealVector<T> m = row_max(s);
  for (std::size_t i = 0; i < s.rows(); ++i) {
    if (m[i] == neg_inf<T>()) {
      throw FullyMaskedRowError("query row " + std::to_string(i) + " attends no key");
    }
    T denom = T(0);
    for (T& x : s.row(i)) {
      x = std::exp(x - m[i]);
      denom += x;
    }
    for (T& x : s.row(i)) x /= denom;
  }
  return s;
}

}  // namespace

template <typename T>
MaskSpec<T> MaskSpec<T>::from_additive(Matrix<T> m) {
  for (T x : m.data()) {
    if (x != T(0) && x != neg_inf<T>()) {
      throw ConfigError("additive mask entries must be 0 or -inf");
    }
  }
  if (m.rows() != m.cols()) throw ShapeError("additive mask must be square");
  return {MaskKind::kAdditive, std::move(m)};
}

template <typename T>
TokenShard<T>::TokenShard(Matrix<T> d, std::vector<std::size_t> idx)
    : data(std::move(d)), global_indices(std::move(idx)) {
  if (global_indices.size() != data.rows()) {
    throw ShapeError("token shard: index count != row count");
  }
  for (std::size_t i = 1; i < global_indices.size(); ++i) {
    if (global_indices[i] <= global_indices[i - 1]) {
      throw ShapeError("token shard: global indices must be strictly increasing");
    }
  }
}

template <typename T>
PartialAttn<T> PartialAttn<T>::empty(std::size_t rows, std::size_t cols) {
  return {RealVector<T>(rows, neg_inf<T>()), Matrix<T>(rows, cols), RealVector<T>(rows, T(0))};
}

template <typename T>
void PartialAttn<T>::validate() const {
  if (m.size() != n.rows() || d.size() != n.rows()) {
    throw ShapeError("partial attention: M, N, D lengths disagree");
  }
}

template <typename T>
Matrix<T> reference_attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                              const MaskSpec<T>& mask, T scale) {
  check_qkv(q, k, v);
  return matmul(dense_probabilities(q, k, mask, scale), v);
}

template <typename T>
Gradients<T> reference_attention_grad(const Matrix<T>& q, const Matrix<T>& k,
                                      const Matrix<T>& v, const MaskSpec<T>& mask, T scale,
                                      const Matrix<T>& d_out) {
  check_qkv(q, k, v);
  const Matrix<T> p = dense_probabilities(q, k, mask, scale);
  const Matrix<T> o = matmul(p, v);
  require_same_shape(o, d_out, "reference_attention_grad: d_out");

  Gradients<T> g;
  g.dv = matmul(transpose(p), d_out);
  const Matrix<T> dp = matmul(d_out, v, /*transpose_b=*/true);
  const RealVector<T> delta = row_sum(hadamard(d_out, o));
  Matrix<T> ds(p.rows(), p.cols());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    for (std::size_t j = 0; j < p.cols(); ++j) ds(i, j) = p(i, j) * (dp(i, j) - delta[i]);
  }
  g.dq = scaled(matmul(ds, k), scale);
  g.dk = scaled(matmul(transpose(ds), q), scale);
  return g;
}

template <typename T>
PartialAttn<T> flash_attn_forward(const TokenShard<T>& q, const TokenShard<T>& k,
                                  const TokenShard<T>& v, const MaskSpec<T>& mask, T scale,
                                  std::size_t block, FlashStats* stats) {
  check_qkv(q.data, k.data, v.data);
  if (k.global_indices != v.global_indices) {
    throw ShapeError("flash_attn_forward: k and v hold different tokens");
  }
  if (block == 0) throw ConfigError("flash_attn_forward: block must be >= 1");
  if (mask.kind == MaskKind::kAdditive) {
    throw ConfigError("additive masks are supported on the reference path only");
  }

  const std::size_t nq = q.rows();
  const std::size_t nk = k.rows();
  const std::size_t h = q.cols();
  PartialAttn<T> out = PartialAttn<T>::empty(nq, h);
  std::vector<T> scores(std::min(block, std::max<std::size_t>(nk, 1)));
  std::size_t evaluated = 0;

  for (std::size_t b0 = 0; b0 < nk; b0 += block) {
    const std::size_t b1 = std::min(nk, b0 + block);
    for (std::size_t i = 0; i < nq; ++i) {
      const std::size_t qi = q.global_indices[i];
      T block_max = neg_inf<T>();
      for (std::size_t j = b0; j < b1; ++j) {
        T s = neg_inf<T>();
        if (mask.allows(qi, k.global_indices[j])) {
          s = T(0);
          for (std::size_t c = 0; c < h; ++c) s += q.data(i, c) * k.data(j, c);
          s *= scale;
          ++evaluated;
        }
        scores[j - b0] = s;
        block_max = std::max(block_max, s);
      }
      const T m_new = std::max(out.m[i], block_max);
      if (m_new == neg_inf<T>()) continue;

      const T alpha = rescale_factor(out.m[i], m_new);
      out.d[i] *= alpha;
      for (T& x : out.n.row(i)) x *= alpha;
      for (std::size_t j = b0; j < b1; ++j) {
        if (scores[j - b0] == neg_inf<T>()) continue;
        const T p = std::exp(scores[j - b0] - m_new);
        out.d[i] += p;
        for (std::size_t c = 0; c < h; ++c) out.n(i, c) += p * v.data(j, c);
      }
      out.m[i] = m_new;
    }
  }
  if (stats != nullptr) stats->score_elements += evaluated;
  return out;
}

template <typename T>
PartialAttn<T> attn_fix(const PartialAttn<T>& a, const PartialAttn<T>& b) {
  a.validate();
  b.validate();
  if (a.rows() != b.rows() || a.n.cols() != b.n.cols()) {
    throw ShapeError("attn_fix: partial shapes differ");
  }
  PartialAttn<T> out{RealVector<T>(a.rows()), Matrix<T>(a.rows(), a.n.cols()),
                     RealVector<T>(a.rows())};
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T m = std::max(a.m[i], b.m[i]);
    const T ea = rescale_factor(a.m[i], m);
    const T eb = rescale_factor(b.m[i], m);
    out.m[i] = m;
    // A zero weight drops its term outright so merging with the empty
    // partial reproduces the other operand exactly.
    auto combine = [ea, eb](T x, T y) {
      if (ea == T(0)) return eb * y;
      if (eb == T(0)) return ea * x;
      return ea * x + eb * y;
    };
    out.d[i] = combine(a.d[i], b.d[i]);
    for (std::size_t c = 0; c < a.n.cols(); ++c) out.n(i, c) = combine(a.n(i, c), b.n(i, c));
  }
  return out;
}

template <typename T>
Matrix<T> finalize(const PartialAttn<T>& p) {
  p.validate();
  for (std::size_t i = 0; i < p.d.size(); ++i) {
    if (p.d[i] == T(0)) {
      throw FullyMaskedRowError("finalize: query row " + std::to_string(i) +
                                " has an empty softmax denominator");
    }
  }
  return diag_scale(p.d, p.n);
}

template <typename T>
Gradients<T> flash_attn_backward(const TokenShard<T>& q, const TokenShard<T>& k,
                                 const TokenShard<T>& v, const Matrix<T>& o,
                                 const Matrix<T>& d_out, const RealVector<T>& m,
                                 const RealVector<T>& d, const MaskSpec<T>& mask, T scale,
                                 std::size_t block) {
  check_qkv(q.data, k.data, v.data);
  if (k.global_indices != v.global_indices) {
    throw ShapeError("flash_attn_backward: k and v hold different tokens");
  }
  require_same_shape(o, q.data, "flash_attn_backward: o");
  require_same_shape(d_out, q.data, "flash_attn_backward: d_out");
  if (m.size() != q.rows() || d.size() != q.rows()) {
    throw ShapeError("flash_attn_backward: statistics length != query rows");
  }
  if (block == 0) throw ConfigError("flash_attn_backward: block must be >= 1");
  if (mask.kind == MaskKind::kAdditive) {
    throw ConfigError("additive masks are supported on the reference path only");
  }
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] == T(0)) {
      throw FullyMaskedRowError("flash_attn_backward: zero denominator at row " +
                                std::to_string(i));
    }
  }

  const std::size_t nq = q.rows();
  const std::size_t nk = k.rows();
  const std::size_t h = q.cols();
  Gradients<T> g{Matrix<T>(nq, h), Matrix<T>(nk, h), Matrix<T>(nk, h)};
  const RealVector<T> delta = row_sum(hadamard(d_out, o));

  for (std::size_t b0 = 0; b0 < nk; b0 += block) {
    const std::size_t b1 = std::min(nk, b0 + block);
    for (std::size_t i = 0; i < nq; ++i) {
      const std::size_t qi = q.global_indices[i];
      for (std::size_t j = b0; j < b1; ++j) {
        if (!mask.allows(qi, k.global_indices[j])) continue;
        T s = T(0);
        for (std::size_t c = 0; c < h; ++c) s += q.data(i, c) * k.data(j, c);
        const T p = std::exp(s * scale - m[i]) / d[i];
        T dp = T(0);
        for (std::size_t c = 0; c < h; ++c) dp += d_out(i, c) * v.data(j, c);
        const T ds = p * (dp - delta[i]);
        for (std::size_t c = 0; c < h; ++c) {
          g.dv(j, c) += p * d_out(i, c);
          g.dq(i, c) += scale * ds * k.data(j, c);
          g.dk(j, c) += scale * ds * q.data(i, c);
        }
      }
    }
  }
  return g;
}

template <typename T>
RealVector<T> to_log_sum_exp(const RealVector<T>& m, const RealVector<T>& d) {
  if (m.size() != d.size()) throw ShapeError("to_log_sum_exp: length mismatch");
  RealVector<T> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    out[i] = d[i] == T(0) ? neg_inf<T>() : m[i] + std::log(d[i]);
  }
  return out;
}

template <typename T>
std::pair<RealVector<T>, RealVector<T>> from_log_sum_exp(const RealVector<T>& lse) {
  RealVector<T> d(lse.size());
  for (std::size_t i = 0; i < lse.size(); ++i) d[i] = lse[i] == neg_inf<T>() ? T(0) : T(1);
  return {lse, d};
}

template <typename T>
TokenShard<T> whole(const Matrix<T>& m) {
  std::vector<std::size_t> idx(m.rows());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return TokenShard<T>(m, std::move(idx));
}

#define ATTN2D_INSTANTIATE(T)                                                                 \
  template struct MaskSpec<T>;                                                                \
  template struct TokenShard<T>;                                                              \
  template struct PartialAttn<T>;                                                             \
  template Matrix<T> reference_attention(const Matrix<T>&, const Matrix<T>&,                  \
                                         const Matrix<T>&, const MaskSpec<T>&, T);            \
  template Gradients<T> reference_attention_grad(const Matrix<T>&, const Matrix<T>&,          \
                                                 const Matrix<T>&, const MaskSpec<T>&, T,     \
                                                 const Matrix<T>&);                           \
  template PartialAttn<T> flash_attn_forward(const TokenShard<T>&, const TokenShard<T>&,      \
                                             const TokenShard<T>&, const MaskSpec<T>&, T,     \
                                             std::size_t, FlashStats*);                       \
  template PartialAttn<T> attn_fix(const PartialAttn<T>&, const PartialAttn<T>&);             \
  template Matrix<T> finalize(const PartialAttn<T>&);                                         \
  template Gradients<T> flash_attn_backward(                                                  \
      const TokenShard<T>&, const TokenShard<T>&, const TokenShard<T>&, const Matrix<T>&,     \
      const Matrix<T>&, const RealVector<T>&, const RealVector<T>&, const MaskSpec<T>&, T,    \
      std::size_t);                                                                           \
  template RealVector<T> to_log_sum_exp(const RealVector<T>&, const RealVector<T>&);          \
  template std::pair<RealVector<T>, RealVector<T>> from_log_sum_exp(const RealVector<T>&);    \
  template TokenShard<T> whole(const Matrix<T>&);

ATTN2D_INSTANTIATE(float)
ATTN2D_INSTANTIATE(double)

#undef ATTN2D_INSTANTIATE

}  // namespace attn2d
