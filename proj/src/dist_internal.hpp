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

// Helpers shared by the distributed attention programs.

#pragma once

#include <algorithm>
#include <numeric>
#include <utility>
#include <vector>

#include "attn2d/dist_attention.hpp"

namespace attn2d::dist::internal {

using mesh::Payload;
using mesh::ProcCoord;

template <typename T>
Payload<T> to_payload(const PartialAttn<T>& p) {
  return Payload<T>{{p.n}, {p.m, p.d}};
}

template <typename T>
PartialAttn<T> to_partial(const Payload<T>& p) {
  return PartialAttn<T>{p.vecs.at(0), p.mats.at(0), p.vecs.at(1)};
}

template <typename T>
mesh::Reducer<T> attn_fix_reducer() {
  return [](const Payload<T>& local, const Payload<T>& incoming) {
    return to_payload(attn_fix(to_partial(local), to_partial(incoming)));
  };
}

template <typename T>
mesh::Reducer<T> sum_reducer() {
  return [](const Payload<T>& local, const Payload<T>& incoming) {
    Payload<T> out = local;
    for (std::size_t i = 0; i < out.mats.size(); ++i) add_inplace(out.mats[i], incoming.mats.at(i));
    for (std::size_t i = 0; i < out.vecs.size(); ++i) {
      for (std::size_t j = 0; j < out.vecs[i].size(); ++j) out.vecs[i][j] += incoming.vecs.at(i)[j];
    }
    return out;
  };
}

// Concatenates blocks and reorders rows by ascending global index.
template <typename T>
std::pair<Payload<T>, std::vector<std::size_t>> merge_sorted(
    const std::vector<Payload<T>>& blocks, const std::vector<std::vector<std::size_t>>& indices) {
  std::vector<std::size_t> all;
  for (const auto& idx : indices) all.insert(all.end(), idx.begin(), idx.end());
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&all](std::size_t a, std::size_t b) { return all[a] < all[b]; });
  Payload<T> merged = Payload<T>::concat(blocks).slice_rows(order);
  std::vector<std::size_t> sorted(all.size());
  for (std::size_t i = 0; i < order.size(); ++i) sorted[i] = all[order[i]];
  return {std::move(merged), std::move(sorted)};
}

template <typename T>
MaskSpec<T> mask_of(const DistAttnConfig& cfg) {
  if (cfg.mask == MaskKind::kCausal) return MaskSpec<T>::causal();
  if (cfg.mask == MaskKind::kAdditive) {
    throw ConfigError("distributed strategies support none or causal masks only");
  }
  return MaskSpec<T>::none();
}

inline ProcCoord left_of(ProcCoord p, std::size_t side) { return {p.r, (p.c + side - 1) % side}; }
inline ProcCoord right_of(ProcCoord p, std::size_t side) { return {p.r, (p.c + 1) % side}; }
inline ProcCoord up_of(ProcCoord p, std::size_t side) { return {(p.r + side - 1) % side, p.c}; }
inline ProcCoord down_of(ProcCoord p, std::size_t side) { return {(p.r + 1) % side, p.c}; }
inline ProcCoord mirror_of(ProcCoord p) { return {p.c, p.r}; }

inline std::vector<std::size_t> column_major(const DistAttnConfig& cfg, ProcCoord who) {
  return layout_indices({cfg.n, cfg.p, LayoutForm::kColumnMajor}, who);
}
inline std::vector<std::size_t> row_major(const DistAttnConfig& cfg, ProcCoord who) {
  return layout_indices({cfg.n, cfg.p, LayoutForm::kRowMajor}, who);
}

}  // namespace attn2d::dist::internal
