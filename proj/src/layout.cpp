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

#include "attn2d/layout.hpp"

#include <cmath>

namespace attn2d::dist {

std::size_t CyclicLayout::side() const {
  const auto s = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(p))));
  if (s * s != p) throw ConfigError("cyclic layout needs a perfect-square processor count");
  return s;
}

std::vector<std::size_t> strided(std::size_t offset, std::size_t stride, std::size_t count) {
  std::vector<std::size_t> out(count);
  for (std::size_t j = 0; j < count; ++j) out[j] = offset + j * stride;
  return out;
}

std::vector<std::size_t> layout_indices(const CyclicLayout& layout, mesh::ProcCoord who) {
  const std::size_t s = layout.side();
  if (who.r >= s || who.c >= s) throw ConfigError("coordinate outside the grid");
  if (layout.n % layout.p != 0) throw ConfigError("p must divide n");
  switch (layout.form) {
    case LayoutForm::kColumnMajor:
      return strided(who.r + s * who.c, layout.p, layout.n / layout.p);
    case LayoutForm::kRowMajor:
      return strided(s * who.r + who.c, layout.p, layout.n / layout.p);
    case LayoutForm::kRowGathered:
      return strided(who.r, s, layout.n / s);
    case LayoutForm::kColGathered:
      return strided(who.c, s, layout.n / s);
  }
  return {};
}

std::vector<std::size_t> ring_indices(std::size_t n, std::size_t p, std::size_t rank) {
  if (p == 0 || n % (2 * p) != 0) throw ConfigError("ring layout needs 2p to divide n");
  if (rank >= p) throw ConfigError("rank outside the ring");
  const std::size_t block = n / (2 * p);
  std::vector<std::size_t> out;
  out.reserve(2 * block);
  for (std::size_t i = 0; i < block; ++i) out.push_back(rank * block + i);
  const std::size_t second = n / 2 + (p - 1 - rank) * block;
  for (std::size_t i = 0; i < block; ++i) out.push_back(second + i);
  return out;
}

}  // namespace attn2d::dist
