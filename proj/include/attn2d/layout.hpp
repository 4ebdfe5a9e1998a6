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
#include <vector>

#include "attn2d/mesh.hpp"

namespace attn2d::dist {

enum class LayoutForm { kColumnMajor, kRowMajor, kRowGathered, kColGathered };

// Cyclic token layouts over a side x side grid.
//   column_major  p(r,c): { r + side*c + i*p }
//   row_major     p(r,c): { side*r + c + i*p }
//   row_gathered  row r:  { r + i*side }
//   col_gathered  col c:  { c + i*side }
struct CyclicLayout {
  std::size_t n = 0;
  std::size_t p = 1;
  LayoutForm form = LayoutForm::kColumnMajor;

  std::size_t side() const;
};

// Sorted global token indices held by `who` under `layout`.
std::vector<std::size_t> layout_indices(const CyclicLayout& layout, mesh::ProcCoord who);

// Load-balanced ring layout: the first half of the sequence is split into
// p blocks assigned to ranks 0..p-1, the second half into p blocks assigned
// in reverse order.
std::vector<std::size_t> ring_indices(std::size_t n, std::size_t p, std::size_t rank);

// Local row positions {offset + j*stride | j < count}.
std::vector<std::size_t> strided(std::size_t offset, std::size_t stride, std::size_t count);

}  // namespace attn2d::dist
