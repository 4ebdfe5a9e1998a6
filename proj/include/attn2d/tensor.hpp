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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "attn2d/errors.hpp"

namespace attn2d {

enum class Precision { kSingle, kDouble };

template <typename T>
constexpr T neg_inf() {
  return -std::numeric_limits<T>::infinity();
}

// Dense row-major matrix. Additive masks may hold -inf; everything else is
// expected to stay finite.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length does not match rows x cols");
    }
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    Matrix m;
    m.rows_ = rows.size();
    m.cols_ = rows.size() == 0 ? 0 : rows.begin()->size();
    m.data_.reserve(m.rows_ * m.cols_);
    for (const auto& row : rows) {
      if (row.size() != m.cols_) throw ShapeError("ragged initializer");
      m.data_.insert(m.data_.end(), row.begin(), row.end());
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <typename T>
using RealVector = std::vector<T>;

namespace detail {
inline std::string shape_str(std::size_t r, std::size_t c) {
  std::ostringstream os;
  os << r << "x" << c;
  return os.str();
}
}  // namespace detail

template <typename T>
void require_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape " + detail::shape_str(a.rows(), a.cols()) +
                     " vs " + detail::shape_str(b.rows(), b.cols()));
  }
}

// a * b, or a * b^T when transpose_b is set. The inner sum always runs
// left to right so results are reproducible bit for bit.
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b, bool transpose_b = false) {
  const std::size_t inner_b = transpose_b ? b.cols() : b.rows();
  const std::size_t out_cols = transpose_b ? b.rows() : b.cols();
  if (a.cols() != inner_b) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                     std::to_string(inner_b) + " differ");
  }
  Matrix<T> out(a.rows(), out_cols);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < out_cols; ++j) {
      T acc = T(0);
      for (std::size_t k = 0; k < a.cols(); ++k) {
        acc += a(i, k) * (transpose_b ? b(j, k) : b(k, j));
      }
      out(i, j) = acc;
    }
  }
  return out;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

// Per-row maximum; a row of -inf yields -inf.
template <typename T>
RealVector<T> row_max(const Matrix<T>& a) {
  RealVector<T> out(a.rows(), neg_inf<T>());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (T x : a.row(i)) out[i] = std::max(out[i], x);
  }
  return out;
}

template <typename T>
RealVector<T> row_sum(const Matrix<T>& a) {
  RealVector<T> out(a.rows(), T(0));
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (T x : a.row(i)) out[i] += x;
  }
  return out;
}

// Row i of the result is a[i, :] / v[i].
template <typename T>
Matrix<T> diag_scale(const RealVector<T>& v, const Matrix<T>& a) {
  if (v.size() != a.rows()) throw ShapeError("diag_scale: vector length != rows");
  Matrix<T> out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    if (v[i] == T(0)) {
      throw DivisionByZeroError("diag_scale: zero entry at row " + std::to_string(i));
    }
    for (T& x : out.row(i)) x /= v[i];
  }
  return out;
}

// Row i of the result is a[i, :] * v[i].
template <typename T>
Matrix<T> diag_mul(const RealVector<T>& v, const Matrix<T>& a) {
  if (v.size() != a.rows()) throw ShapeError("diag_mul: vector length != rows");
  Matrix<T> out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (T& x : out.row(i)) x *= v[i];
  }
  return out;
}

template <typename T>
Matrix<T> add(const Matrix<T>& a, const Matrix<T>& b) {
  require_same_shape(a, b, "add");
  Matrix<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

template <typename T>
void add_inplace(Matrix<T>& a, const Matrix<T>& b) {
  require_same_shape(a, b, "add_inplace");
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
}

template <typename T>
Matrix<T> hadamard(const Matrix<T>& a, const Matrix<T>& b) {
  require_same_shape(a, b, "hadamard");
  Matrix<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.data()[i];
  return out;
}

template <typename T>
Matrix<T> scaled(const Matrix<T>& a, T s) {
  Matrix<T> out = a;
  for (T& x : out.data()) x *= s;
  return out;
}

template <typename T>
Matrix<T> select_rows(const Matrix<T>& a, std::span<const std::size_t> rows) {
  Matrix<T> out(rows.size(), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= a.rows()) throw ShapeError("select_rows: row index out of range");
    std::copy(a.row(rows[i]).begin(), a.row(rows[i]).end(), out.row(i).begin());
  }
  return out;
}

template <typename T>
RealVector<T> select(const RealVector<T>& v, std::span<const std::size_t> idx) {
  RealVector<T> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= v.size()) throw ShapeError("select: index out of range");
    out[i] = v[idx[i]];
  }
  return out;
}

template <typename T>
Matrix<T> concat_rows(std::span<const Matrix<T>> blocks) {
  if (blocks.empty()) return {};
  std::size_t rows = 0;
  const std::size_t cols = blocks.front().cols();
  for (const auto& b : blocks) {
    if (b.cols() != cols) throw ShapeError("concat_rows: column count differs");
    rows += b.rows();
  }
  std::vector<T> data;
  data.reserve(rows * cols);
  for (const auto& b : blocks) data.insert(data.end(), b.data().begin(), b.data().end());
  return Matrix<T>(rows, cols, std::move(data));
}

template <typename T>
T max_abs(const Matrix<T>& a) {
  T m = T(0);
  for (T x : a.data()) m = std::max(m, std::abs(x));
  return m;
}

template <typename T>
T max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
  require_same_shape(a, b, "max_abs_diff");
  T m = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// Max-norm relative error ||a - b||_max / ||b||_max (absolute when b == 0).
template <typename T>
double relative_error(const Matrix<T>& a, const Matrix<T>& b) {
  const double denom = static_cast<double>(max_abs(b));
  const double diff = static_cast<double>(max_abs_diff(a, b));
  return denom > 0.0 ? diff / denom : diff;
}

template <typename To, typename From>
Matrix<To> cast(const Matrix<From>& a) {
  std::vector<To> data(a.data().begin(), a.data().end());
  return Matrix<To>(a.rows(), a.cols(), std::move(data));
}

}  // namespace attn2d
