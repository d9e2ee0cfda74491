// Copyright 2026 The weightleak Authors.
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
#include <span>
#include <vector>

#include "weightleak/common.hpp"

namespace weightleak {

// Dense row-major matrix. Weight matrices are stored units x fan_in, so row r
// holds every incoming weight of unit r.
template <typename T = double>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, "matrix data length mismatch");
  }
  Matrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      require(r.size() == cols_, "ragged matrix initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void resize(std::size_t rows, std::size_t cols) {
    rows_ = rows;
    cols_ = cols;
    data_.assign(rows * cols, T(0));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// y += a * x
template <typename T>
inline void axpy(T a, std::span<const T> x, std::span<T> y) {
  const std::size_t n = x.size();
  const T* xp = x.data();
  T* yp = y.data();
  for (std::size_t i = 0; i < n; ++i) yp[i] += a * xp[i];
}

template <typename T>
inline T dot(std::span<const T> a, std::span<const T> b) {
  require(a.size() == b.size(), "dot: length mismatch");
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
inline bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

// out = in * w^T + bias, where in is batch x fan_in and w is units x fan_in.
// `wt` is scratch space for the transpose so the inner loop runs contiguously.
template <typename T>
void affine_forward(const Matrix<T>& in, const Matrix<T>& w,
                    std::span<const T> bias, Matrix<T>& out, Matrix<T>& wt) {
  const std::size_t batch = in.rows(), fan_in = w.cols(), units = w.rows();
  require(in.cols() == fan_in, "affine_forward: dimension mismatch");
  if (wt.rows() != fan_in || wt.cols() != units) wt.resize(fan_in, units);
  for (std::size_t u = 0; u < units; ++u)
    for (std::size_t k = 0; k < fan_in; ++k) wt(k, u) = w(u, k);
  if (out.rows() != batch || out.cols() != units) out.resize(batch, units);
  for (std::size_t i = 0; i < batch; ++i) {
    std::span<T> o = out.row(i);
    std::copy(bias.begin(), bias.end(), o.begin());
    std::span<const T> x = in.row(i);
    for (std::size_t k = 0; k < fan_in; ++k) {
      const T a = x[k];
      if (a != T(0)) axpy<T>(a, wt.row(k), o);
    }
  }
}

}  // namespace weightleak
