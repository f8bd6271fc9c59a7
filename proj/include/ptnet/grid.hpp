// Copyright 2026 The ptnet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ptnet/error.hpp"

namespace ptnet {

/// Dense row-major array with an explicit shape. The last extent is the
/// channel axis; every leading extent is flattened into rows by the
/// pointwise ops.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;

  explicit Grid(std::vector<std::size_t> shape, T fill = T{}) : shape_(std::move(shape)) {
    for (std::size_t e : shape_) {
      if (e == 0) throw InvalidArgument("Grid: zero extent in shape " + shape_string());
    }
    data_.assign(product(shape_), fill);
  }

  Grid(std::vector<std::size_t> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != product(shape_)) {
      throw InvalidArgument("Grid: data length " + std::to_string(data_.size()) + " does not match shape " +
                            shape_string());
    }
  }

  static Grid matrix(std::size_t rows, std::size_t cols, T fill = T{}) { return Grid({rows, cols}, fill); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
  std::size_t rows() const { return shape_.empty() ? 0 : data_.size() / shape_.back(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  T& operator()(std::size_t i, std::size_t j, std::size_t c) { return data_[(i * shape_[1] + j) * shape_[2] + c]; }
  const T& operator()(std::size_t i, std::size_t j, std::size_t c) const {
    return data_[(i * shape_[1] + j) * shape_[2] + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data, new shape with equal element count.
  Grid reshaped(std::vector<std::size_t> shape) const { return Grid(std::move(shape), data_); }

  Grid& operator+=(const Grid& other) {
    require_same_shape(other, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  void require_same_shape(const Grid& other, const char* where) const {
    if (shape_ != other.shape_) {
      throw InvalidArgument(std::string(where) + ": shape " + shape_string() + " vs " + other.shape_string());
    }
  }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  template <typename U>
  Grid<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Grid<U>(shape_, std::move(out));
  }

  friend bool operator==(const Grid& a, const Grid& b) = default;

 private:
  static std::size_t product(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

}  // namespace ptnet
