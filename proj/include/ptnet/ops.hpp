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

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ptnet/error.hpp"
#include "ptnet/geometry.hpp"
#include "ptnet/grid.hpp"

namespace ptnet {

// Differentiable primitives. Forward functions are pure; backward functions
// return the input gradient and add parameter gradients into the supplied
// accumulators.

/// Activation-pattern fingerprint for finite-difference checks: while a
/// monitor is installed on the current thread, ReLU sign masks and max-pool
/// winners are hashed into it. Two evaluations with equal fingerprints
/// stayed on the same side of every kink.
class KinkMonitor {
 public:
  KinkMonitor() : previous_(current()) { current() = this; }
  ~KinkMonitor() { current() = previous_; }
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;

  void reset() { hash_ = kOffset; }
  std::uint64_t fingerprint() const { return hash_; }

  void mix(std::uint64_t v) {
    hash_ ^= v;
    hash_ *= 0x100000001b3ULL;
  }

  static KinkMonitor*& current() {
    thread_local KinkMonitor* active = nullptr;
    return active;
  }

 private:
  static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
  KinkMonitor* previous_;
  std::uint64_t hash_ = kOffset;
};

namespace detail {
inline std::vector<std::size_t> with_last(std::vector<std::size_t> shape, std::size_t last) {
  shape.back() = last;
  return shape;
}
}  // namespace detail

/// y = x W + b over the last axis of x.
template <typename T>
Grid<T> linear_forward(const Grid<T>& x, const Grid<T>& w, const Grid<T>& b) {
  const std::size_t din = w.extent(0);
  const std::size_t dout = w.extent(1);
  if (x.cols() != din || b.size() != dout) {
    throw InvalidArgument("linear: input " + x.shape_string() + " weight " + w.shape_string() + " bias " +
                          b.shape_string());
  }
  Grid<T> y(detail::with_last(x.shape(), dout));
  const std::size_t rows = x.rows();
  for (std::size_t r = 0; r < rows; ++r) {
    T* yr = y.data() + r * dout;
    for (std::size_t o = 0; o < dout; ++o) yr[o] = b[o];
    const T* xr = x.data() + r * din;
    for (std::size_t i = 0; i < din; ++i) {
      const T xi = xr[i];
      const T* wr = w.data() + i * dout;
      for (std::size_t o = 0; o < dout; ++o) yr[o] += xi * wr[o];
    }
  }
  return y;
}

template <typename T>
Grid<T> linear_backward(const Grid<T>& x, const Grid<T>& w, const Grid<T>& dy, Grid<T>& dw, Grid<T>& db) {
  const std::size_t din = w.extent(0);
  const std::size_t dout = w.extent(1);
  if (dy.cols() != dout || dy.rows() != x.rows()) throw InvalidArgument("linear backward: gradient shape mismatch");
  Grid<T> dx(x.shape());
  const std::size_t rows = x.rows();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * din;
    const T* gr = dy.data() + r * dout;
    T* dxr = dx.data() + r * din;
    for (std::size_t o = 0; o < dout; ++o) db[o] += gr[o];
    for (std::size_t i = 0; i < din; ++i) {
      const T* wr = w.data() + i * dout;
      T* dwr = dw.data() + i * dout;
      const T xi = xr[i];
      T acc = 0;
      for (std::size_t o = 0; o < dout; ++o) {
        acc += wr[o] * gr[o];
        dwr[o] += xi * gr[o];
      }
      dxr[i] = acc;
    }
  }
  return dx;
}

template <typename T>
Grid<T> relu_forward(const Grid<T>& x) {
  Grid<T> y = x;
  for (T& v : y.values()) v = v > T{0} ? v : T{0};
  if (KinkMonitor* mon = KinkMonitor::current()) {
    for (std::size_t i = 0; i < x.size(); ++i) mon->mix(x[i] > T{0} ? 2 * i + 1 : 2 * i);
  }
  return y;
}

/// Gradient passes where the forward input was strictly positive.
template <typename T>
Grid<T> relu_backward(const Grid<T>& x, const Grid<T>& dy) {
  x.require_same_shape(dy, "relu backward");
  Grid<T> dx = dy;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > T{0})) dx[i] = T{0};
  }
  return dx;
}

namespace detail {
template <typename T>
void require_rank3(const Grid<T>& g, const char* what) {
  if (g.rank() != 3) throw InvalidArgument(std::string(what) + ": expected n x k x c, got " + g.shape_string());
}
}  // namespace detail

/// Softmax over the neighbor axis (axis 1), independently per channel.
template <typename T>
Grid<T> softmax_neighbors(const Grid<T>& logits) {
  detail::require_rank3(logits, "softmax_neighbors");
  const std::size_t n = logits.extent(0), k = logits.extent(1), c = logits.extent(2);
  Grid<T> w(logits.shape());
  std::vector<T> mx(c), sum(c);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(mx.begin(), mx.end(), -std::numeric_limits<T>::infinity());
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t ch = 0; ch < c; ++ch) mx[ch] = std::max(mx[ch], logits(i, j, ch));
    std::fill(sum.begin(), sum.end(), T{0});
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T e = std::exp(logits(i, j, ch) - mx[ch]);
        w(i, j, ch) = e;
        sum[ch] += e;
      }
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t ch = 0; ch < c; ++ch) w(i, j, ch) /= sum[ch];
  }
  return w;
}

/// dlogits = w * (dw - sum_j w * dw), per (point, channel).
template <typename T>
Grid<T> softmax_neighbors_backward(const Grid<T>& w, const Grid<T>& dw) {
  w.require_same_shape(dw, "softmax_neighbors backward");
  const std::size_t n = w.extent(0), k = w.extent(1), c = w.extent(2);
  Grid<T> dl(w.shape());
  std::vector<T> dot(c);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(dot.begin(), dot.end(), T{0});
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t ch = 0; ch < c; ++ch) dot[ch] += w(i, j, ch) * dw(i, j, ch);
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t ch = 0; ch < c; ++ch) dl(i, j, ch) = w(i, j, ch) * (dw(i, j, ch) - dot[ch]);
  }
  return dl;
}

/// Max over the neighbor axis. argmax[i*c + ch] records the winning slot
/// (first occurrence on ties).
template <typename T>
struct MaxPoolResult {
  Grid<T> values;
  std::vector<std::uint32_t> argmax;
};

template <typename T>
MaxPoolResult<T> max_pool_neighbors(const Grid<T>& f) {
  detail::require_rank3(f, "max_pool_neighbors");
  const std::size_t n = f.extent(0), k = f.extent(1), c = f.extent(2);
  MaxPoolResult<T> r{Grid<T>::matrix(n, c), std::vector<std::uint32_t>(n * c, 0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      T best = f(i, 0, ch);
      std::uint32_t arg = 0;
      for (std::size_t j = 1; j < k; ++j) {
        if (f(i, j, ch) > best) {
          best = f(i, j, ch);
          arg = static_cast<std::uint32_t>(j);
        }
      }
      r.values(i, ch) = best;
      r.argmax[i * c + ch] = arg;
    }
  if (KinkMonitor* mon = KinkMonitor::current()) {
    for (std::uint32_t a : r.argmax) mon->mix(a);
  }
  return r;
}

template <typename T>
Grid<T> max_pool_neighbors_backward(const std::vector<std::uint32_t>& argmax, const Grid<T>& dy, std::size_t k) {
  const std::size_t n = dy.rows(), c = dy.cols();
  Grid<T> df({n, k, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) df(i, argmax[i * c + ch], ch) = dy(i, ch);
  return df;
}

/// Mean over the point axis: n x c -> 1 x c.
template <typename T>
Grid<T> global_avg_pool(const Grid<T>& f) {
  const std::size_t n = f.rows(), c = f.cols();
  if (n == 0) throw InvalidArgument("global_avg_pool: empty input");
  Grid<T> y = Grid<T>::matrix(1, c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) y(0, ch) += f(i, ch);
  for (std::size_t ch = 0; ch < c; ++ch) y(0, ch) /= static_cast<T>(n);
  return y;
}

template <typename T>
Grid<T> global_avg_pool_backward(const Grid<T>& dy, std::size_t n) {
  const std::size_t c = dy.cols();
  Grid<T> df = Grid<T>::matrix(n, c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) df(i, ch) = dy(0, ch) / static_cast<T>(n);
  return df;
}

/// out(i, s, :) = x(table.index(i, s), :)
template <typename T, typename D>
Grid<T> gather_neighbors(const Grid<T>& x, const NeighborTable<D>& table) {
  const std::size_t c = x.cols();
  Grid<T> out({table.rows, table.k, c});
  for (std::size_t i = 0; i < table.rows; ++i)
    for (std::size_t s = 0; s < table.k; ++s) {
      const auto src = x.row(static_cast<std::size_t>(table.index(i, s)));
      T* dst = out.data() + (i * table.k + s) * c;
      for (std::size_t ch = 0; ch < c; ++ch) dst[ch] = src[ch];
    }
  return out;
}

template <typename T, typename D>
Grid<T> gather_neighbors_backward(const Grid<T>& dout, const NeighborTable<D>& table, std::size_t num_rows) {
  const std::size_t c = dout.cols();
  Grid<T> dx = Grid<T>::matrix(num_rows, c);
  for (std::size_t i = 0; i < table.rows; ++i)
    for (std::size_t s = 0; s < table.k; ++s) {
      auto dst = dx.row(static_cast<std::size_t>(table.index(i, s)));
      const T* src = dout.data() + (i * table.k + s) * c;
      for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
    }
  return dx;
}

}  // namespace ptnet
