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
#include <string>

#include "ptnet/error.hpp"
#include "ptnet/grid.hpp"
#include "ptnet/ops.hpp"
#include "ptnet/params.hpp"
#include "ptnet/random.hpp"

namespace ptnet {

struct ForwardMode {
  bool training = true;
  /// Running statistics of normalization layers are updated only when set.
  bool update_stats = true;
};

inline constexpr ForwardMode kTrain{true, true};
inline constexpr ForwardMode kEval{false, false};

// Modules cache what their backward pass needs from the most recent
// forward call; one forward must precede each backward.

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t din, std::size_t dout, Rng& rng)
      : w_(&store.add_uniform(name + ".weight", {din, dout}, din, rng)),
        b_(&store.add_uniform(name + ".bias", {dout}, din, rng)) {}

  std::size_t in_dim() const { return w_->value.extent(0); }
  std::size_t out_dim() const { return w_->value.extent(1); }
  Param<T>& weight() { return *w_; }
  Param<T>& bias() { return *b_; }

  Grid<T> forward(const Grid<T>& x) {
    x_ = x;
    return linear_forward(x, w_->value, b_->value);
  }

  Grid<T> backward(const Grid<T>& dy) {
    return linear_backward(x_, w_->value, dy, w_->grad_buffer(), b_->grad_buffer());
  }

 private:
  Param<T>* w_ = nullptr;
  Param<T>* b_ = nullptr;
  Grid<T> x_;
};

template <typename T>
class Relu {
 public:
  Grid<T> forward(const Grid<T>& x) {
    x_ = x;
    return relu_forward(x);
  }
  Grid<T> backward(const Grid<T>& dy) const { return relu_backward(x_, dy); }

 private:
  Grid<T> x_;
};

/// Per-channel standardization over the point axis with learned gain and
/// bias. Training mode needs at least two rows; a layer built with
/// `single_row_uses_running` falls back to its running statistics instead.
template <typename T>
class PointNorm {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kStatMomentum = 0.1;

  PointNorm() = default;
  PointNorm(ParamStore<T>& store, const std::string& name, std::size_t channels, bool single_row_uses_running = false)
      : gain_(&store.add(name + ".gain", {channels})),
        bias_(&store.add(name + ".bias", {channels})),
        mean_(&store.add(name + ".running_mean", {channels}, false)),
        var_(&store.add(name + ".running_var", {channels}, false)),
        fallback_(single_row_uses_running) {
    gain_->value.fill(T{1});
    var_->value.fill(T{1});
  }

  Param<T>& gain() { return *gain_; }
  Param<T>& bias() { return *bias_; }
  const Grid<T>& running_mean() const { return mean_->value; }
  const Grid<T>& running_var() const { return var_->value; }

  Grid<T> forward(const Grid<T>& x, ForwardMode mode = kTrain) {
    const std::size_t n = x.rows(), c = x.cols();
    if (c != gain_->value.size()) throw InvalidArgument("point_norm: channel mismatch " + x.shape_string());
    batch_stats_ = mode.training && n >= 2;
    if (mode.training && n < 2 && !fallback_) {
      throw InvalidState("point_norm: training mode needs at least 2 points, got " + std::to_string(n));
    }
    mean_buf_.assign(c, T{0});
    inv_std_.assign(c, T{0});
    if (batch_stats_) {
      std::vector<T> var(c, T{0});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) mean_buf_[ch] += x(i, ch);
      for (std::size_t ch = 0; ch < c; ++ch) mean_buf_[ch] /= static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T d = x(i, ch) - mean_buf_[ch];
          var[ch] += d * d;
        }
      for (std::size_t ch = 0; ch < c; ++ch) {
        var[ch] /= static_cast<T>(n);
        inv_std_[ch] = T{1} / std::sqrt(var[ch] + static_cast<T>(kEps));
      }
      if (mode.update_stats) {
        const T m = static_cast<T>(kStatMomentum);
        const T unbias = static_cast<T>(n) / static_cast<T>(n - 1);
        for (std::size_t ch = 0; ch < c; ++ch) {
          mean_->value[ch] = (T{1} - m) * mean_->value[ch] + m * mean_buf_[ch];
          var_->value[ch] = (T{1} - m) * var_->value[ch] + m * var[ch] * unbias;
        }
      }
    } else {
      for (std::size_t ch = 0; ch < c; ++ch) {
        mean_buf_[ch] = mean_->value[ch];
        inv_std_[ch] = T{1} / std::sqrt(var_->value[ch] + static_cast<T>(kEps));
      }
    }
    xhat_ = Grid<T>(x.shape());
    Grid<T> y(x.shape());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T h = (x(i, ch) - mean_buf_[ch]) * inv_std_[ch];
        xhat_(i, ch) = h;
        y(i, ch) = gain_->value[ch] * h + bias_->value[ch];
      }
    return y;
  }

  Grid<T> backward(const Grid<T>& dy) {
    const std::size_t n = dy.rows(), c = dy.cols();
    Grid<T>& dg = gain_->grad_buffer();
    Grid<T>& db = bias_->grad_buffer();
    Grid<T> dx(dy.shape());
    std::vector<T> sum_dh(c, T{0}), sum_dh_h(c, T{0});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        dg[ch] += dy(i, ch) * xhat_(i, ch);
        db[ch] += dy(i, ch);
        const T dh = dy(i, ch) * gain_->value[ch];
        sum_dh[ch] += dh;
        sum_dh_h[ch] += dh * xhat_(i, ch);
      }
    const T inv_n = T{1} / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T dh = dy(i, ch) * gain_->value[ch];
        if (batch_stats_) {
          dx(i, ch) = inv_std_[ch] * (dh - inv_n * sum_dh[ch] - xhat_(i, ch) * inv_n * sum_dh_h[ch]);
        } else {
          dx(i, ch) = inv_std_[ch] * dh;
        }
      }
    return dx;
  }

 private:
  Param<T>* gain_ = nullptr;
  Param<T>* bias_ = nullptr;
  Param<T>* mean_ = nullptr;
  Param<T>* var_ = nullptr;
  bool fallback_ = false;
  bool batch_stats_ = false;
  std::vector<T> mean_buf_, inv_std_;
  Grid<T> xhat_;
};

/// linear -> ReLU -> linear
template <typename T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore<T>& store, const std::string& name, std::size_t din, std::size_t hidden, std::size_t dout, Rng& rng)
      : first_(store, name + ".0", din, hidden, rng), second_(store, name + ".1", hidden, dout, rng) {}

  std::size_t in_dim() const { return first_.in_dim(); }
  std::size_t out_dim() const { return second_.out_dim(); }
  Linear<T>& first() { return first_; }
  Linear<T>& second() { return second_; }

  Grid<T> forward(const Grid<T>& x) { return second_.forward(act_.forward(first_.forward(x))); }
  Grid<T> backward(const Grid<T>& dy) { return first_.backward(act_.backward(second_.backward(dy))); }

 private:
  Linear<T> first_;
  Relu<T> act_;
  Linear<T> second_;
};

/// linear -> norm -> ReLU, the pointwise unit of the transition modules.
template <typename T>
class LinearNormRelu {
 public:
  LinearNormRelu() = default;
  LinearNormRelu(ParamStore<T>& store, const std::string& name, std::size_t din, std::size_t dout, Rng& rng)
      : lin_(store, name + ".linear", din, dout, rng), norm_(store, name + ".norm", dout, true) {}

  Grid<T> forward(const Grid<T>& x, ForwardMode mode) { return act_.forward(norm_.forward(lin_.forward(x), mode)); }
  Grid<T> backward(const Grid<T>& dy) { return lin_.backward(norm_.backward(act_.backward(dy))); }

  std::size_t out_dim() const { return lin_.out_dim(); }

 private:
  Linear<T> lin_;
  PointNorm<T> norm_;
  Relu<T> act_;
};

}  // namespace ptnet
