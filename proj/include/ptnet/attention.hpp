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
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ptnet/error.hpp"
#include "ptnet/geometry.hpp"
#include "ptnet/grid.hpp"
#include "ptnet/layers.hpp"
#include "ptnet/ops.hpp"
#include "ptnet/params.hpp"

namespace ptnet {

enum class AttentionOperator { kVector, kScalar, kMlp, kMlpPool };
enum class PositionMode { kNone, kAbsolute, kRelative, kRelativeAttnOnly, kRelativeFeatOnly };
enum class Normalization { kSoftmax, kIdentity };

inline constexpr AttentionOperator kAllOperators[] = {AttentionOperator::kMlp, AttentionOperator::kMlpPool,
                                                      AttentionOperator::kScalar, AttentionOperator::kVector};
inline constexpr PositionMode kAllPositionModes[] = {PositionMode::kNone, PositionMode::kAbsolute,
                                                     PositionMode::kRelative, PositionMode::kRelativeAttnOnly,
                                                     PositionMode::kRelativeFeatOnly};
inline constexpr Normalization kAllNormalizations[] = {Normalization::kSoftmax, Normalization::kIdentity};

inline std::string_view to_string(AttentionOperator op) {
  switch (op) {
    case AttentionOperator::kVector: return "vector";
    case AttentionOperator::kScalar: return "scalar";
    case AttentionOperator::kMlp: return "mlp";
    case AttentionOperator::kMlpPool: return "mlp_pool";
  }
  return "?";
}

inline std::string_view to_string(PositionMode m) {
  switch (m) {
    case PositionMode::kNone: return "none";
    case PositionMode::kAbsolute: return "absolute";
    case PositionMode::kRelative: return "relative";
    case PositionMode::kRelativeAttnOnly: return "relative_attn_only";
    case PositionMode::kRelativeFeatOnly: return "relative_feat_only";
  }
  return "?";
}

inline std::string_view to_string(Normalization n) { return n == Normalization::kSoftmax ? "softmax" : "identity"; }

inline AttentionOperator parse_operator(std::string_view s) {
  for (auto op : kAllOperators)
    if (to_string(op) == s) return op;
  throw InvalidArgument("unknown attention operator '" + std::string(s) + "'");
}

inline PositionMode parse_position_mode(std::string_view s) {
  for (auto m : kAllPositionModes)
    if (to_string(m) == s) return m;
  throw InvalidArgument("unknown position mode '" + std::string(s) + "'");
}

inline Normalization parse_normalization(std::string_view s) {
  for (auto n : kAllNormalizations)
    if (to_string(n) == s) return n;
  throw InvalidArgument("unknown normalization '" + std::string(s) + "'");
}

struct AttentionConfig {
  std::size_t d = 32;
  std::size_t k = 16;
  AttentionOperator op = AttentionOperator::kVector;
  PositionMode pos_mode = PositionMode::kRelative;
  Normalization normalize = Normalization::kSoftmax;
  /// Scalar attention only: divide logits by sqrt(d).
  bool scaled_logits = false;

  bool encodes_attention() const {
    return pos_mode == PositionMode::kRelative || pos_mode == PositionMode::kAbsolute ||
           pos_mode == PositionMode::kRelativeAttnOnly;
  }
  bool encodes_features() const {
    return pos_mode == PositionMode::kRelative || pos_mode == PositionMode::kAbsolute ||
           pos_mode == PositionMode::kRelativeFeatOnly;
  }

  void validate() const {
    if (d == 0) throw InvalidArgument("attention: d must be >= 1");
    if (k == 0) throw InvalidArgument("attention: k must be >= 1");
  }

  std::string label() const {
    return std::string(to_string(op)) + "/" + std::string(to_string(pos_mode)) + "/" +
           std::string(to_string(normalize));
  }
};

/// Neighbor table with each row reordered by ascending index. Sums over a
/// neighborhood then do not depend on the order the rows were given in.
template <typename T>
NeighborTable<T> canonical_neighbors(const NeighborTable<T>& table) {
  NeighborTable<T> out = table;
  std::vector<std::size_t> order(table.k);
  for (std::size_t i = 0; i < table.rows; ++i) {
    for (std::size_t s = 0; s < table.k; ++s) order[s] = s;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return table.index(i, a) < table.index(i, b); });
    for (std::size_t s = 0; s < table.k; ++s) {
      out.indices[i * table.k + s] = table.index(i, order[s]);
      out.sq_dists[i * table.k + s] = table.sq_dist(i, order[s]);
    }
  }
  return out;
}

template <typename T>
Grid<T> positions_grid(const std::vector<Vec3<T>>& p) {
  Grid<T> g = Grid<T>::matrix(p.size(), 3);
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c) g(i, c) = p[i][c];
  return g;
}

/// delta = theta(p_i - p_j) for one pair.
template <typename T>
Grid<T> position_encoding(Mlp<T>& theta, const Vec3<T>& pi, const Vec3<T>& pj) {
  Grid<T> rel = Grid<T>::matrix(1, 3);
  for (std::size_t c = 0; c < 3; ++c) rel(0, c) = pi[c] - pj[c];
  return theta.forward(rel);
}

/// Encodes every (point, neighbor) pair into an n x k x dout grid. Relative
/// mode applies theta to p_i - p_j; absolute mode sums theta(p_i) and
/// theta(p_j) so that the result enters the layer at the same places.
template <typename T>
class PairEncoder {
 public:
  PairEncoder() = default;
  PairEncoder(ParamStore<T>& store, const std::string& name, std::size_t hidden, std::size_t dout, Rng& rng)
      : theta_(store, name, 3, hidden, dout, rng) {}

  Grid<T> forward(const std::vector<Vec3<T>>& p, const NeighborTable<T>& nb, bool absolute) {
    absolute_ = absolute;
    n_ = nb.rows;
    k_ = nb.k;
    if (absolute) {
      table_ = nb;
      const Grid<T> each = theta_.forward(positions_grid(p));
      const std::size_t c = each.cols();
      Grid<T> out({n_, k_, c});
      for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t s = 0; s < k_; ++s) {
          const auto j = static_cast<std::size_t>(nb.index(i, s));
          for (std::size_t ch = 0; ch < c; ++ch) out(i, s, ch) = each(i, ch) + each(j, ch);
        }
      return out;
    }
    Grid<T> rel({n_, k_, 3});
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t s = 0; s < k_; ++s) {
        const auto& pj = p[static_cast<std::size_t>(nb.index(i, s))];
        for (std::size_t c = 0; c < 3; ++c) rel(i, s, c) = p[i][c] - pj[c];
      }
    return theta_.forward(rel);
  }

  void backward(const Grid<T>& ddelta) {
    if (!absolute_) {
      theta_.backward(ddelta);
      return;
    }
    const std::size_t c = ddelta.extent(2);
    Grid<T> deach = Grid<T>::matrix(n_, c);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t s = 0; s < k_; ++s) {
        const auto j = static_cast<std::size_t>(table_.index(i, s));
        for (std::size_t ch = 0; ch < c; ++ch) {
          deach(i, ch) += ddelta(i, s, ch);
          deach(j, ch) += ddelta(i, s, ch);
        }
      }
    theta_.backward(deach);
  }

  Mlp<T>& theta() { return theta_; }

 private:
  Mlp<T> theta_;
  bool absolute_ = false;
  std::size_t n_ = 0, k_ = 0;
  NeighborTable<T> table_;
};

/// Local self-attention over kNN neighborhoods, in any of the operator /
/// position-encoding / normalization variants. Output width equals input
/// width d.
///
/// vector:   y_i = sum_j rho(gamma(phi(x_i) - psi(x_j) + delta_ij)) * (alpha(x_j) + delta_ij)
/// scalar:   y_i = sum_j rho(phi(x_i) . psi(x_j) + delta'_ij) (alpha(x_j) + delta_ij)
/// mlp:      y_i = mlp(x_i)
/// mlp_pool: y_i = max_j mlp(x_j)
///
/// rho is a per-channel softmax over the neighborhood or the identity. The
/// position mode decides which of the two delta insertions are active; the
/// scalar operator draws its logit term from a separate 3 -> d -> 1 encoder.
template <typename T>
class PointTransformerLayer {
 public:
  PointTransformerLayer() = default;
  PointTransformerLayer(ParamStore<T>& store, const std::string& name, const AttentionConfig& cfg, Rng& rng)
      : cfg_(cfg) {
    cfg.validate();
    const std::size_t d = cfg.d;
    switch (cfg.op) {
      case AttentionOperator::kVector:
        phi_.emplace(store, name + ".phi", d, d, rng);
        psi_.emplace(store, name + ".psi", d, d, rng);
        alpha_.emplace(store, name + ".alpha", d, d, rng);
        gamma_.emplace(store, name + ".gamma", d, d, d, rng);
        if (cfg.pos_mode != PositionMode::kNone) theta_.emplace(store, name + ".theta", d, d, rng);
        break;
      case AttentionOperator::kScalar:
        phi_.emplace(store, name + ".phi", d, d, rng);
        psi_.emplace(store, name + ".psi", d, d, rng);
        alpha_.emplace(store, name + ".alpha", d, d, rng);
        if (cfg.encodes_attention()) theta_scalar_.emplace(store, name + ".theta_scalar", d, 1, rng);
        if (cfg.encodes_features()) theta_.emplace(store, name + ".theta", d, d, rng);
        break;
      case AttentionOperator::kMlp:
      case AttentionOperator::kMlpPool:
        mlp_.emplace(store, name + ".mlp", d, d, d, rng);
        break;
    }
  }

  const AttentionConfig& config() const { return cfg_; }

  /// x: n x d features, p: n positions, nb: n rows with min(cfg.k, n)
  /// neighbors each.
  Grid<T> forward(const Grid<T>& x, const std::vector<Vec3<T>>& p, const NeighborTable<T>& nb) {
    const std::size_t n = x.rows();
    if (x.rank() != 2 || x.cols() != cfg_.d) {
      throw InvalidArgument("attention: input " + x.shape_string() + " does not match d=" + std::to_string(cfg_.d));
    }
    if (p.size() != n || nb.rows != n) throw InvalidArgument("attention: positions/neighbors do not match n");
    const std::size_t expected_k = std::min(cfg_.k, n);
    if (nb.k != expected_k) {
      throw InvalidArgument("attention: neighbor table has k=" + std::to_string(nb.k) + ", expected " +
                            std::to_string(expected_k));
    }
    n_ = n;
    nb_ = canonical_neighbors(nb);
    switch (cfg_.op) {
      case AttentionOperator::kVector: return forward_vector(x, p);
      case AttentionOperator::kScalar: return forward_scalar(x, p);
      case AttentionOperator::kMlp: return mlp_->forward(x);
      case AttentionOperator::kMlpPool: return forward_mlp_pool(x);
    }
    return {};
  }

  Grid<T> backward(const Grid<T>& dy) {
    switch (cfg_.op) {
      case AttentionOperator::kVector: return backward_vector(dy);
      case AttentionOperator::kScalar: return backward_scalar(dy);
      case AttentionOperator::kMlp: return mlp_->backward(dy);
      case AttentionOperator::kMlpPool: return backward_mlp_pool(dy);
    }
    return {};
  }

  /// Attention weights of the last forward call, n x k x c (c = d for the
  /// vector operator, 1 for scalar), rows in ascending neighbor index.
  const Grid<T>& last_weights() const { return weights_; }
  const NeighborTable<T>& last_neighbors() const { return nb_; }

  Linear<T>* phi() { return phi_ ? &*phi_ : nullptr; }
  Linear<T>* psi() { return psi_ ? &*psi_ : nullptr; }
  Linear<T>* alpha() { return alpha_ ? &*alpha_ : nullptr; }
  Mlp<T>* gamma() { return gamma_ ? &*gamma_ : nullptr; }
  Mlp<T>* theta() { return theta_ ? &theta_->theta() : nullptr; }
  Mlp<T>* theta_scalar() { return theta_scalar_ ? &theta_scalar_->theta() : nullptr; }
  Mlp<T>* mlp() { return mlp_ ? &*mlp_ : nullptr; }

 private:
  bool absolute() const { return cfg_.pos_mode == PositionMode::kAbsolute; }

  Grid<T> forward_vector(const Grid<T>& x, const std::vector<Vec3<T>>& p) {
    const std::size_t n = n_, k = nb_.k, d = cfg_.d;
    const Grid<T> q = phi_->forward(x);
    const Grid<T> key = psi_->forward(x);
    const Grid<T> val = alpha_->forward(x);
    const bool pos_attn = cfg_.encodes_attention();
    const bool pos_feat = cfg_.encodes_features();
    Grid<T> delta;
    if (theta_) delta = theta_->forward(p, nb_, absolute());

    Grid<T> rel({n, k, d});
    values_ = Grid<T>({n, k, d});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = 0; s < k; ++s) {
        const auto j = static_cast<std::size_t>(nb_.index(i, s));
        for (std::size_t c = 0; c < d; ++c) {
          rel(i, s, c) = q(i, c) - key(j, c) + (pos_attn ? delta(i, s, c) : T{0});
          values_(i, s, c) = val(j, c) + (pos_feat ? delta(i, s, c) : T{0});
        }
      }
    const Grid<T> logits = gamma_->forward(rel);
    weights_ = cfg_.normalize == Normalization::kSoftmax ? softmax_neighbors(logits) : logits;

    Grid<T> y = Grid<T>::matrix(n, d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = 0; s < k; ++s)
        for (std::size_t c = 0; c < d; ++c) y(i, c) += weights_(i, s, c) * values_(i, s, c);
    return y;
  }

  Grid<T> backward_vector(const Grid<T>& dy) {
    const std::size_t n = n_, k = nb_.k, d = cfg_.d;
    Grid<T> dw({n, k, d}), dval({n, k, d});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = 0; s < k; ++s)
        for (std::size_t c = 0; c < d; ++c) {
          dw(i, s, c) = dy(i, c) * values_(i, s, c);
          dval(i, s, c) = dy(i, c) * weights_(i, s, c);
        }
    const Grid<T> dlogits = cfg_.normalize == Normalization::kSoftmax ? softmax_neighbors_backward(weights_, dw) : dw;
    const Grid<T> drel = gamma_->backward(dlogits);

    Grid<T> dq = Grid<T>::matrix(n, d), dkey = Grid<T>::matrix(n, d), dv = Grid<T>::matrix(n, d);
    Grid<T> ddelta({n, k, d});
    const bool pos_attn = cfg_.encodes_attention();
    const bool pos_feat = cfg_.encodes_features();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = 0; s < k; ++s) {
        const auto j = static_cast<std::size_t>(nb_.index(i, s));
        for (std::size_t c = 0; c < d; ++c) {
          dq(i, c) += drel(i, s, c);
          dkey(j, c) -= drel(i, s, c);
          dv(j, c) += dval(i, s, c);
          if (pos_attn) ddelta(i, s, c) += drel(i, s, c);
          if (pos_feat) ddelta(i, s, c) += dval(i, s, c);
        }
      }
    if (theta_) theta_->backward(ddelta);
    Grid<T> dx = phi_->backward(dq);
    dx += psi_->backward(dkey);
    dx += alpha_->backward(dv);
    return dx;
  }

  Grid<T> forward_scalar(const Grid<T>& x, const std::vector<Vec3<T>>& p) {
    const std::size_t n = n_, k = nb_.k, d = cfg_.d;
    q_ = phi_->forward(x);
    key_ = psi_->forward(x);
    const Grid<T> val = alpha_->forward(x);
    scale_ = cfg_.scaled_logits ? T{1} / std::sqrt(static_cast<T>(d)) : T{1};
    Grid<T> logit_bias;
    if (theta_scalar_) logit_bias = theta_scalar_->forward(p, nb_, absolute());
    Grid<T> delta;
    if (theta_) delta = theta_->forward(p, nb_, absolute());

    Grid<T> logits({n, k, 1});
    values_ = Grid<T>({n, k, d});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = 0; s < k; ++s) {
        const auto j = static_cast<std::size_t>(nb_.index(i, s));
        T dot = 0;
        for (std::size_t c = 0; c < d; ++c) dot += q_(i, c) * key_(j, c);
        logits(i, s, 0) = dot * scale_ + (theta_scalar_ ? logit_bias(i, s, 0) : T{0});
        for (std::size_t c = 0; c < d; ++c) values_(i, s, c) = val(j, c) + (theta_ ? delta(i, s, c) : T{0});
      }
    weights_ = cfg_.normalize == Normalization::kSoftmax ? softmax_neighbors(logits) : logits;

    Grid<T> y = Grid<T>::matrix(n, d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = 0; s < k; ++s)
        for (std::size_t c = 0; c < d; ++c) y(i, c) += weights_(i, s, 0) * values_(i, s, c);
    return y;
  }

  Grid<T> backward_scalar(const Grid<T>& dy) {
    const std::size_t n = n_, k = nb_.k, d = cfg_.d;
    Grid<T> dw({n, k, 1}), dval({n, k, d});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = 0; s < k; ++s) {
        T acc = 0;
        for (std::size_t c = 0; c < d; ++c) {
          acc += dy(i, c) * values_(i, s, c);
          dval(i, s, c) = dy(i, c) * weights_(i, s, 0);
        }
        dw(i, s, 0) = acc;
      }
    const Grid<T> dlogits = cfg_.normalize == Normalization::kSoftmax ? softmax_neighbors_backward(weights_, dw) : dw;

    Grid<T> dq = Grid<T>::matrix(n, d), dkey = Grid<T>::matrix(n, d), dv = Grid<T>::matrix(n, d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = 0; s < k; ++s) {
        const auto j = static_cast<std::size_t>(nb_.index(i, s));
        const T g = dlogits(i, s, 0) * scale_;
        for (std::size_t c = 0; c < d; ++c) {
          dq(i, c) += g * key_(j, c);
          dkey(j, c) += g * q_(i, c);
          dv(j, c) += dval(i, s, c);
        }
      }
    if (theta_scalar_) theta_scalar_->backward(dlogits);
    if (theta_) theta_->backward(dval);
    Grid<T> dx = phi_->backward(dq);
    dx += psi_->backward(dkey);
    dx += alpha_->backward(dv);
    return dx;
  }

  Grid<T> forward_mlp_pool(const Grid<T>& x) {
    const Grid<T> h = mlp_->forward(x);
    auto pooled = max_pool_neighbors(gather_neighbors(h, nb_));
    argmax_ = std::move(pooled.argmax);
    return std::move(pooled.values);
  }

  Grid<T> backward_mlp_pool(const Grid<T>& dy) {
    const Grid<T> dg = max_pool_neighbors_backward(argmax_, dy, nb_.k);
    return mlp_->backward(gather_neighbors_backward(dg, nb_, n_));
  }

  AttentionConfig cfg_;
  std::optional<Linear<T>> phi_, psi_, alpha_;
  std::optional<Mlp<T>> gamma_, mlp_;
  std::optional<PairEncoder<T>> theta_, theta_scalar_;

  std::size_t n_ = 0;
  NeighborTable<T> nb_;
  Grid<T> weights_, values_, q_, key_;
  T scale_ = T{1};
  std::vector<std::uint32_t> argmax_;
};

}  // namespace ptnet
