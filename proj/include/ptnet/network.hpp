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
#include <cstdint>
#include <string>
#include <vector>

#include "ptnet/attention.hpp"
#include "ptnet/error.hpp"
#include "ptnet/geometry.hpp"
#include "ptnet/grid.hpp"
#include "ptnet/layers.hpp"
#include "ptnet/ops.hpp"
#include "ptnet/params.hpp"

namespace ptnet {

struct StageConfig {
  std::size_t width = 32;
  std::size_t blocks = 1;
  std::size_t downsample = 1;
};

enum class HeadKind { kSegmentation, kClassification };

inline std::string_view to_string(HeadKind h) { return h == HeadKind::kSegmentation ? "segmentation" : "classification"; }

inline HeadKind parse_head(std::string_view s) {
  if (s == "segmentation") return HeadKind::kSegmentation;
  if (s == "classification") return HeadKind::kClassification;
  throw InvalidArgument("unknown head '" + std::string(s) + "'");
}

struct BackboneConfig {
  std::vector<StageConfig> stages;
  std::size_t k = 16;
  /// Template for every layer; d is overridden per stage.
  AttentionConfig attention;
  HeadKind head = HeadKind::kSegmentation;
  std::size_t num_classes = 3;
  /// Per-point feature channels beyond the xyz coordinates.
  std::size_t in_features = 0;
  /// Block inner width = width / bottleneck.
  std::size_t bottleneck = 1;
  bool zero_init_residual = false;
  std::uint64_t seed = 1;

  static BackboneConfig with_widths(const std::vector<std::size_t>& widths, std::size_t blocks = 1) {
    BackboneConfig cfg;
    for (std::size_t s = 0; s < widths.size(); ++s) cfg.stages.push_back({widths[s], blocks, s == 0 ? 1u : 4u});
    return cfg;
  }

  void validate() const {
    if (stages.empty()) throw InvalidArgument("backbone: at least one stage required");
    if (stages.front().downsample != 1) throw InvalidArgument("backbone: first stage must have downsample 1");
    for (const auto& s : stages) {
      if (s.width == 0) throw InvalidArgument("backbone: stage width must be >= 1");
      if (s.downsample != 1 && s.downsample != 4) throw InvalidArgument("backbone: downsample must be 1 or 4");
      if (bottleneck == 0 || s.width % bottleneck != 0) {
        throw InvalidArgument("backbone: bottleneck must divide every stage width");
      }
    }
    if (k == 0) throw InvalidArgument("backbone: k must be >= 1");
    if (num_classes < 1) throw InvalidArgument("backbone: num_classes must be >= 1");
  }

  /// Smallest accepted cloud: the second-deepest stage is reached by exact
  /// division and the deepest keeps one point.
  std::size_t min_points() const {
    std::size_t m = 1;
    for (std::size_t s = 1; s + 1 < stages.size(); ++s) m *= stages[s].downsample;
    return m;
  }
};

/// Point count of every stage for an N-point input: ceil(n / rate), chained.
inline std::vector<std::size_t> stage_cardinalities(std::size_t n, const BackboneConfig& cfg) {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    if (s > 0) n = (n + cfg.stages[s].downsample - 1) / cfg.stages[s].downsample;
    out.push_back(n);
  }
  return out;
}

/// y = x + linear_out(layer(linear_in(x)))
template <typename T>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParamStore<T>& store, const std::string& name, std::size_t width, AttentionConfig attn,
                   std::size_t bottleneck, bool zero_init_out, Rng& rng) {
    const std::size_t inner = width / bottleneck;
    attn.d = inner;
    lin_in_ = Linear<T>(store, name + ".linear_in", width, inner, rng);
    layer_ = PointTransformerLayer<T>(store, name + ".attn", attn, rng);
    lin_out_ = Linear<T>(store, name + ".linear_out", inner, width, rng);
    if (zero_init_out) {
      lin_out_.weight().value.fill(T{0});
      lin_out_.bias().value.fill(T{0});
    }
  }

  Grid<T> forward(const Grid<T>& x, const std::vector<Vec3<T>>& p, const NeighborTable<T>& nb) {
    if (x.rank() != 2 || x.cols() != lin_in_.in_dim()) {
      throw InvalidArgument("transformer_block: input " + x.shape_string() + " does not match width " +
                            std::to_string(lin_in_.in_dim()));
    }
    Grid<T> y = lin_out_.forward(layer_.forward(lin_in_.forward(x), p, nb));
    y += x;
    return y;
  }

  Grid<T> backward(const Grid<T>& dy) {
    Grid<T> dx = lin_in_.backward(layer_.backward(lin_out_.backward(dy)));
    dx += dy;
    return dx;
  }

  PointTransformerLayer<T>& layer() { return layer_; }

 private:
  Linear<T> lin_in_;
  PointTransformerLayer<T> layer_;
  Linear<T> lin_out_;
};

/// FPS to ceil(n / rate) points, then per sampled point the max over its k
/// nearest input points of (ReLU . norm . linear)(x).
template <typename T>
class TransitionDown {
 public:
  TransitionDown() = default;
  TransitionDown(ParamStore<T>& store, const std::string& name, std::size_t din, std::size_t dout, std::size_t rate,
                 std::size_t k, Rng& rng)
      : unit_(store, name, din, dout, rng), rate_(rate), k_(k) {}

  struct Output {
    Grid<T> features;
    std::vector<Vec3<T>> positions;
    std::vector<std::int32_t> sampled;
  };

  Output forward(const Grid<T>& x, const std::vector<Vec3<T>>& p, ForwardMode mode, std::size_t fps_start = 0) {
    const std::size_t n = p.size();
    if (n == 0 || x.rows() != n) throw InvalidArgument("transition_down: features/positions mismatch");
    n_in_ = n;
    const std::size_t m = (n + rate_ - 1) / rate_;
    Output out;
    out.sampled = fps_sample(p, m, fps_start).selected;
    out.positions.reserve(m);
    for (auto idx : out.sampled) out.positions.push_back(p[static_cast<std::size_t>(idx)]);
    table_ = knn_search(p, out.positions, std::min(k_, n));
    const Grid<T> h = unit_.forward(x, mode);
    auto pooled = max_pool_neighbors(gather_neighbors(h, table_));
    argmax_ = std::move(pooled.argmax);
    out.features = std::move(pooled.values);
    return out;
  }

  Grid<T> backward(const Grid<T>& dy) {
    const Grid<T> dg = max_pool_neighbors_backward(argmax_, dy, table_.k);
    return unit_.backward(gather_neighbors_backward(dg, table_, n_in_));
  }

  const NeighborTable<T>& neighbors() const { return table_; }

 private:
  LinearNormRelu<T> unit_;
  std::size_t rate_ = 4;
  std::size_t k_ = 16;
  std::size_t n_in_ = 0;
  NeighborTable<T> table_;
  std::vector<std::uint32_t> argmax_;
};

/// (ReLU . norm . linear)(coarse) interpolated onto the fine positions plus
/// linear(skip).
template <typename T>
class TransitionUp {
 public:
  TransitionUp() = default;
  TransitionUp(ParamStore<T>& store, const std::string& name, std::size_t d_coarse, std::size_t d_fine, Rng& rng)
      : unit_(store, name + ".up", d_coarse, d_fine, rng), skip_(store, name + ".skip", d_fine, d_fine, rng) {}

  Grid<T> forward(const Grid<T>& coarse, const std::vector<Vec3<T>>& p_coarse, const Grid<T>& skip,
                  const std::vector<Vec3<T>>& p_fine, ForwardMode mode) {
    if (coarse.rows() != p_coarse.size() || skip.rows() != p_fine.size() || p_coarse.size() > p_fine.size()) {
      throw InvalidState("transition_up: encoder/decoder stage pairing mismatch (coarse " +
                         std::to_string(coarse.rows()) + " rows / " + std::to_string(p_coarse.size()) +
                         " points, fine " + std::to_string(skip.rows()) + " rows / " + std::to_string(p_fine.size()) +
                         " points)");
    }
    m_ = p_coarse.size();
    const Grid<T> a = unit_.forward(coarse, mode);
    weights_ = interpolation_weights(p_coarse, p_fine, std::min<std::size_t>(3, m_));
    Grid<T> y = apply_interpolation(weights_, a);
    y += skip_.forward(skip);
    return y;
  }

  struct Gradients {
    Grid<T> coarse;
    Grid<T> skip;
  };

  Gradients backward(const Grid<T>& dy) {
    Gradients g;
    g.skip = skip_.backward(dy);
    g.coarse = unit_.backward(apply_interpolation_transpose(weights_, dy, m_));
    return g;
  }

  Linear<T>& skip_linear() { return skip_; }

 private:
  LinearNormRelu<T> unit_;
  Linear<T> skip_;
  std::size_t m_ = 0;
  InterpolationWeights<T> weights_;
};

/// Five-stage (by default) point transformer with either a U-net decoder and
/// per-point head (segmentation) or global average pooling and a global head
/// (classification).
template <typename T>
class PointTransformerNet {
 public:
  explicit PointTransformerNet(const BackboneConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const auto& st = cfg.stages;
    const std::size_t num_stages = st.size();
    stem_ = LinearNormRelu<T>(store_, "enc0.stem", 3 + cfg.in_features, st[0].width, rng);
    down_.resize(num_stages);
    enc_blocks_.resize(num_stages);
    for (std::size_t s = 0; s < num_stages; ++s) {
      const std::string pre = "enc" + std::to_string(s);
      if (s > 0) {
        down_[s] = TransitionDown<T>(store_, pre + ".down", st[s - 1].width, st[s].width, st[s].downsample, cfg.k, rng);
      }
      for (std::size_t b = 0; b < st[s].blocks; ++b) {
        enc_blocks_[s].emplace_back(store_, pre + ".block" + std::to_string(b), st[s].width, stage_attention(),
                                    cfg.bottleneck, cfg.zero_init_residual, rng);
      }
    }
    if (cfg.head == HeadKind::kSegmentation) {
      up_.resize(num_stages);
      dec_blocks_.resize(num_stages);
      for (std::size_t s = num_stages - 1; s-- > 0;) {
        const std::string pre = "dec" + std::to_string(s);
        up_[s] = TransitionUp<T>(store_, pre, st[s + 1].width, st[s].width, rng);
        for (std::size_t b = 0; b < st[s].blocks; ++b) {
          dec_blocks_[s].emplace_back(store_, pre + ".block" + std::to_string(b), st[s].width, stage_attention(),
                                      cfg.bottleneck, cfg.zero_init_residual, rng);
        }
      }
      seg_head_unit_ = LinearNormRelu<T>(store_, "head.0", st[0].width, st[0].width, rng);
      seg_head_out_ = Linear<T>(store_, "head.1", st[0].width, cfg.num_classes, rng);
    } else {
      cls_head_ = Mlp<T>(store_, "head", st.back().width, st.back().width, cfg.num_classes, rng);
    }
  }

  PointTransformerNet(const PointTransformerNet&) = delete;
  PointTransformerNet& operator=(const PointTransformerNet&) = delete;

  const BackboneConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  /// Segmentation: N x num_classes logits in input order.
  /// Classification: 1 x num_classes logits.
  Grid<T> forward(const PointSet<T>& cloud, ForwardMode mode = kTrain, std::size_t fps_start = 0) {
    cloud.validate();
    const std::size_t n = cloud.size();
    if (n < cfg_.min_points()) {
      throw InvalidArgument("network: " + std::to_string(n) + " points is too few for " +
                            std::to_string(cfg_.stages.size()) + " stages; minimum N is " +
                            std::to_string(cfg_.min_points()));
    }
    if (fps_start >= n) throw InvalidArgument("network: fps start index out of range");
    const std::size_t feat = cloud.features ? cloud.features->cols() : 0;
    if (feat != cfg_.in_features) {
      throw InvalidArgument("network: cloud has " + std::to_string(feat) + " feature channels, expected " +
                            std::to_string(cfg_.in_features));
    }
    const std::size_t num_stages = cfg_.stages.size();
    positions_.assign(num_stages, {});
    tables_.assign(num_stages, {});
    enc_out_.assign(num_stages, {});

    positions_[0] = cloud.positions;
    Grid<T> x = stem_.forward(input_grid(cloud), mode);
    for (std::size_t s = 0; s < num_stages; ++s) {
      if (s > 0) {
        auto td = down_[s].forward(x, positions_[s - 1], mode, s == 1 ? fps_start : 0);
        x = std::move(td.features);
        positions_[s] = std::move(td.positions);
      }
      tables_[s] = knn_self(positions_[s], std::min(cfg_.k, positions_[s].size()));
      for (auto& blk : enc_blocks_[s]) x = blk.forward(x, positions_[s], tables_[s]);
      enc_out_[s] = x;
    }

    if (cfg_.head == HeadKind::kClassification) {
      pooled_rows_ = x.rows();
      return cls_head_.forward(global_avg_pool(x));
    }
    for (std::size_t s = num_stages - 1; s-- > 0;) {
      x = up_[s].forward(x, positions_[s + 1], enc_out_[s], positions_[s], mode);
      for (auto& blk : dec_blocks_[s]) x = blk.forward(x, positions_[s], tables_[s]);
    }
    return seg_head_out_.forward(seg_head_unit_.forward(x, mode));
  }

  /// Accumulates parameter gradients for dL/dlogits.
  void backward(const Grid<T>& dlogits) {
    const std::size_t num_stages = cfg_.stages.size();
    std::vector<Grid<T>> skip_grad(num_stages);
    Grid<T> g;
    if (cfg_.head == HeadKind::kClassification) {
      g = global_avg_pool_backward(cls_head_.backward(dlogits), pooled_rows_);
    } else {
      g = seg_head_unit_.backward(seg_head_out_.backward(dlogits));
      for (std::size_t s = 0; s + 1 < num_stages; ++s) {
        for (auto it = dec_blocks_[s].rbegin(); it != dec_blocks_[s].rend(); ++it) g = it->backward(g);
        auto ug = up_[s].backward(g);
        skip_grad[s] = std::move(ug.skip);
        g = std::move(ug.coarse);
      }
    }
    for (std::size_t s = num_stages; s-- > 0;) {
      if (!skip_grad[s].empty()) g += skip_grad[s];
      for (auto it = enc_blocks_[s].rbegin(); it != enc_blocks_[s].rend(); ++it) g = it->backward(g);
      if (s > 0) g = down_[s].backward(g);
    }
    stem_.backward(g);
  }

  /// Positions of each stage from the last forward call.
  const std::vector<std::vector<Vec3<T>>>& stage_positions() const { return positions_; }
  const std::vector<Grid<T>>& encoder_outputs() const { return enc_out_; }

  static Grid<T> input_grid(const PointSet<T>& cloud) {
    const std::size_t n = cloud.size();
    const std::size_t f = cloud.features ? cloud.features->cols() : 0;
    Grid<T> g = Grid<T>::matrix(n, 3 + f);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 3; ++c) g(i, c) = cloud.positions[i][c];
      for (std::size_t c = 0; c < f; ++c) g(i, 3 + c) = (*cloud.features)(i, c);
    }
    return g;
  }

 private:
  AttentionConfig stage_attention() const {
    AttentionConfig a = cfg_.attention;
    a.k = cfg_.k;
    return a;
  }

  BackboneConfig cfg_;
  ParamStore<T> store_;
  LinearNormRelu<T> stem_;
  std::vector<TransitionDown<T>> down_;
  std::vector<std::vector<TransformerBlock<T>>> enc_blocks_;
  std::vector<TransitionUp<T>> up_;
  std::vector<std::vector<TransformerBlock<T>>> dec_blocks_;
  LinearNormRelu<T> seg_head_unit_;
  Linear<T> seg_head_out_;
  Mlp<T> cls_head_;

  std::vector<std::vector<Vec3<T>>> positions_;
  std::vector<NeighborTable<T>> tables_;
  std::vector<Grid<T>> enc_out_;
  std::size_t pooled_rows_ = 0;
};

}  // namespace ptnet
