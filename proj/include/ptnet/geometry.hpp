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

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ptnet/error.hpp"
#include "ptnet/grid.hpp"

namespace ptnet {

template <typename T>
using Vec3 = std::array<T, 3>;

/// N points with optional per-point features (N x d) and integer labels.
template <typename T>
struct PointSet {
  std::vector<Vec3<T>> positions;
  std::optional<Grid<T>> features;
  std::vector<int> labels;

  std::size_t size() const { return positions.size(); }

  /// Throws InvalidInput on an empty set, non-finite coordinates, or
  /// feature/label row counts that disagree with N.
  void validate() const {
    if (positions.empty()) throw InvalidInput("PointSet: empty point set");
    for (std::size_t i = 0; i < positions.size(); ++i) {
      for (T c : positions[i]) {
        if (!std::isfinite(c)) throw InvalidInput("PointSet: non-finite coordinate at point " + std::to_string(i));
      }
    }
    if (features && features->rows() != positions.size()) {
      throw InvalidInput("PointSet: feature rows " + std::to_string(features->rows()) + " != " +
                         std::to_string(positions.size()) + " points");
    }
    if (!labels.empty() && labels.size() != positions.size()) {
      throw InvalidInput("PointSet: label count does not match point count");
    }
  }
};

/// For each query: k neighbor indices and squared distances, ascending by
/// (distance, index).
template <typename T>
struct NeighborTable {
  std::size_t rows = 0;
  std::size_t k = 0;
  std::vector<std::int32_t> indices;
  std::vector<T> sq_dists;

  std::int32_t index(std::size_t row, std::size_t slot) const { return indices[row * k + slot]; }
  T sq_dist(std::size_t row, std::size_t slot) const { return sq_dists[row * k + slot]; }
};

/// Farthest point sampling output. min_sq_dists holds each source point's
/// squared distance to the selected set at termination.
template <typename T>
struct SampleResult {
  std::vector<std::int32_t> selected;
  std::vector<T> min_sq_dists;
};

template <typename T>
inline T squared_distance(const Vec3<T>& a, const Vec3<T>& b) {
  const T dx = a[0] - b[0];
  const T dy = a[1] - b[1];
  const T dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

namespace detail {

template <typename T>
void require_finite(const std::vector<Vec3<T>>& pts, const char* what) {
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (T c : pts[i]) {
      if (!std::isfinite(c)) {
        throw InvalidInput(std::string(what) + ": non-finite coordinate at point " + std::to_string(i));
      }
    }
  }
}

/// Fixed-capacity max-heap on (distance, index). Candidates must arrive in
/// increasing index order, which lets a single strict distance comparison
/// against the root decide admission with smaller-index tie-breaking.
template <typename T>
class BoundedMaxHeap {
 public:
  explicit BoundedMaxHeap(std::size_t capacity) : cap_(capacity), dist_(capacity), idx_(capacity) {}

  void clear() { size_ = 0; }
  std::size_t size() const { return size_; }
  bool full() const { return size_ == cap_; }
  T top_dist() const { return dist_[0]; }

  void offer(T d, std::int32_t i) {
    if (size_ < cap_) {
      push(d, i);
    } else if (d < dist_[0]) {
      dist_[0] = d;
      idx_[0] = i;
      sift_down(0, size_);
    }
  }

  /// Heap-sorts in place and writes the ascending sequence to the outputs.
  void drain_sorted(std::int32_t* out_idx, T* out_dist) {
    for (std::size_t end = size_; end > 1; --end) {
      std::swap(dist_[0], dist_[end - 1]);
      std::swap(idx_[0], idx_[end - 1]);
      sift_down(0, end - 1);
    }
    for (std::size_t s = 0; s < size_; ++s) {
      out_idx[s] = idx_[s];
      out_dist[s] = dist_[s];
    }
    size_ = 0;
  }

 private:
  bool less(std::size_t a, std::size_t b) const {
    return dist_[a] < dist_[b] || (dist_[a] == dist_[b] && idx_[a] < idx_[b]);
  }

  void push(T d, std::int32_t i) {
    std::size_t c = size_++;
    dist_[c] = d;
    idx_[c] = i;
    while (c > 0) {
      const std::size_t parent = (c - 1) / 2;
      if (!less(parent, c)) break;
      std::swap(dist_[parent], dist_[c]);
      std::swap(idx_[parent], idx_[c]);
      c = parent;
    }
  }

  void sift_down(std::size_t c, std::size_t n) {
    for (;;) {
      const std::size_t l = 2 * c + 1;
      if (l >= n) return;
      std::size_t big = l;
      if (l + 1 < n && less(l, l + 1)) big = l + 1;
      if (!less(c, big)) return;
      std::swap(dist_[c], dist_[big]);
      std::swap(idx_[c], idx_[big]);
      c = big;
    }
  }

  std::size_t cap_;
  std::size_t size_ = 0;
  std::vector<T> dist_;
  std::vector<std::int32_t> idx_;
};

/// Linear scan + bounded heap. When skip_self is set, query q is treated as
/// points[q], excluded from the scan, and pinned to slot 0 at distance 0.
template <typename T>
NeighborTable<T> knn_scan(const std::vector<Vec3<T>>& points, const std::vector<Vec3<T>>& queries, std::size_t k,
                          bool skip_self) {
  const std::size_t n = points.size();
  NeighborTable<T> table;
  table.rows = queries.size();
  table.k = k;
  table.indices.resize(queries.size() * k);
  table.sq_dists.resize(queries.size() * k);

  std::vector<T> xs(n), ys(n), zs(n);
  for (std::size_t j = 0; j < n; ++j) {
    xs[j] = points[j][0];
    ys[j] = points[j][1];
    zs[j] = points[j][2];
  }

  constexpr std::size_t kBlock = 512;
  std::vector<T> block(kBlock);
  const std::size_t heap_k = skip_self ? k - 1 : k;
  BoundedMaxHeap<T> heap(heap_k);

  for (std::size_t q = 0; q < queries.size(); ++q) {
    const T qx = queries[q][0];
    const T qy = queries[q][1];
    const T qz = queries[q][2];
    std::int32_t* out_idx = table.indices.data() + q * k;
    T* out_dist = table.sq_dists.data() + q * k;
    if (skip_self) {
      out_idx[0] = static_cast<std::int32_t>(q);
      out_dist[0] = T{0};
      ++out_idx;
      ++out_dist;
      if (heap_k == 0) continue;
    }
    heap.clear();
    for (std::size_t j0 = 0; j0 < n; j0 += kBlock) {
      const std::size_t len = std::min(kBlock, n - j0);
      for (std::size_t t = 0; t < len; ++t) {
        const T dx = qx - xs[j0 + t];
        const T dy = qy - ys[j0 + t];
        const T dz = qz - zs[j0 + t];
        block[t] = dx * dx + dy * dy + dz * dz;
      }
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t j = j0 + t;
        if (skip_self && j == q) continue;
        heap.offer(block[t], static_cast<std::int32_t>(j));
      }
    }
    heap.drain_sorted(out_idx, out_dist);
  }
  return table;
}

}  // namespace detail

/// k nearest neighbors of every query among points, by squared Euclidean
/// distance, ties to the smaller index.
template <typename T>
NeighborTable<T> knn_search(const std::vector<Vec3<T>>& points, const std::vector<Vec3<T>>& queries,
                            std::size_t k) {
  if (k == 0) throw InvalidArgument("knn_search: k must be positive");
  if (k > points.size()) {
    throw InvalidArgument("knn_search: k=" + std::to_string(k) + " exceeds point count " +
                          std::to_string(points.size()));
  }
  detail::require_finite(points, "knn_search points");
  detail::require_finite(queries, "knn_search queries");
  return detail::knn_scan(points, queries, k, false);
}

template <typename T>
NeighborTable<T> knn_search(const PointSet<T>& points, const PointSet<T>& queries, std::size_t k) {
  return knn_search(points.positions, queries.positions, k);
}

/// kNN graph of a set onto itself with every point its own first neighbor,
/// even in the presence of coincident points.
template <typename T>
NeighborTable<T> knn_self(const std::vector<Vec3<T>>& points, std::size_t k) {
  if (k == 0) throw InvalidArgument("knn_self: k must be positive");
  if (k > points.size()) {
    throw InvalidArgument("knn_self: k=" + std::to_string(k) + " exceeds point count " +
                          std::to_string(points.size()));
  }
  detail::require_finite(points, "knn_self");
  return detail::knn_scan(points, points, k, true);
}

/// Greedy maxmin subset of size m starting from `start`.
template <typename T>
SampleResult<T> fps_sample(const std::vector<Vec3<T>>& points, std::size_t m, std::size_t start = 0) {
  const std::size_t n = points.size();
  if (m == 0) throw InvalidArgument("fps_sample: m must be positive");
  if (m > n) {
    throw InvalidArgument("fps_sample: m=" + std::to_string(m) + " exceeds point count " + std::to_string(n));
  }
  if (start >= n) throw InvalidArgument("fps_sample: start index out of range");
  detail::require_finite(points, "fps_sample");

  SampleResult<T> out;
  out.selected.reserve(m);
  out.min_sq_dists.assign(n, std::numeric_limits<T>::infinity());
  std::vector<char> taken(n, 0);

  std::size_t current = start;
  for (std::size_t t = 0; t < m; ++t) {
    out.selected.push_back(static_cast<std::int32_t>(current));
    taken[current] = 1;
    const Vec3<T>& c = points[current];
    std::size_t best = n;
    T best_d = -T{1};
    for (std::size_t j = 0; j < n; ++j) {
      const T d = squared_distance(points[j], c);
      if (d < out.min_sq_dists[j]) out.min_sq_dists[j] = d;
      if (!taken[j] && out.min_sq_dists[j] > best_d) {
        best_d = out.min_sq_dists[j];
        best = j;
      }
    }
    current = best;
  }
  return out;
}

template <typename T>
SampleResult<T> fps_sample(const PointSet<T>& points, std::size_t m, std::size_t start = 0) {
  return fps_sample(points.positions, m, start);
}

/// Inverse-squared-distance weights over the p nearest sources of each
/// target; every row of weights sums to one.
template <typename T>
struct InterpolationWeights {
  NeighborTable<T> neighbors;
  std::vector<T> weights;  // rows x p
};

inline constexpr double kInterpolationEps = 1e-8;

template <typename T>
InterpolationWeights<T> interpolation_weights(const std::vector<Vec3<T>>& sources,
                                              const std::vector<Vec3<T>>& targets, std::size_t p = 3) {
  InterpolationWeights<T> out;
  out.neighbors = knn_search(sources, targets, p);
  out.weights.resize(targets.size() * p);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    T total = 0;
    for (std::size_t s = 0; s < p; ++s) {
      const T w = T{1} / (out.neighbors.sq_dist(i, s) + static_cast<T>(kInterpolationEps));
      out.weights[i * p + s] = w;
      total += w;
    }
    for (std::size_t s = 0; s < p; ++s) out.weights[i * p + s] /= total;
  }
  return out;
}

/// Applies precomputed weights to source features (sources x c).
template <typename T>
Grid<T> apply_interpolation(const InterpolationWeights<T>& iw, const Grid<T>& source_features) {
  const std::size_t p = iw.neighbors.k;
  const std::size_t c = source_features.cols();
  Grid<T> out = Grid<T>::matrix(iw.neighbors.rows, c);
  for (std::size_t i = 0; i < iw.neighbors.rows; ++i) {
    for (std::size_t s = 0; s < p; ++s) {
      const T w = iw.weights[i * p + s];
      const auto src = source_features.row(static_cast<std::size_t>(iw.neighbors.index(i, s)));
      for (std::size_t ch = 0; ch < c; ++ch) out(i, ch) += w * src[ch];
    }
  }
  return out;
}

/// Transpose of apply_interpolation: scatters target gradients to sources.
template <typename T>
Grid<T> apply_interpolation_transpose(const InterpolationWeights<T>& iw, const Grid<T>& target_grad,
                                      std::size_t num_sources) {
  const std::size_t p = iw.neighbors.k;
  const std::size_t c = target_grad.cols();
  Grid<T> out = Grid<T>::matrix(num_sources, c);
  for (std::size_t i = 0; i < iw.neighbors.rows; ++i) {
    for (std::size_t s = 0; s < p; ++s) {
      const T w = iw.weights[i * p + s];
      auto dst = out.row(static_cast<std::size_t>(iw.neighbors.index(i, s)));
      for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += w * target_grad(i, ch);
    }
  }
  return out;
}

template <typename T>
Grid<T> interpolate(const PointSet<T>& source, const PointSet<T>& targets, std::size_t p = 3) {
  if (!source.features) throw InvalidInput("interpolate: source point set has no features");
  if (p == 0 || p > source.size()) {
    throw InvalidArgument("interpolate: neighbor count must be in [1, source size]");
  }
  source.validate();
  return apply_interpolation(interpolation_weights(source.positions, targets.positions, p), *source.features);
}

}  // namespace ptnet
