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
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "ptnet/error.hpp"
#include "ptnet/geometry.hpp"
#include "ptnet/random.hpp"

namespace ptnet {

/// layers:     class c is a horizontal plane patch at height c * spacing.
/// primitives: randomly placed and oriented planes, spheres, boxes and
///             cylinders in a grid of cells; the label is the primitive type,
///             so only local shape separates the classes.
/// shape:      one primitive per scene, labeled per point with its type; the
///             scene's object label is that type (classification).
enum class SceneKind { kLayers, kPrimitives, kShape };

inline std::string_view to_string(SceneKind k) {
  switch (k) {
    case SceneKind::kLayers: return "layers";
    case SceneKind::kPrimitives: return "primitives";
    case SceneKind::kShape: return "shape";
  }
  return "?";
}

inline SceneKind parse_scene_kind(std::string_view s) {
  if (s == "layers") return SceneKind::kLayers;
  if (s == "primitives") return SceneKind::kPrimitives;
  if (s == "shape") return SceneKind::kShape;
  throw InvalidArgument("unknown scene kind '" + std::string(s) + "'");
}

inline constexpr std::size_t kPrimitiveTypes = 4;

struct SceneSpec {
  SceneKind kind = SceneKind::kLayers;
  std::size_t points = 512;
  std::size_t classes = 3;
  /// Primitive count for the primitives kind (0 = 2 per class).
  std::size_t primitives = 0;
  double noise = 0.01;
  std::uint64_t seed = 7;
  double spacing = 0.5;
  /// Feasibility floor, normally the network's k.
  std::size_t min_points_per_class = 16;
  /// Shape kind: forced class, or -1 to draw it from the seed.
  int object_class = -1;
};

struct SyntheticScene {
  PointSet<float> cloud;
  SceneSpec spec;
  int object_label = -1;
};

/// Exact per-class point counts: points / classes each, remainder to the
/// lowest class ids.
inline std::vector<std::size_t> class_counts(std::size_t points, std::size_t classes) {
  std::vector<std::size_t> counts(classes, points / classes);
  for (std::size_t c = 0; c < points % classes; ++c) ++counts[c];
  return counts;
}

namespace detail {

using P3 = std::array<double, 3>;

inline P3 rotate(const P3& v, double yaw, double pitch) {
  const double cy = std::cos(yaw), sy = std::sin(yaw), cp = std::cos(pitch), sp = std::sin(pitch);
  const P3 a{v[0], cp * v[1] - sp * v[2], sp * v[1] + cp * v[2]};
  return {cy * a[0] - sy * a[1], sy * a[0] + cy * a[1], a[2]};
}

/// Unit-scale surface sample of primitive `type` centered at the origin.
inline P3 sample_primitive(std::size_t type, Rng& rng) {
  const double two_pi = 2.0 * std::numbers::pi;
  switch (type) {
    case 0: return {rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0};
    case 1: {
      const double z = rng.uniform(-1, 1), t = rng.uniform(0, two_pi), r = std::sqrt(1 - z * z);
      return {r * std::cos(t), r * std::sin(t), z};
    }
    case 2: {
      const std::size_t face = rng.below(6);
      const double a = rng.uniform(-0.7, 0.7), b = rng.uniform(-0.7, 0.7), s = face % 2 ? 0.7 : -0.7;
      if (face < 2) return {s, a, b};
      if (face < 4) return {a, s, b};
      return {a, b, s};
    }
    default: {
      const double t = rng.uniform(0, two_pi);
      return {0.8 * std::cos(t), 0.8 * std::sin(t), rng.uniform(-1, 1)};
    }
  }
}

}  // namespace detail

inline void validate(const SceneSpec& spec) {
  if (spec.classes < 2) throw InvalidArgument("scene: classes must be >= 2");
  if (spec.kind != SceneKind::kLayers && spec.classes > kPrimitiveTypes) {
    throw InvalidArgument("scene: at most " + std::to_string(kPrimitiveTypes) + " classes for primitive scenes");
  }
  if (spec.kind == SceneKind::kShape) {
    if (spec.points < spec.min_points_per_class) throw InvalidArgument("scene: too few points for one shape");
  } else if (spec.points / spec.classes < spec.min_points_per_class) {
    throw InvalidArgument("scene: " + std::to_string(spec.points) + " points over " + std::to_string(spec.classes) +
                          " classes leaves fewer than " + std::to_string(spec.min_points_per_class) +
                          " points per class");
  }
  if (spec.primitives != 0 && spec.primitives < spec.classes) {
    throw InvalidArgument("scene: need at least one primitive per class");
  }
  if (!(spec.noise >= 0.0)) throw InvalidArgument("scene: noise must be >= 0");
}

/// Deterministic in the spec; points are shuffled so labels are not sorted.
inline SyntheticScene gen_scene(const SceneSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  SyntheticScene scene;
  scene.spec = spec;
  std::vector<detail::P3> pts;
  std::vector<int> labels;
  pts.reserve(spec.points);
  labels.reserve(spec.points);

  auto jitter = [&](detail::P3 p) {
    for (double& c : p) c += spec.noise * rng.normal();
    return p;
  };

  switch (spec.kind) {
    case SceneKind::kLayers: {
      const auto counts = class_counts(spec.points, spec.classes);
      for (std::size_t c = 0; c < spec.classes; ++c)
        for (std::size_t t = 0; t < counts[c]; ++t) {
          pts.push_back(jitter({rng.uniform(0, 1), rng.uniform(0, 1), spec.spacing * static_cast<double>(c)}));
          labels.push_back(static_cast<int>(c));
        }
      break;
    }
    case SceneKind::kPrimitives: {
      const std::size_t prims = spec.primitives ? spec.primitives : 2 * spec.classes;
      const auto side = static_cast<std::size_t>(std::ceil(std::cbrt(static_cast<double>(prims))));
      // Random cell assignment keeps class and location uncorrelated.
      std::vector<std::size_t> cells(side * side * side);
      for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
      for (std::size_t i = cells.size(); i > 1; --i) std::swap(cells[i - 1], cells[rng.below(i)]);
      const auto counts = class_counts(spec.points, spec.classes);
      std::vector<std::size_t> per_class_prims(spec.classes, 0);
      for (std::size_t q = 0; q < prims; ++q) ++per_class_prims[q % spec.classes];
      std::vector<std::size_t> seen(spec.classes, 0);
      for (std::size_t q = 0; q < prims; ++q) {
        const std::size_t c = q % spec.classes;
        const std::size_t share = counts[c] / per_class_prims[c] + (seen[c] < counts[c] % per_class_prims[c] ? 1 : 0);
        ++seen[c];
        const std::size_t cell = cells[q];
        const detail::P3 center{static_cast<double>(cell % side) + rng.uniform(0.4, 0.6),
                                static_cast<double>((cell / side) % side) + rng.uniform(0.4, 0.6),
                                static_cast<double>(cell / (side * side)) + rng.uniform(0.4, 0.6)};
        const double scale = rng.uniform(0.3, 0.4);
        const double yaw = rng.uniform(0, 2 * std::numbers::pi), pitch = rng.uniform(0, std::numbers::pi);
        for (std::size_t t = 0; t < share; ++t) {
          const detail::P3 local = detail::rotate(detail::sample_primitive(c, rng), yaw, pitch);
          pts.push_back(jitter({center[0] + scale * local[0], center[1] + scale * local[1],
                                center[2] + scale * local[2]}));
          labels.push_back(static_cast<int>(c));
        }
      }
      break;
    }
    case SceneKind::kShape: {
      const std::size_t c =
          spec.object_class >= 0 ? static_cast<std::size_t>(spec.object_class) % spec.classes : rng.below(spec.classes);
      scene.object_label = static_cast<int>(c);
      const double yaw = rng.uniform(0, 2 * std::numbers::pi), pitch = rng.uniform(0, std::numbers::pi);
      for (std::size_t t = 0; t < spec.points; ++t) {
        pts.push_back(jitter(detail::rotate(detail::sample_primitive(c, rng), yaw, pitch)));
        labels.push_back(static_cast<int>(c));
      }
      break;
    }
  }

  for (std::size_t i = pts.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(pts[i - 1], pts[j]);
    std::swap(labels[i - 1], labels[j]);
  }
  scene.cloud.positions.reserve(pts.size());
  for (const auto& p : pts) {
    scene.cloud.positions.push_back({static_cast<float>(p[0]), static_cast<float>(p[1]), static_cast<float>(p[2])});
  }
  scene.cloud.labels = std::move(labels);
  return scene;
}

/// `count` scenes with seeds seed, seed + 1, ...
inline std::vector<SyntheticScene> gen_scenes(SceneSpec spec, std::size_t count) {
  std::vector<SyntheticScene> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(gen_scene(spec));
    ++spec.seed;
  }
  return out;
}

}  // namespace ptnet
