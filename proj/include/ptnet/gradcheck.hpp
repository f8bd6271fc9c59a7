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
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ptnet/error.hpp"
#include "ptnet/grid.hpp"
#include "ptnet/ops.hpp"
#include "ptnet/params.hpp"
#include "ptnet/random.hpp"

namespace ptnet {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  int directions = 3;
  std::uint64_t seed = 1;
  /// Denominator floor, max(floor, floor_rel * |loss|), so that vanishing
  /// gradients compare absolutely at the loss's roundoff scale.
  double floor = 1e-6;
  double floor_rel = 1e-5;
  /// Directions whose +-step probes change the ReLU / max-pool pattern are
  /// redrawn, up to this many times per target; every few redraws the step
  /// is halved so that a unit sitting next to its kink can be stepped around.
  int max_redraws = 40;
  int redraws_per_halving = 4;
  double min_step = 1e-8;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  bool pass = true;
  int redrawn = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;

  bool passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.pass; });
  }
  double max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
};

/// A value grid probed by finite differences and the gradient grid the
/// analytic backward pass fills for it.
struct GradTarget {
  std::string name;
  Grid<double>* value;
  Grid<double>* grad;
};

/// Compares central-difference directional derivatives of `loss` with the
/// analytic gradients along random Gaussian directions, one set of
/// directions per target. `backward` must zero and then populate every
/// target's grad for the current values.
inline GradCheckReport grad_check(const std::function<double()>& loss, const std::function<void()>& backward,
                                  const std::vector<GradTarget>& targets, const GradCheckOptions& opts = {}) {
  KinkMonitor monitor;
  const double base = loss();
  const std::uint64_t base_pattern = monitor.fingerprint();
  monitor.reset();
  if (loss() != base || monitor.fingerprint() != base_pattern) {
    throw InvalidInput("grad_check: loss is not deterministic");
  }
  backward();
  const double floor = std::max(opts.floor, opts.floor_rel * std::abs(base));

  GradCheckReport report;
  report.tolerance = opts.tolerance;
  Rng rng(opts.seed);
  for (const GradTarget& t : targets) {
    t.value->require_same_shape(*t.grad, "grad_check");
    GradCheckEntry entry{t.name, 0.0, true};
    std::vector<double> dir(t.value->size());
    double step = opts.step;
    for (int d = 0; d < opts.directions; ++d) {
      for (double& v : dir) v = rng.normal();
      double analytic = 0.0;
      for (std::size_t i = 0; i < dir.size(); ++i) analytic += (*t.grad)[i] * dir[i];
      const Grid<double> saved = *t.value;
      for (std::size_t i = 0; i < dir.size(); ++i) (*t.value)[i] = saved[i] + step * dir[i];
      monitor.reset();
      const double plus = loss();
      const bool plus_smooth = monitor.fingerprint() == base_pattern;
      for (std::size_t i = 0; i < dir.size(); ++i) (*t.value)[i] = saved[i] - step * dir[i];
      monitor.reset();
      const double minus = loss();
      const bool minus_smooth = monitor.fingerprint() == base_pattern;
      *t.value = saved;
      if (!(plus_smooth && minus_smooth) && entry.redrawn < opts.max_redraws) {
        ++entry.redrawn;
        if (entry.redrawn % opts.redraws_per_halving == 0) step = std::max(opts.min_step, step / 2.0);
        --d;
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * step);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      const double rel = std::abs(analytic - numeric) / denom;
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
    }
    entry.pass = entry.max_rel_error <= opts.tolerance;
    report.entries.push_back(entry);
  }
  return report;
}

/// Every trainable parameter of a store as a grad_check target.
inline std::vector<GradTarget> param_targets(ParamStore<double>& store) {
  std::vector<GradTarget> out;
  for (auto& [name, p] : store) {
    if (!p.trainable) continue;
    p.grad_buffer();
    out.push_back({name, &p.value, &p.grad});
  }
  return out;
}

/// Scalarizes an output grid as sum(output * weights) with fixed random
/// weights; its gradient with respect to the output is the weights.
class ProbeLoss {
 public:
  ProbeLoss() = default;
  ProbeLoss(const std::vector<std::size_t>& shape, std::uint64_t seed) : weights_(shape) {
    Rng rng(seed);
    for (double& v : weights_.values()) v = rng.normal();
  }

  double operator()(const Grid<double>& out) const {
    out.require_same_shape(weights_, "ProbeLoss");
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * weights_[i];
    return s;
  }
  const Grid<double>& gradient() const { return weights_; }

 private:
  Grid<double> weights_;
};

}  // namespace ptnet
