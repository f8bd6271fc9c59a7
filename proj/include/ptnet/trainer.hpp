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
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ptnet/error.hpp"
#include "ptnet/metrics.hpp"
#include "ptnet/network.hpp"
#include "ptnet/params.hpp"
#include "ptnet/scene.hpp"

namespace ptnet {

class DivergenceError : public InvalidState {
 public:
  DivergenceError(long iteration, double loss)
      : InvalidState("training diverged at iteration " + std::to_string(iteration) + ": loss = " + std::to_string(loss)),
        iteration_(iteration),
        loss_(loss) {}
  long iteration() const { return iteration_; }
  double loss() const { return loss_; }

 private:
  long iteration_;
  double loss_;
};

struct TrainOptions {
  long iterations = 2000;
  double learning_rate = 0.5;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  /// Fractions of `iterations` at which the rate is multiplied by drop_factor.
  std::vector<double> drops{0.6, 0.8};
  double drop_factor = 0.1;
  std::size_t fps_start = 0;

  OptimizerState optimizer() const {
    OptimizerState s;
    s.learning_rate = learning_rate;
    s.momentum = momentum;
    s.weight_decay = weight_decay;
    s.schedule = OptimizerState::step_schedule(iterations, drops, drop_factor);
    s.validate();
    return s;
  }
};

struct LossRecord {
  long iteration = 0;
  double lr = 0.0;
  double loss = 0.0;
};

inline std::string loss_csv(const std::vector<LossRecord>& curve) {
  std::ostringstream os;
  os.precision(9);
  os << "iteration,lr,loss\n";
  for (const auto& r : curve) os << r.iteration << ',' << r.lr << ',' << r.loss << '\n';
  return os.str();
}

/// Per-point labels for segmentation, the single object label for
/// classification.
inline std::vector<int> target_labels(const SyntheticScene& scene, HeadKind head) {
  if (head == HeadKind::kSegmentation) return scene.cloud.labels;
  if (scene.object_label < 0) throw InvalidInput("classification training needs scenes with an object label");
  return {scene.object_label};
}

/// One cloud per step, cycling through `scenes`; unweighted cross-entropy,
/// SGD with momentum and weight decay, step-dropped learning rate.
template <typename T>
std::vector<LossRecord> train(PointTransformerNet<T>& net, const std::vector<SyntheticScene>& scenes,
                              const TrainOptions& opts,
                              const std::function<void(const LossRecord&)>& on_step = {}) {
  if (scenes.empty()) throw InvalidArgument("train: no scenes");
  OptimizerState state = opts.optimizer();
  const HeadKind head = net.config().head;
  std::vector<PointSet<T>> clouds;
  std::vector<std::vector<int>> labels;
  for (const auto& s : scenes) {
    PointSet<T> c;
    for (const auto& p : s.cloud.positions) c.positions.push_back({T(p[0]), T(p[1]), T(p[2])});
    if (s.cloud.features) c.features = s.cloud.features->template cast<T>();
    clouds.push_back(std::move(c));
    labels.push_back(target_labels(s, head));
  }

  std::vector<LossRecord> curve;
  curve.reserve(static_cast<std::size_t>(opts.iterations));
  net.params().zero_grad();
  for (long it = 0; it < opts.iterations; ++it) {
    const std::size_t idx = static_cast<std::size_t>(it) % clouds.size();
    const Grid<T> logits = net.forward(clouds[idx], kTrain, opts.fps_start);
    auto ce = cross_entropy(logits, labels[idx]);
    if (!std::isfinite(ce.loss)) throw DivergenceError(it, ce.loss);
    net.backward(ce.grad);
    LossRecord rec{it, state.current_rate(), ce.loss};
    sgd_step(net.params(), state);
    curve.push_back(rec);
    if (on_step) on_step(rec);
  }
  return curve;
}

template <typename T>
MetricsReport evaluate(PointTransformerNet<T>& net, const std::vector<SyntheticScene>& scenes,
                       ForwardMode mode = kEval, std::size_t fps_start = 0) {
  if (scenes.empty()) throw InvalidArgument("evaluate: no scenes");
  const HeadKind head = net.config().head;
  std::vector<int> truth, pred;
  for (const auto& s : scenes) {
    PointSet<T> c;
    for (const auto& p : s.cloud.positions) c.positions.push_back({T(p[0]), T(p[1]), T(p[2])});
    if (s.cloud.features) c.features = s.cloud.features->template cast<T>();
    const auto p = argmax_rows(net.forward(c, mode, fps_start));
    const auto t = target_labels(s, head);
    truth.insert(truth.end(), t.begin(), t.end());
    pred.insert(pred.end(), p.begin(), p.end());
  }
  return evaluate_predictions(truth, pred, net.config().num_classes);
}

}  // namespace ptnet
