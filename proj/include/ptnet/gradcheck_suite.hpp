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
#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ptnet/attention.hpp"
#include "ptnet/gradcheck.hpp"
#include "ptnet/layers.hpp"
#include "ptnet/metrics.hpp"
#include "ptnet/network.hpp"
#include "ptnet/ops.hpp"

namespace ptnet {

// Finite-difference checks for every differentiable component, all in
// double precision. Used by the gradcheck command and the test suites.

struct GradCheckRow {
  std::string component;
  std::string variant;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Shortest round-trip scientific form with a bare exponent: 1e-4, 3.25e-7.
inline std::string compact_sci(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::scientific);
  std::string s(buf, res.ptr);
  const auto e = s.find('e');
  if (e == std::string::npos) return s;
  std::string mant = s.substr(0, e), exp = s.substr(e + 1);
  std::string sign;
  if (!exp.empty() && (exp[0] == '-' || exp[0] == '+')) {
    if (exp[0] == '-') sign = "-";
    exp.erase(0, 1);
  }
  exp.erase(0, std::min(exp.find_first_not_of('0'), exp.size() - 1));
  return mant + "e" + sign + exp;
}

inline std::string gradcheck_csv(const std::vector<GradCheckRow>& rows) {
  std::ostringstream os;
  os << "component,variant,max_rel_error,tolerance,pass\n";
  for (const auto& r : rows) {
    os << r.component << ',' << r.variant << ',' << compact_sci(r.max_rel_error) << ',' << compact_sci(r.tolerance)
       << ',' << (r.pass ? "pass" : "FAIL") << '\n';
  }
  return os.str();
}

/// Input grid plus the gradient slot its module's backward writes.
struct ProbedInput {
  std::string name;
  Grid<double> value;
  Grid<double> grad;
};

/// Checks all trainable parameters of `store` (may be null) and every probed
/// input. `forward` reads the current input values; `backward` receives
/// dL/doutput and must store input gradients into the ProbedInput slots.
inline GradCheckReport check_module(ParamStore<double>* store, std::vector<ProbedInput>& inputs,
                                    const std::function<Grid<double>()>& forward,
                                    const std::function<void(const Grid<double>&)>& backward,
                                    const GradCheckOptions& opts) {
  const Grid<double> out0 = forward();
  const ProbeLoss probe(out0.shape(), opts.seed + 7919);
  std::vector<GradTarget> targets;
  for (auto& in : inputs) {
    in.grad = Grid<double>(in.value.shape());
    targets.push_back({in.name, &in.value, &in.grad});
  }
  if (store) {
    for (auto& t : param_targets(*store)) targets.push_back(t);
  }
  auto loss = [&] { return probe(forward()); };
  auto run_backward = [&] {
    if (store) store->zero_grad();
    forward();
    backward(probe.gradient());
  };
  return grad_check(loss, run_backward, targets, opts);
}

inline Grid<double> random_grid(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Grid<double> g(std::move(shape));
  for (double& v : g.values()) v = scale * rng.normal();
  return g;
}

/// Redraws entries closer than `margin` to zero (ReLU kink exclusion).
inline void push_off_zero(Grid<double>& g, Rng& rng, double margin) {
  for (double& v : g.values()) {
    while (std::abs(v) < margin) v = rng.normal();
  }
}

inline std::vector<Vec3<double>> random_positions(std::size_t n, Rng& rng) {
  std::vector<Vec3<double>> p(n);
  for (auto& v : p) v = {rng.uniform(), rng.uniform(), rng.uniform()};
  return p;
}

inline GradCheckRow to_row(std::string component, std::string variant, const GradCheckReport& r) {
  return {std::move(component), std::move(variant), r.max_rel_error(), r.tolerance, r.passed()};
}

/// Point transformer layer variant on n points, k neighbors, width d.
inline GradCheckReport check_attention(const AttentionConfig& cfg, std::size_t n, const GradCheckOptions& opts) {
  Rng rng(opts.seed);
  ParamStore<double> store;
  PointTransformerLayer<double> layer(store, "attn", cfg, rng);
  const auto p = random_positions(n, rng);
  const auto nb = knn_self(p, std::min(cfg.k, n));
  std::vector<ProbedInput> inputs{{"x", random_grid({n, cfg.d}, rng), {}}};
  return check_module(
      &store, inputs, [&] { return layer.forward(inputs[0].value, p, nb); },
      [&](const Grid<double>& dy) { inputs[0].grad = layer.backward(dy); }, opts);
}

inline GradCheckReport check_network(HeadKind head, std::size_t n, const std::vector<std::size_t>& widths,
                                     std::size_t classes, const GradCheckOptions& opts, AttentionConfig attn = {}) {
  BackboneConfig cfg = BackboneConfig::with_widths(widths);
  cfg.head = head;
  cfg.num_classes = classes;
  cfg.k = 16;
  cfg.attention = attn;
  cfg.seed = opts.seed;
  PointTransformerNet<double> net(cfg);
  Rng rng(opts.seed + 1);
  PointSet<double> cloud;
  cloud.positions = random_positions(n, rng);
  const ForwardMode mode{true, false};
  std::vector<ProbedInput> none;
  return check_module(
      &net.params(), none, [&] { return net.forward(cloud, mode); },
      [&](const Grid<double>& dy) { net.backward(dy); }, opts);
}

/// Every layer type, all 40 attention variants, and both full networks.
inline std::vector<GradCheckRow> run_gradcheck_suite(double tolerance = 1e-4, double network_tolerance = 1e-3,
                                                     std::uint64_t seed = 1) {
  std::vector<GradCheckRow> rows;
  GradCheckOptions opts;
  opts.tolerance = tolerance;
  opts.seed = seed;
  const double margin = 10.0 * opts.step;

  {
    Rng rng(seed);
    ParamStore<double> store;
    Linear<double> lin(store, "linear", 8, 6, rng);
    std::vector<ProbedInput> in{{"x", random_grid({5, 8}, rng), {}}};
    rows.push_back(to_row("linear", "5x8->6",
                          check_module(
                              &store, in, [&] { return lin.forward(in[0].value); },
                              [&](const Grid<double>& dy) { in[0].grad = lin.backward(dy); }, opts)));
  }
  {
    Rng rng(seed);
    Relu<double> relu;
    std::vector<ProbedInput> in{{"x", random_grid({6, 5}, rng), {}}};
    push_off_zero(in[0].value, rng, margin);
    rows.push_back(to_row("relu", "6x5",
                          check_module(
                              nullptr, in, [&] { return relu.forward(in[0].value); },
                              [&](const Grid<double>& dy) { in[0].grad = relu.backward(dy); }, opts)));
  }
  {
    Rng rng(seed);
    ParamStore<double> store;
    PointNorm<double> norm(store, "norm", 4);
    for (double& v : norm.gain().value.values()) v = rng.uniform(0.5, 1.5);
    for (double& v : norm.bias().value.values()) v = rng.normal();
    std::vector<ProbedInput> in{{"x", random_grid({7, 4}, rng), {}}};
    const ForwardMode mode{true, false};
    rows.push_back(to_row("point_norm", "train 7x4",
                          check_module(
                              &store, in, [&] { return norm.forward(in[0].value, mode); },
                              [&](const Grid<double>& dy) { in[0].grad = norm.backward(dy); }, opts)));
    rows.push_back(to_row("point_norm", "eval 7x4",
                          check_module(
                              &store, in, [&] { return norm.forward(in[0].value, kEval); },
                              [&](const Grid<double>& dy) { in[0].grad = norm.backward(dy); }, opts)));
  }
  {
    Rng rng(seed);
    std::vector<ProbedInput> in{{"logits", random_grid({3, 4, 5}, rng), {}}};
    Grid<double> w;
    rows.push_back(to_row("softmax_neighbors", "3x4x5",
                          check_module(
                              nullptr, in, [&] { return w = softmax_neighbors(in[0].value); },
                              [&](const Grid<double>& dy) { in[0].grad = softmax_neighbors_backward(w, dy); }, opts)));
  }
  {
    Rng rng(seed);
    std::vector<ProbedInput> in{{"features", random_grid({3, 4, 5}, rng), {}}};
    std::vector<std::uint32_t> arg;
    rows.push_back(to_row("max_pool_neighbors", "3x4x5",
                          check_module(
                              nullptr, in,
                              [&] {
                                auto r = max_pool_neighbors(in[0].value);
                                arg = r.argmax;
                                return r.values;
                              },
                              [&](const Grid<double>& dy) { in[0].grad = max_pool_neighbors_backward(arg, dy, 4); },
                              opts)));
  }
  {
    Rng rng(seed);
    std::vector<ProbedInput> in{{"features", random_grid({6, 5}, rng), {}}};
    rows.push_back(to_row("global_avg_pool", "6x5",
                          check_module(
                              nullptr, in, [&] { return global_avg_pool(in[0].value); },
                              [&](const Grid<double>& dy) { in[0].grad = global_avg_pool_backward(dy, 6); }, opts)));
  }
  {
    Rng rng(seed);
    ParamStore<double> store;
    Mlp<double> mlp(store, "mlp", 5, 6, 4, rng);
    std::vector<ProbedInput> in{{"x", random_grid({6, 5}, rng), {}}};
    rows.push_back(to_row("mlp", "5->6->4",
                          check_module(
                              &store, in, [&] { return mlp.forward(in[0].value); },
                              [&](const Grid<double>& dy) { in[0].grad = mlp.backward(dy); }, opts)));
  }
  {
    Rng rng(seed);
    ParamStore<double> store;
    PairEncoder<double> enc(store, "theta", 6, 6, rng);
    const auto p = random_positions(8, rng);
    const auto nb = knn_self(p, 4);
    std::vector<ProbedInput> none;
    rows.push_back(to_row("position_encoding", "relative",
                          check_module(
                              &store, none, [&] { return enc.forward(p, nb, false); },
                              [&](const Grid<double>& dy) { enc.backward(dy); }, opts)));
    rows.push_back(to_row("position_encoding", "absolute",
                          check_module(
                              &store, none, [&] { return enc.forward(p, nb, true); },
                              [&](const Grid<double>& dy) { enc.backward(dy); }, opts)));
  }
  {
    Rng rng(seed);
    const std::vector<int> labels{0, 2, 1, 1, 3};
    std::vector<ProbedInput> in{{"logits", random_grid({5, 4}, rng), {}}};
    // Scalar loss: probe weights are 1x1, so scale the analytic gradient.
    rows.push_back(to_row("cross_entropy", "5x4",
                          check_module(
                              nullptr, in,
                              [&] {
                                Grid<double> g = Grid<double>::matrix(1, 1);
                                g(0, 0) = cross_entropy(in[0].value, labels).loss;
                                return g;
                              },
                              [&](const Grid<double>& dy) {
                                in[0].grad = cross_entropy(in[0].value, labels).grad;
                                for (double& v : in[0].grad.values()) v *= dy(0, 0);
                              },
                              opts)));
  }
  {
    Rng rng(seed);
    ParamStore<double> store;
    AttentionConfig attn;
    attn.k = 4;
    TransformerBlock<double> block(store, "block", 6, attn, 1, false, rng);
    const auto p = random_positions(8, rng);
    const auto nb = knn_self(p, 4);
    std::vector<ProbedInput> in{{"x", random_grid({8, 6}, rng), {}}};
    rows.push_back(to_row("transformer_block", "n8 d6 k4",
                          check_module(
                              &store, in, [&] { return block.forward(in[0].value, p, nb); },
                              [&](const Grid<double>& dy) { in[0].grad = block.backward(dy); }, opts)));
  }
  {
    Rng rng(seed);
    ParamStore<double> store;
    TransitionDown<double> td(store, "down", 6, 8, 4, 4, rng);
    const auto p = random_positions(16, rng);
    std::vector<ProbedInput> in{{"x", random_grid({16, 6}, rng), {}}};
    const ForwardMode mode{true, false};
    rows.push_back(to_row("transition_down", "n16 6->8 k4",
                          check_module(
                              &store, in, [&] { return td.forward(in[0].value, p, mode).features; },
                              [&](const Grid<double>& dy) { in[0].grad = td.backward(dy); }, opts)));
  }
  {
    Rng rng(seed);
    ParamStore<double> store;
    TransitionUp<double> tu(store, "up", 8, 6, rng);
    const auto p1 = random_positions(16, rng);
    const auto sample = fps_sample(p1, 4).selected;
    std::vector<Vec3<double>> p2;
    for (auto i : sample) p2.push_back(p1[static_cast<std::size_t>(i)]);
    std::vector<ProbedInput> in{{"coarse", random_grid({4, 8}, rng), {}}, {"skip", random_grid({16, 6}, rng), {}}};
    const ForwardMode mode{true, false};
    rows.push_back(to_row("transition_up", "4x8 -> 16x6",
                          check_module(
                              &store, in, [&] { return tu.forward(in[0].value, p2, in[1].value, p1, mode); },
                              [&](const Grid<double>& dy) {
                                auto g = tu.backward(dy);
                                in[0].grad = g.coarse;
                                in[1].grad = g.skip;
                              },
                              opts)));
  }

  for (auto op : kAllOperators)
    for (auto pos : kAllPositionModes)
      for (auto norm : kAllNormalizations) {
        AttentionConfig cfg;
        cfg.d = 6;
        cfg.k = 4;
        cfg.op = op;
        cfg.pos_mode = pos;
        cfg.normalize = norm;
        rows.push_back(to_row("attention", cfg.label(), check_attention(cfg, 8, opts)));
      }

  GradCheckOptions net_opts = opts;
  net_opts.tolerance = network_tolerance;
  rows.push_back(to_row("segmentation_net", "N64 w8x5 C3",
                        check_network(HeadKind::kSegmentation, 64, {8, 8, 8, 8, 8}, 3, net_opts)));
  rows.push_back(to_row("classification_net", "N64 w8x5 C3",
                        check_network(HeadKind::kClassification, 64, {8, 8, 8, 8, 8}, 3, net_opts)));
  return rows;
}

}  // namespace ptnet
