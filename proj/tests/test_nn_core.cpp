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

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "ptnet/gradcheck.hpp"
#include "ptnet/gradcheck_suite.hpp"
#include "ptnet/layers.hpp"
#include "ptnet/ops.hpp"
#include "ptnet/params.hpp"

namespace ptnet {
namespace {

GradCheckOptions opts_at(double tol, std::uint64_t seed) {
  GradCheckOptions o;
  o.tolerance = tol;
  o.seed = seed;
  return o;
}

TEST(Grid, ShapeAndIndexing) {
  Grid<double> g({2, 3, 4});
  EXPECT_EQ(g.size(), 24u);
  EXPECT_EQ(g.rows(), 6u);
  EXPECT_EQ(g.cols(), 4u);
  g(1, 2, 3) = 5.0;
  EXPECT_EQ(g[23], 5.0);
  EXPECT_THROW(Grid<double>({2, 0}), InvalidArgument);
  EXPECT_THROW(Grid<double>({2, 2}, std::vector<double>{1, 2, 3}), InvalidArgument);
  Grid<double> a({2, 2}), b({4});
  EXPECT_THROW(a += b, InvalidArgument);
}

TEST(Linear, IdentityAndHandExample) {
  Grid<double> w({2, 2}, {1, 0, 0, 1});
  Grid<double> x({1, 2}, {1, 2});
  EXPECT_EQ(linear_forward(x, w, Grid<double>({2}, {0, 0})), x);
  const auto y = linear_forward(x, w, Grid<double>({2}, {1, 1}));
  EXPECT_EQ(y(0, 0), 2.0);
  EXPECT_EQ(y(0, 1), 3.0);
  EXPECT_THROW(linear_forward(Grid<double>({1, 3}), w, Grid<double>({2})), InvalidArgument);
}

TEST(Linear, GradientAtOneInMillion) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    ParamStore<double> store;
    Linear<double> lin(store, "lin", 8, 6, rng);
    std::vector<ProbedInput> in{{"x", random_grid({5, 8}, rng), {}}};
    const auto r = check_module(
        &store, in, [&] { return lin.forward(in[0].value); },
        [&](const Grid<double>& dy) { in[0].grad = lin.backward(dy); }, opts_at(1e-6, seed));
    EXPECT_TRUE(r.passed()) << "seed " << seed << " err " << r.max_rel_error();
  }
}

TEST(Linear, GradientsAccumulate) {
  Rng rng(2);
  ParamStore<double> store;
  Linear<double> lin(store, "lin", 3, 2, rng);
  const auto x = random_grid({4, 3}, rng);
  const auto dy = random_grid({4, 2}, rng);
  lin.forward(x);
  lin.backward(dy);
  const Grid<double> once = store.at("lin.weight").grad;
  lin.forward(x);
  lin.backward(dy);
  const Grid<double>& twice = store.at("lin.weight").grad;
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_DOUBLE_EQ(twice[i], 2 * once[i]);
}

TEST(Relu, GradientAwayFromKink) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    Relu<double> relu;
    std::vector<ProbedInput> in{{"x", random_grid({6, 5}, rng), {}}};
    push_off_zero(in[0].value, rng, 1e-4);
    const auto r = check_module(
        nullptr, in, [&] { return relu.forward(in[0].value); },
        [&](const Grid<double>& dy) { in[0].grad = relu.backward(dy); }, opts_at(1e-4, seed));
    EXPECT_TRUE(r.passed()) << "seed " << seed;
  }
}

TEST(Softmax, SpecialCases) {
  Grid<double> one({2, 1, 3}, {4, -2, 7, 0, 1, 1e3});
  const auto w1 = softmax_neighbors(one);
  for (double v : w1.values()) EXPECT_EQ(v, 1.0);
  Grid<double> eq({1, 4, 1}, 3.0);
  const auto w4 = softmax_neighbors(eq);
  for (double v : w4.values()) EXPECT_DOUBLE_EQ(v, 0.25);
  EXPECT_THROW(softmax_neighbors(Grid<double>({2, 2})), InvalidArgument);
  EXPECT_THROW(Grid<double>({2, 0, 3}), InvalidArgument);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(3);
  auto logits = random_grid({5, 7, 4}, rng, 5.0);
  const auto w = softmax_neighbors(logits);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 4; ++c) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) s += w(i, j, c);
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  for (std::size_t i = 0; i < 5; ++i) {
    const double shift = rng.normal() * 10;
    for (std::size_t j = 0; j < 7; ++j)
      for (std::size_t c = 0; c < 4; ++c) logits(i, j, c) += shift;
  }
  const auto w2 = softmax_neighbors(logits);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(w[i], w2[i], 1e-12);
}

TEST(MaxPool, HandExample) {
  Grid<double> f({1, 3, 1}, {2, 7, 5});
  const auto r = max_pool_neighbors(f);
  EXPECT_EQ(r.values(0, 0), 7.0);
  EXPECT_EQ(r.argmax[0], 1u);
  const auto df = max_pool_neighbors_backward(r.argmax, Grid<double>({1, 1}, {3.0}), 3);
  EXPECT_EQ(df.storage(), (std::vector<double>{0, 3, 0}));
}

TEST(AvgPool, PermutationInvariantAndUniformBackward) {
  Rng rng(4);
  const auto f = random_grid({9, 3}, rng);
  Grid<double> g = f;
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t c = 0; c < 3; ++c) g(i, c) = f(8 - i, c);
  const auto a = global_avg_pool(f), b = global_avg_pool(g);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(a[c], b[c], 1e-15);
  const auto d = global_avg_pool_backward(Grid<double>({1, 3}, {9, 18, -9}), 9);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_DOUBLE_EQ(d(i, 0), 1.0);
    EXPECT_DOUBLE_EQ(d(i, 1), 2.0);
    EXPECT_DOUBLE_EQ(d(i, 2), -1.0);
  }
}

TEST(Ops, GradientsOverTwentyInstances) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const auto o = opts_at(1e-4, seed);
    {
      std::vector<ProbedInput> in{{"logits", random_grid({3, 4, 5}, rng), {}}};
      Grid<double> w;
      const auto r = check_module(
          nullptr, in, [&] { return w = softmax_neighbors(in[0].value); },
          [&](const Grid<double>& dy) { in[0].grad = softmax_neighbors_backward(w, dy); }, o);
      EXPECT_TRUE(r.passed()) << "softmax seed " << seed;
    }
    {
      std::vector<ProbedInput> in{{"f", random_grid({3, 4, 5}, rng), {}}};
      std::vector<std::uint32_t> arg;
      const auto r = check_module(
          nullptr, in,
          [&] {
            auto m = max_pool_neighbors(in[0].value);
            arg = m.argmax;
            return m.values;
          },
          [&](const Grid<double>& dy) { in[0].grad = max_pool_neighbors_backward(arg, dy, 4); }, o);
      EXPECT_TRUE(r.passed()) << "max_pool seed " << seed;
    }
    {
      std::vector<ProbedInput> in{{"f", random_grid({6, 5}, rng), {}}};
      const auto r = check_module(
          nullptr, in, [&] { return global_avg_pool(in[0].value); },
          [&](const Grid<double>& dy) { in[0].grad = global_avg_pool_backward(dy, 6); }, o);
      EXPECT_TRUE(r.passed()) << "avg_pool seed " << seed;
    }
    {
      ParamStore<double> store;
      Mlp<double> mlp(store, "mlp", 5, 6, 4, rng);
      std::vector<ProbedInput> in{{"x", random_grid({6, 5}, rng), {}}};
      const auto r = check_module(
          &store, in, [&] { return mlp.forward(in[0].value); },
          [&](const Grid<double>& dy) { in[0].grad = mlp.backward(dy); }, o);
      EXPECT_TRUE(r.passed()) << "mlp seed " << seed;
    }
  }
}

TEST(PointNorm, ConstantChannelGivesBias) {
  ParamStore<double> store;
  PointNorm<double> norm(store, "n", 2);
  norm.bias().value[0] = 0.25;
  norm.bias().value[1] = -1.5;
  Grid<double> x({4, 2}, {3, 1, 3, 2, 3, 3, 3, 4});
  const auto y = norm.forward(x);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y(i, 0), 0.25, 1e-12);
}

TEST(PointNorm, TwoPointStandardization) {
  ParamStore<double> store;
  PointNorm<double> norm(store, "n", 1);
  const auto y = norm.forward(Grid<double>({2, 1}, {1, 3}));
  EXPECT_NEAR(y(0, 0), -1.0, 1e-4);
  EXPECT_NEAR(y(1, 0), 1.0, 1e-4);
}

TEST(PointNorm, SingleRowTraining) {
  ParamStore<double> store;
  PointNorm<double> strict(store, "a", 3);
  EXPECT_THROW(strict.forward(Grid<double>({1, 3}), kTrain), InvalidState);
  EXPECT_NO_THROW(strict.forward(Grid<double>({1, 3}), kEval));
  PointNorm<double> lenient(store, "b", 3, true);
  EXPECT_NO_THROW(lenient.forward(Grid<double>({1, 3}), kTrain));
}

TEST(PointNorm, RunningStatistics) {
  ParamStore<double> store;
  PointNorm<double> norm(store, "n", 1);
  norm.forward(Grid<double>({2, 1}, {1, 3}), kTrain);
  EXPECT_NEAR(norm.running_mean()[0], 0.2, 1e-15);
  EXPECT_NEAR(norm.running_var()[0], 0.9 + 0.1 * 2.0, 1e-15);
  norm.forward(Grid<double>({2, 1}, {10, 30}), kEval);
  EXPECT_NEAR(norm.running_mean()[0], 0.2, 1e-15);
}

TEST(PointNorm, Gradients) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    ParamStore<double> store;
    PointNorm<double> norm(store, "n", 4);
    for (double& v : norm.gain().value.values()) v = rng.uniform(0.5, 1.5);
    std::vector<ProbedInput> in{{"x", random_grid({7, 4}, rng), {}}};
    for (ForwardMode mode : {ForwardMode{true, false}, kEval}) {
      const auto r = check_module(
          &store, in, [&] { return norm.forward(in[0].value, mode); },
          [&](const Grid<double>& dy) { in[0].grad = norm.backward(dy); }, opts_at(1e-4, seed));
      EXPECT_TRUE(r.passed()) << "seed " << seed << " training " << mode.training;
    }
  }
}

TEST(Sgd, PlainStep) {
  ParamStore<double> store;
  auto& p = store.add("w", {1});
  p.value[0] = 1.0;
  p.grad_buffer()[0] = 1.0;
  OptimizerState s;
  s.learning_rate = 0.1;
  s.momentum = 0.0;
  s.weight_decay = 0.0;
  sgd_step(store, s);
  EXPECT_DOUBLE_EQ(p.value[0], 0.9);
  EXPECT_EQ(p.grad[0], 0.0);
  EXPECT_EQ(s.step_count, 1);
}

TEST(Sgd, MomentumRecurrence) {
  ParamStore<double> store;
  auto& p = store.add("w", {1});
  OptimizerState s;
  s.learning_rate = 1.0;
  s.momentum = 0.9;
  s.weight_decay = 0.0;
  p.grad_buffer()[0] = 1.0;
  sgd_step(store, s);
  EXPECT_DOUBLE_EQ(p.value[0], -1.0);
  p.grad[0] = 1.0;
  sgd_step(store, s);
  EXPECT_DOUBLE_EQ(p.value[0], -2.9);
}

TEST(Sgd, Defaults) {
  OptimizerState s;
  EXPECT_EQ(s.momentum, 0.9);
  EXPECT_EQ(s.weight_decay, 1e-4);
}

TEST(Sgd, ZeroGradIsIdentityAndMissingGradThrows) {
  Rng rng(1);
  ParamStore<double> store;
  auto& p = store.add_uniform("w", {3, 3}, 3, rng);
  const auto before = p.value;
  OptimizerState s;
  s.weight_decay = 0.0;
  EXPECT_THROW(sgd_step(store, s), InvalidState);
  p.grad_buffer();
  sgd_step(store, s);
  EXPECT_EQ(p.value, before);
}

TEST(Sgd, ScheduleDropsAtSixtyAndEightyPercent) {
  OptimizerState s;
  s.learning_rate = 0.5;
  s.schedule = OptimizerState::step_schedule(40000, {0.6, 0.8}, 0.1);
  EXPECT_EQ(s.schedule[0].first, 24000);
  EXPECT_EQ(s.schedule[1].first, 32000);
  s.step_count = 23999;
  EXPECT_DOUBLE_EQ(s.current_rate(), 0.5);
  s.step_count = 24000;
  EXPECT_DOUBLE_EQ(s.current_rate(), 0.05);
  s.step_count = 32000;
  EXPECT_NEAR(s.current_rate(), 0.005, 1e-15);
}

TEST(GradCheck, RejectsNondeterministicLoss) {
  Grid<double> x({2}, {1, 2}), gx({2});
  int calls = 0;
  std::vector<GradTarget> t{{"x", &x, &gx}};
  EXPECT_THROW(grad_check([&] { return static_cast<double>(++calls); }, [] {}, t), InvalidInput);
}

TEST(GradCheck, DetectsWrongGradient) {
  Grid<double> x({3}, {1, 2, 3}), gx({3});
  auto loss = [&] { return x[0] * x[0] + 3 * x[1] + std::sin(x[2]); };
  auto good = [&] {
    gx[0] = 2 * x[0];
    gx[1] = 3;
    gx[2] = std::cos(x[2]);
  };
  std::vector<GradTarget> t{{"x", &x, &gx}};
  EXPECT_TRUE(grad_check(loss, good, t).passed());
  auto bad = [&] {
    good();
    gx[1] = 3.01;
  };
  EXPECT_FALSE(grad_check(loss, bad, t).passed());
}

TEST(Checkpoint, RoundTripIsExact) {
  Rng rng(5);
  ParamStore<float> a;
  a.add_uniform("x.weight", {3, 4}, 3, rng);
  a.add("x.running_var", {4}, false).value.fill(0.3f);
  const auto path = (std::filesystem::temp_directory_path() / "ptnet_ck_test.ckpt").string();
  save_checkpoint(path, a, {{"model.k", "16"}, {"note", "two words"}});
  const auto ck = read_checkpoint<float>(path);
  EXPECT_EQ(ck.meta_value("note"), "two words");
  ParamStore<float> b;
  b.add("x.weight", {3, 4});
  b.add("x.running_var", {4}, false);
  load_into(ck, b);
  EXPECT_EQ(b.at("x.weight").value, a.at("x.weight").value);
  EXPECT_EQ(b.at("x.running_var").value, a.at("x.running_var").value);
  EXPECT_FALSE(b.at("x.running_var").trainable);

  ParamStore<float> wrong;
  wrong.add("x.weight", {4, 3});
  wrong.add("x.running_var", {4}, false);
  EXPECT_THROW(load_into(ck, wrong), InvalidInput);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsGarbage) {
  const auto path = (std::filesystem::temp_directory_path() / "ptnet_bad.ckpt").string();
  std::ofstream(path) << "not a checkpoint\n";
  EXPECT_THROW(read_checkpoint<float>(path), InvalidInput);
  std::ofstream(path) << "ptnet-checkpoint 1\nparam a 1 1 2\n1.5\n";
  EXPECT_THROW(read_checkpoint<float>(path), InvalidInput);
  std::filesystem::remove(path);
  EXPECT_THROW(read_checkpoint<float>(path), InvalidArgument);
}

TEST(ParamStore, DuplicateAndUnknownNames) {
  ParamStore<double> s;
  s.add("a", {1});
  EXPECT_THROW(s.add("a", {2}), InvalidArgument);
  EXPECT_THROW(s.at("b"), InvalidArgument);
}

TEST(ParamStore, UniformInitBounds) {
  Rng rng(6);
  ParamStore<double> s;
  const auto& p = s.add_uniform("w", {50, 20}, 25, rng);
  for (double v : p.value.values()) EXPECT_LE(std::abs(v), 0.2);
}

TEST(Rng, DeterministicStreams) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.normal(), b.normal());
  Rng c(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(c.below(13), 13u);
  }
}

}  // namespace
}  // namespace ptnet
