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
#include <numeric>
#include <sstream>
#include <vector>

#include "oracles.hpp"
#include "ptnet/config.hpp"
#include "ptnet/gradcheck_suite.hpp"
#include "ptnet/metrics.hpp"
#include "ptnet/scene.hpp"
#include "ptnet/trainer.hpp"

namespace ptnet {
namespace {

TEST(Scenes, DeterministicInTheSpec) {
  for (auto kind : {SceneKind::kLayers, SceneKind::kPrimitives, SceneKind::kShape}) {
    SceneSpec spec;
    spec.kind = kind;
    spec.points = 300;
    const auto a = gen_scene(spec);
    const auto b = gen_scene(spec);
    EXPECT_EQ(a.cloud.positions, b.cloud.positions);
    EXPECT_EQ(a.cloud.labels, b.cloud.labels);
    spec.seed += 1;
    EXPECT_NE(gen_scene(spec).cloud.positions, a.cloud.positions);
  }
}

TEST(Scenes, ClassHistogramIsBalanced) {
  for (auto kind : {SceneKind::kLayers, SceneKind::kPrimitives}) {
    SceneSpec spec;
    spec.kind = kind;
    spec.points = 301;
    spec.classes = 4;
    const auto s = gen_scene(spec);
    ASSERT_EQ(s.cloud.size(), 301u);
    std::vector<std::size_t> hist(4, 0);
    for (int l : s.cloud.labels) ++hist[static_cast<std::size_t>(l)];
    EXPECT_EQ(hist, class_counts(301, 4));
  }
}

TEST(Scenes, NoiselessLayersAreSeparableByHeight) {
  SceneSpec spec;
  spec.noise = 0.0;
  spec.classes = 3;
  const auto s = gen_scene(spec);
  for (std::size_t i = 0; i < s.cloud.size(); ++i) {
    EXPECT_NEAR(s.cloud.positions[i][2], spec.spacing * s.cloud.labels[i], 1e-6);
  }
}

TEST(Scenes, ShapesCarryAnObjectLabel) {
  SceneSpec spec;
  spec.kind = SceneKind::kShape;
  spec.classes = 4;
  spec.points = 64;
  const auto scenes = gen_scenes(spec, 12);
  for (const auto& s : scenes) {
    ASSERT_GE(s.object_label, 0);
    ASSERT_LT(s.object_label, 4);
    for (int l : s.cloud.labels) EXPECT_EQ(l, s.object_label);
  }
}

TEST(Scenes, InfeasibleSpecsRejected) {
  SceneSpec spec;
  spec.points = 40;
  spec.classes = 3;
  EXPECT_THROW(gen_scene(spec), InvalidArgument);
  spec = {};
  spec.classes = 1;
  EXPECT_THROW(gen_scene(spec), InvalidArgument);
  spec = {};
  spec.kind = SceneKind::kPrimitives;
  spec.classes = 5;
  EXPECT_THROW(gen_scene(spec), InvalidArgument);
  spec = {};
  spec.noise = -1.0;
  EXPECT_THROW(gen_scene(spec), InvalidArgument);
}

TEST(CrossEntropy, KnownValues) {
  const auto uniform = cross_entropy(Grid<double>::matrix(5, 4, 0.3), {0, 1, 2, 3, 0});
  EXPECT_NEAR(uniform.loss, std::log(4.0), 1e-12);
  Grid<double> confident = Grid<double>::matrix(2, 3, 0.0);
  confident(0, 1) = 50.0;
  confident(1, 2) = 50.0;
  EXPECT_LT(cross_entropy(confident, {1, 2}).loss, 1e-12);
  EXPECT_THROW(cross_entropy(confident, {1}), InvalidInput);
}

TEST(CrossEntropy, GradientCheck) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    auto logits = random_grid({6, 4}, rng, 3.0);
    std::vector<int> labels;
    for (int i = 0; i < 6; ++i) labels.push_back(static_cast<int>(rng.below(4)));
    Grid<double> grad(logits.shape());
    GradCheckOptions o;
    o.seed = seed;
    const auto r = grad_check([&] { return cross_entropy(logits, labels).loss; },
                              [&] { grad = cross_entropy(logits, labels).grad; }, {{"logits", &logits, &grad}}, o);
    EXPECT_TRUE(r.passed()) << r.max_rel_error();
  }
}

TEST(Metrics, PerfectPrediction) {
  const std::vector<int> t{0, 1, 2, 1, 0};
  const auto r = evaluate_predictions(t, t, 3);
  EXPECT_DOUBLE_EQ(r.oa, 1.0);
  EXPECT_DOUBLE_EQ(r.macc, 1.0);
  EXPECT_DOUBLE_EQ(r.miou, 1.0);
}

TEST(Metrics, TwoClassExample) {
  const auto r = evaluate_predictions({0, 0, 1, 1}, {0, 0, 0, 0}, 2);
  EXPECT_DOUBLE_EQ(r.oa, 0.5);
  EXPECT_DOUBLE_EQ(r.per_class_iou[0], 0.5);
  EXPECT_DOUBLE_EQ(r.per_class_iou[1], 0.0);
  EXPECT_DOUBLE_EQ(r.miou, 0.25);
  EXPECT_DOUBLE_EQ(r.macc, 0.5);
}

TEST(Metrics, AbsentClassExcludedFromMeans) {
  const auto r = evaluate_predictions({0, 1, 1}, {0, 1, 0}, 3);
  EXPECT_TRUE(std::isnan(r.per_class_iou[2]));
  EXPECT_DOUBLE_EQ(r.miou, (0.5 + 0.5) / 2);
}

TEST(Metrics, MatchSetOracleAndProperties) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const int c = 2 + static_cast<int>(rng.below(5));
    std::vector<int> t(200), p(200);
    for (std::size_t i = 0; i < 200; ++i) {
      t[i] = static_cast<int>(rng.below(c));
      p[i] = rng.uniform() < 0.6 ? t[i] : static_cast<int>(rng.below(c));
    }
    const auto r = evaluate_predictions(t, p, static_cast<std::size_t>(c));
    long correct = 0;
    for (std::size_t i = 0; i < 200; ++i) correct += t[i] == p[i];
    EXPECT_DOUBLE_EQ(r.oa, correct / 200.0);
    double sum = 0;
    int present = 0;
    for (int k = 0; k < c; ++k) {
      const double iou = oracle::set_iou(t, p, k);
      if (std::isnan(iou)) continue;
      EXPECT_NEAR(r.per_class_iou[static_cast<std::size_t>(k)], iou, 1e-12);
      sum += iou;
      ++present;
    }
    EXPECT_NEAR(r.miou, sum / present, 1e-12);
    for (double v : {r.oa, r.macc, r.miou}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    // Reordering the points leaves every metric unchanged.
    std::vector<std::size_t> perm(200);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t s = 200; s > 1; --s) std::swap(perm[s - 1], perm[rng.below(s)]);
    std::vector<int> tp, pp;
    for (auto i : perm) {
      tp.push_back(t[i]);
      pp.push_back(p[i]);
    }
    const auto q = evaluate_predictions(tp, pp, static_cast<std::size_t>(c));
    EXPECT_EQ(q.oa, r.oa);
    EXPECT_EQ(q.miou, r.miou);
    EXPECT_EQ(q.confusion, r.confusion);
    bool diagonal = true;
    for (int a = 0; a < c; ++a)
      for (int b = 0; b < c; ++b)
        if (a != b && r.confusion[a][b] != 0) diagonal = false;
    EXPECT_EQ(diagonal, r.miou == 1.0);
  }
}

TEST(Metrics, Errors) {
  EXPECT_THROW(evaluate_predictions({0, 1}, {0}, 2), InvalidArgument);
  EXPECT_THROW(evaluate_predictions({}, {}, 2), InvalidArgument);
}

TEST(Metrics, ReportsSerialize) {
  const auto r = evaluate_predictions({0, 0, 1, 1}, {0, 0, 0, 0}, 2);
  EXPECT_NE(r.to_json().find("\"miou\": 0.25"), std::string::npos) << r.to_json();
  EXPECT_EQ(r.to_csv().rfind("class,iou,acc,support\n", 0), 0u);
}

TEST(Metrics, PartMiou) {
  std::vector<PartObject> objs;
  objs.push_back({0, {0, 1}, {0, 0, 1, 1}, {0, 0, 1, 1}});
  objs.push_back({0, {0, 1}, {0, 0, 1, 1}, {0, 0, 0, 0}});
  objs.push_back({1, {2, 3}, {2, 2, 2, 2}, {2, 2, 2, 2}});
  const auto r = part_miou(objs);
  EXPECT_NEAR(r.instance_miou, (1.0 + 0.25 + 1.0) / 3, 1e-12);
  EXPECT_NEAR(r.category_miou, ((1.0 + 0.25) / 2 + 1.0) / 2, 1e-12);
  EXPECT_THROW(part_miou({}), InvalidArgument);
}

RunConfig tiny_run(long iterations = 30, double lr = 0.1) {
  auto kv = KeyValues::parse_string(
      "[model]\nwidths = 8,8,8,8,8\nk = 8\n[data]\npoints = 128\nclasses = 3\n[optim]\niterations = " +
      std::to_string(iterations) + "\nlr = " + std::to_string(lr) + "\n");
  auto rc = run_config_from(kv);
  validate(rc);
  return rc;
}

TEST(Training, LossDecreases) {
  const auto rc = tiny_run(60);
  const auto scenes = gen_scenes(rc.data, 1);
  PointTransformerNet<float> net(rc.model);
  const auto curve = train(net, scenes, rc.optim);
  ASSERT_EQ(curve.size(), 60u);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += curve[static_cast<std::size_t>(i)].loss;
    tail += curve[curve.size() - 1 - static_cast<std::size_t>(i)].loss;
  }
  EXPECT_LT(tail, head);
}

TEST(Training, ZeroRateLeavesParametersUnchanged) {
  auto rc = tiny_run(5, 0.0);
  rc.optim.weight_decay = 0.5;
  PointTransformerNet<float> net(rc.model);
  std::vector<Grid<float>> before;
  for (const auto& [name, p] : net.params())
    if (p.trainable) before.push_back(p.value);
  train(net, gen_scenes(rc.data, 1), rc.optim);
  std::size_t i = 0;
  for (const auto& [name, p] : net.params())
    if (p.trainable) {
      EXPECT_EQ(p.value, before[i++]) << name;
    }
}

TEST(Training, CurvesAreReproducible) {
  const auto rc = tiny_run(15);
  const auto scenes = gen_scenes(rc.data, 2);
  PointTransformerNet<float> a(rc.model), b(rc.model);
  const auto ca = train(a, scenes, rc.optim);
  const auto cb = train(b, scenes, rc.optim);
  EXPECT_EQ(loss_csv(ca), loss_csv(cb));
  const auto ea = evaluate(a, scenes);
  const auto eb = evaluate(b, scenes);
  EXPECT_EQ(ea.confusion, eb.confusion);
}

TEST(Training, LossCsvFormat) {
  const std::string csv = loss_csv({{0, 0.5, 1.25}, {1, 0.05, 0.75}});
  EXPECT_EQ(csv, "iteration,lr,loss\n0,0.5,1.25\n1,0.05,0.75\n");
}

TEST(Training, DivergenceIsReported) {
  auto rc = tiny_run(50, 1e6);
  rc.optim.momentum = 0.0;
  PointTransformerNet<float> net(rc.model);
  EXPECT_THROW(train(net, gen_scenes(rc.data, 1), rc.optim), DivergenceError);
}

TEST(Config, ParsesSectionsAndDefaults) {
  const auto kv = KeyValues::parse_string("# comment\n[model]\nk = 12 # trailing\nhead = segmentation\n[optim]\nlr=0.25\n");
  const auto rc = run_config_from(kv);
  EXPECT_EQ(rc.model.k, 12u);
  EXPECT_DOUBLE_EQ(rc.optim.learning_rate, 0.25);
  EXPECT_DOUBLE_EQ(rc.optim.momentum, 0.9);
  EXPECT_EQ(rc.model.stages.size(), 5u);
  EXPECT_EQ(rc.optim.iterations, 2000);
}

TEST(Config, Errors) {
  EXPECT_THROW(run_config_from(KeyValues::parse_string("model.bogus = 1\n")), ConfigError);
  EXPECT_THROW(KeyValues::parse_string("[model\n"), ConfigError);
  EXPECT_THROW(KeyValues::parse_string("just words\n"), ConfigError);
  EXPECT_THROW(run_config_from(KeyValues::parse_string("model.k = twelve\n")), ConfigError);
  EXPECT_THROW(run_config_from(KeyValues::parse_string("attention.operator = conv\n")), InvalidArgument);
  EXPECT_THROW(validate(run_config_from(KeyValues::parse_string("optim.momentum = 1\n"))), ConfigError);
  EXPECT_THROW(validate(run_config_from(KeyValues::parse_string("data.points = 40\n"))), ConfigError);
  EXPECT_THROW(validate(run_config_from(KeyValues::parse_string("model.head = classification\ndata.kind = layers\n"))), ConfigError);
  EXPECT_THROW(validate(run_config_from(KeyValues::parse_string("model.bottleneck = 0\n"))), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/run.cfg"), InvalidArgument);
}

TEST(Config, ShippedPresetsLoad) {
  for (const char* name : {"desk.cfg", "ablation.cfg", "classification.cfg"}) {
    EXPECT_NO_THROW(load_run_config(std::string(PTNET_CONFIG_DIR) + "/" + name)) << name;
  }
}

}  // namespace
}  // namespace ptnet
