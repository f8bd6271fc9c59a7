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
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ptnet/attention.hpp"
#include "ptnet/error.hpp"
#include "ptnet/network.hpp"
#include "ptnet/scene.hpp"
#include "ptnet/trainer.hpp"

namespace ptnet {

/// Config problem tied to one key (and line, when read from a file).
class ConfigError : public InvalidArgument {
 public:
  ConfigError(const std::string& key, const std::string& what) : InvalidArgument(key + ": " + what), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Flat `section.key = value` text. `[section]` lines prefix the keys that
/// follow; `#` starts a comment.
class KeyValues {
 public:
  static KeyValues parse(std::istream& in, const std::string& origin = "config") {
    KeyValues kv;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      if (t.front() == '[') {
        if (t.back() != ']') throw ConfigError(origin + ":" + std::to_string(lineno), "unterminated section header");
        section = trim(t.substr(1, t.size() - 2));
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(lineno), "expected 'key = value', got '" + t + "'");
      }
      std::string key = trim(t.substr(0, eq));
      if (!section.empty()) key = section + "." + key;
      kv.values_[key] = trim(t.substr(eq + 1));
    }
    return kv;
  }

  static KeyValues parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string str(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  template <typename N>
  N num(const std::string& key, N fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return parse_number<N>(key, it->second);
  }

  bool flag(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
    if (it->second == "false" || it->second == "0" || it->second == "no") return false;
    throw ConfigError(key, "expected a boolean, got '" + it->second + "'");
  }

  template <typename N>
  std::vector<N> list(const std::string& key, std::vector<N> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<N> out;
    for (const auto& tok : split(it->second)) out.push_back(parse_number<N>(key, tok));
    if (out.empty()) throw ConfigError(key, "empty list");
    return out;
  }

  std::vector<std::string> words(const std::string& key, std::vector<std::string> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    auto out = split(it->second);
    if (out.empty()) throw ConfigError(key, "empty list");
    return out;
  }

  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) {
      cur = trim(cur);
      if (!cur.empty()) out.push_back(cur);
    }
    return out;
  }

  template <typename N>
  static N parse_number(const std::string& key, const std::string& text) {
    N v{};
    auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
      throw ConfigError(key, "cannot parse '" + text + "' as a number");
    }
    return v;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

/// Sweeps run by the ablate command. Empty lists are skipped.
struct AblationSpec {
  std::vector<AttentionOperator> operators;
  std::vector<PositionMode> pos_modes;
  std::vector<Normalization> normalizations;
  std::vector<std::size_t> ks;
  std::vector<std::uint64_t> seeds{1};
};

/// Everything one run needs. A config file fully determines it.
struct RunConfig {
  BackboneConfig model;
  TrainOptions optim;
  SceneSpec data;
  std::size_t data_scenes = 1;
  SceneSpec eval_data;
  std::size_t eval_scenes = 1;
  std::string out_dir = "out";
  AblationSpec ablate;

  std::uint64_t seed() const { return model.seed; }
};

namespace detail {

template <typename Enum, typename Parse>
std::vector<Enum> parse_words(const KeyValues& kv, const std::string& key, Parse parse) {
  std::vector<Enum> out;
  for (const auto& w : kv.words(key, {})) {
    try {
      out.push_back(parse(w));
    } catch (const InvalidArgument& e) {
      throw ConfigError(key, e.what());
    }
  }
  return out;
}

inline const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys{
      "model.head",        "model.widths",       "model.blocks",        "model.k",
      "model.num_classes", "model.bottleneck",   "model.zero_init_residual",
      "attention.operator", "attention.pos_mode", "attention.normalize", "attention.scaled_logits",
      "optim.lr",          "optim.momentum",     "optim.weight_decay",  "optim.iterations",
      "optim.drops",       "optim.drop_factor",  "data.kind",           "data.points",
      "data.classes",      "data.primitives",    "data.noise",          "data.seed",
      "data.scenes",       "data.spacing",       "eval.seed",           "eval.scenes",
      "run.seed",          "run.out",            "run.fps_start",       "ablate.operators",
      "ablate.pos_modes",  "ablate.normalizations", "ablate.ks",        "ablate.seeds"};
  return keys;
}

}  // namespace detail

inline RunConfig run_config_from(const KeyValues& kv) {
  for (const auto& [key, value] : kv.entries()) {
    const auto& known = detail::known_keys();
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError(key, "unknown key");
  }
  RunConfig rc;
  auto& m = rc.model;
  const auto widths = kv.list<std::size_t>("model.widths", {32, 64, 128, 256, 512});
  auto blocks = kv.list<std::size_t>("model.blocks", {1});
  if (blocks.size() == 1) blocks.assign(widths.size(), blocks[0]);
  if (blocks.size() != widths.size()) throw ConfigError("model.blocks", "needs one entry or one per stage");
  m = BackboneConfig::with_widths(widths);
  for (std::size_t s = 0; s < widths.size(); ++s) m.stages[s].blocks = blocks[s];
  try {
    m.head = parse_head(kv.str("model.head", "segmentation"));
  } catch (const InvalidArgument& e) {
    throw ConfigError("model.head", e.what());
  }
  m.k = kv.num<std::size_t>("model.k", 16);
  m.bottleneck = kv.num<std::size_t>("model.bottleneck", 1);
  m.zero_init_residual = kv.flag("model.zero_init_residual", false);
  m.seed = kv.num<std::uint64_t>("run.seed", 1);

  auto& a = m.attention;
  try {
    a.op = parse_operator(kv.str("attention.operator", "vector"));
  } catch (const InvalidArgument& e) {
    throw ConfigError("attention.operator", e.what());
  }
  try {
    a.pos_mode = parse_position_mode(kv.str("attention.pos_mode", "relative"));
  } catch (const InvalidArgument& e) {
    throw ConfigError("attention.pos_mode", e.what());
  }
  try {
    a.normalize = parse_normalization(kv.str("attention.normalize", "softmax"));
  } catch (const InvalidArgument& e) {
    throw ConfigError("attention.normalize", e.what());
  }
  a.scaled_logits = kv.flag("attention.scaled_logits", false);

  auto& o = rc.optim;
  o.learning_rate = kv.num<double>("optim.lr", 0.5);
  o.momentum = kv.num<double>("optim.momentum", 0.9);
  o.weight_decay = kv.num<double>("optim.weight_decay", 1e-4);
  o.iterations = kv.num<long>("optim.iterations", 2000);
  o.drops = kv.list<double>("optim.drops", {0.6, 0.8});
  o.drop_factor = kv.num<double>("optim.drop_factor", 0.1);
  o.fps_start = kv.num<std::size_t>("run.fps_start", 0);

  auto& d = rc.data;
  try {
    d.kind = parse_scene_kind(kv.str("data.kind", m.head == HeadKind::kClassification ? "shape" : "layers"));
  } catch (const InvalidArgument& e) {
    throw ConfigError("data.kind", e.what());
  }
  d.points = kv.num<std::size_t>("data.points", 512);
  d.classes = kv.num<std::size_t>("data.classes", 3);
  d.primitives = kv.num<std::size_t>("data.primitives", 0);
  d.noise = kv.num<double>("data.noise", 0.01);
  d.seed = kv.num<std::uint64_t>("data.seed", 7);
  d.spacing = kv.num<double>("data.spacing", 0.5);
  d.min_points_per_class = m.k;
  rc.data_scenes = kv.num<std::size_t>("data.scenes", 1);
  m.num_classes = kv.num<std::size_t>("model.num_classes", d.classes);

  rc.eval_data = d;
  rc.eval_data.seed = kv.num<std::uint64_t>("eval.seed", d.seed);
  rc.eval_scenes = kv.num<std::size_t>("eval.scenes", rc.data_scenes);
  rc.out_dir = kv.str("run.out", "out");

  auto& ab = rc.ablate;
  ab.operators = detail::parse_words<AttentionOperator>(kv, "ablate.operators", parse_operator);
  ab.pos_modes = detail::parse_words<PositionMode>(kv, "ablate.pos_modes", parse_position_mode);
  ab.normalizations = detail::parse_words<Normalization>(kv, "ablate.normalizations", parse_normalization);
  ab.ks = kv.list<std::size_t>("ablate.ks", {});
  ab.seeds = kv.list<std::uint64_t>("ablate.seeds", {1});
  return rc;
}

/// Checks every module precondition before any work starts; errors name the
/// offending key.
inline void validate(const RunConfig& rc) {
  const auto& m = rc.model;
  if (m.stages.empty()) throw ConfigError("model.widths", "at least one stage required");
  if (m.bottleneck == 0) throw ConfigError("model.bottleneck", "must be >= 1");
  for (const auto& s : m.stages) {
    if (s.width == 0) throw ConfigError("model.widths", "widths must be >= 1");
    if (s.width % m.bottleneck != 0) throw ConfigError("model.bottleneck", "must divide every stage width");
  }
  if (m.k == 0) throw ConfigError("model.k", "must be >= 1");
  if (m.num_classes < rc.data.classes) throw ConfigError("model.num_classes", "smaller than data.classes");
  if (rc.optim.iterations < 0) throw ConfigError("optim.iterations", "must be >= 0");
  if (!(rc.optim.learning_rate >= 0)) throw ConfigError("optim.lr", "must be >= 0");
  if (!(rc.optim.momentum >= 0 && rc.optim.momentum < 1)) throw ConfigError("optim.momentum", "must be in [0, 1)");
  if (!(rc.optim.weight_decay >= 0)) throw ConfigError("optim.weight_decay", "must be >= 0");
  if (rc.data_scenes == 0) throw ConfigError("data.scenes", "must be >= 1");
  if (rc.eval_scenes == 0) throw ConfigError("eval.scenes", "must be >= 1");
  if (m.head == HeadKind::kClassification && rc.data.kind != SceneKind::kShape) {
    throw ConfigError("data.kind", "classification needs shape scenes");
  }
  try {
    validate(rc.data);
  } catch (const InvalidArgument& e) {
    throw ConfigError("data", e.what());
  }
  const std::size_t min_n = m.min_points();
  if (rc.data.points < min_n) {
    throw ConfigError("data.points", "network needs at least " + std::to_string(min_n) + " points");
  }
  if (rc.optim.fps_start >= rc.data.points) throw ConfigError("run.fps_start", "outside the point range");
  for (auto k : rc.ablate.ks) {
    if (k == 0) throw ConfigError("ablate.ks", "k must be >= 1");
  }
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read config file " + path);
  RunConfig rc = run_config_from(KeyValues::parse(in, path));
  validate(rc);
  return rc;
}

namespace detail {
template <typename V, typename F>
std::string join(const std::vector<V>& v, F f) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + f(v[i]);
  return s;
}
}  // namespace detail

/// The architecture keys, as recorded in checkpoint headers.
inline CheckpointMeta architecture_meta(const BackboneConfig& m) {
  auto num = [](auto v) { return std::to_string(v); };
  CheckpointMeta meta;
  meta.emplace_back("model.head", std::string(to_string(m.head)));
  meta.emplace_back("model.widths", detail::join(m.stages, [](const StageConfig& s) { return std::to_string(s.width); }));
  meta.emplace_back("model.blocks", detail::join(m.stages, [](const StageConfig& s) { return std::to_string(s.blocks); }));
  meta.emplace_back("model.k", num(m.k));
  meta.emplace_back("model.num_classes", num(m.num_classes));
  meta.emplace_back("model.bottleneck", num(m.bottleneck));
  meta.emplace_back("model.in_features", num(m.in_features));
  meta.emplace_back("attention.operator", std::string(to_string(m.attention.op)));
  meta.emplace_back("attention.pos_mode", std::string(to_string(m.attention.pos_mode)));
  meta.emplace_back("attention.normalize", std::string(to_string(m.attention.normalize)));
  meta.emplace_back("attention.scaled_logits", m.attention.scaled_logits ? "true" : "false");
  return meta;
}

inline BackboneConfig architecture_from_meta(const CheckpointMeta& meta) {
  KeyValues kv;
  std::size_t in_features = 0;
  for (const auto& [k, v] : meta) {
    if (k == "model.in_features") {
      in_features = KeyValues::parse_number<std::size_t>(k, v);
    } else if (k.rfind("model.", 0) == 0 || k.rfind("attention.", 0) == 0) {
      kv.set(k, v);
    }
  }
  for (const char* required : {"model.head", "model.widths", "model.k", "model.num_classes"}) {
    if (!kv.has(required)) throw InvalidInput(std::string("checkpoint header lacks ") + required);
  }
  BackboneConfig m = run_config_from(kv).model;
  m.in_features = in_features;
  m.validate();
  return m;
}

}  // namespace ptnet
