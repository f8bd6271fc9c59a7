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

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ptnet/error.hpp"
#include "ptnet/grid.hpp"
#include "ptnet/random.hpp"

namespace ptnet {

/// One named parameter: value, accumulated gradient, momentum buffer.
/// Non-trainable entries (running statistics) are checkpointed but never
/// touched by the optimizer or the gradient checker.
template <typename T>
struct Param {
  Grid<T> value;
  Grid<T> grad;
  Grid<T> momentum;
  bool trainable = true;

  /// Gradient storage, allocated zeroed on first use.
  Grid<T>& grad_buffer() {
    if (grad.empty()) grad = Grid<T>(value.shape());
    return grad;
  }
};

/// Ordered name -> Param map. Entries have stable addresses for the
/// lifetime of the store, so layers hold raw pointers into it.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Param<T>& add(const std::string& name, std::vector<std::size_t> shape, bool trainable = true) {
    auto [it, inserted] = entries_.try_emplace(name);
    if (!inserted) throw InvalidArgument("ParamStore: duplicate parameter " + name);
    it->second.value = Grid<T>(shape);
    it->second.momentum = Grid<T>(std::move(shape));
    it->second.trainable = trainable;
    return it->second;
  }

  /// Uniform in [-s, s], s = sqrt(1 / fan_in).
  Param<T>& add_uniform(const std::string& name, std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    Param<T>& p = add(name, std::move(shape));
    const double s = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (T& v : p.value.values()) v = static_cast<T>(rng.uniform(-s, s));
    return p;
  }

  Param<T>& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InvalidArgument("ParamStore: unknown parameter " + name);
    return it->second;
  }
  const Param<T>& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InvalidArgument("ParamStore: unknown parameter " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t scalar_count(bool trainable_only = true) const {
    std::size_t n = 0;
    for (const auto& [name, p] : entries_) {
      if (!trainable_only || p.trainable) n += p.value.size();
    }
    return n;
  }

  void zero_grad() {
    for (auto& [name, p] : entries_) {
      if (!p.grad.empty()) p.grad.fill(T{0});
    }
  }

 private:
  std::map<std::string, Param<T>> entries_;
};

/// SGD hyperparameters and step counter. The effective rate is the base
/// rate times every schedule multiplier whose step has been reached.
struct OptimizerState {
  double learning_rate = 0.5;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  long step_count = 0;
  std::vector<std::pair<long, double>> schedule;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw InvalidArgument("optimizer: learning_rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("optimizer: momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw InvalidArgument("optimizer: weight_decay must be >= 0");
  }

  double current_rate() const {
    double lr = learning_rate;
    for (const auto& [step, mult] : schedule) {
      if (step_count >= step) lr *= mult;
    }
    return lr;
  }

  /// Multiplier `factor` at each fraction of `total_steps` (e.g. 0.6, 0.8).
  static std::vector<std::pair<long, double>> step_schedule(long total_steps, const std::vector<double>& fractions,
                                                            double factor = 0.1) {
    std::vector<std::pair<long, double>> out;
    for (double f : fractions) out.emplace_back(static_cast<long>(std::llround(f * static_cast<double>(total_steps))), factor);
    return out;
  }
};

/// v <- momentum * v + (grad + weight_decay * value); value <- value - lr * v.
/// Gradients are zeroed afterwards and the step counter advances.
template <typename T>
void sgd_step(ParamStore<T>& params, OptimizerState& state) {
  for (const auto& [name, p] : params) {
    if (p.trainable && p.grad.empty()) throw InvalidState("sgd_step: no gradient for parameter " + name);
  }
  const T lr = static_cast<T>(state.current_rate());
  const T mu = static_cast<T>(state.momentum);
  const T wd = static_cast<T>(state.weight_decay);
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    T* v = p.momentum.data();
    T* w = p.value.data();
    T* g = p.grad.data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      v[i] = mu * v[i] + (g[i] + wd * w[i]);
      w[i] -= lr * v[i];
      g[i] = T{0};
    }
  }
  ++state.step_count;
}

// Checkpoint file, line oriented text:
//
//   ptnet-checkpoint 1
//   meta <key> <value...>                  zero or more
//   param <name> <trainable> <rank> <extents...>
//   <values, space separated, shortest round-trip decimal>
//   end
//
// Values are written with std::to_chars so a save/load cycle is exact.

inline constexpr const char* kCheckpointMagic = "ptnet-checkpoint";
inline constexpr int kCheckpointVersion = 1;

using CheckpointMeta = std::vector<std::pair<std::string, std::string>>;

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& params, const CheckpointMeta& meta) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("save_checkpoint: cannot open " + path);
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  for (const auto& [k, v] : meta) out << "meta " << k << ' ' << v << '\n';
  char buf[64];
  for (const auto& [name, p] : params) {
    out << "param " << name << ' ' << (p.trainable ? 1 : 0) << ' ' << p.value.rank();
    for (std::size_t e : p.value.shape()) out << ' ' << e;
    out << '\n';
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      auto res = std::to_chars(buf, buf + sizeof(buf), p.value[i]);
      if (i) out << ' ';
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
  out << "end\n";
  if (!out) throw InvalidState("save_checkpoint: write failed for " + path);
}

/// Parsed checkpoint: metadata plus name -> (trainable, values grid).
template <typename T>
struct Checkpoint {
  CheckpointMeta meta;
  std::map<std::string, std::pair<bool, Grid<T>>> params;

  std::string meta_value(const std::string& key) const {
    for (const auto& [k, v] : meta) {
      if (k == key) return v;
    }
    throw InvalidInput("checkpoint: missing meta key " + key);
  }
};

template <typename T>
Checkpoint<T> read_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("read_checkpoint: cannot open " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kCheckpointMagic) throw InvalidInput("read_checkpoint: not a checkpoint file: " + path);
  if (version != kCheckpointVersion) {
    throw InvalidInput("read_checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint<T> ck;
  std::string tag;
  while (in >> tag) {
    if (tag == "end") return ck;
    if (tag == "meta") {
      std::string key, value;
      in >> key;
      std::getline(in, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      ck.meta.emplace_back(key, value);
    } else if (tag == "param") {
      std::string name;
      int trainable = 0;
      std::size_t rank = 0;
      in >> name >> trainable >> rank;
      std::vector<std::size_t> shape(rank);
      for (auto& e : shape) in >> e;
      if (!in) throw InvalidInput("read_checkpoint: malformed header for " + name);
      Grid<T> g(shape);
      std::string tok;
      for (std::size_t i = 0; i < g.size(); ++i) {
        in >> tok;
        T v{};
        auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (res.ec != std::errc{}) throw InvalidInput("read_checkpoint: bad value in " + name);
        g[i] = v;
      }
      ck.params.emplace(name, std::make_pair(trainable != 0, std::move(g)));
    } else {
      throw InvalidInput("read_checkpoint: unexpected token " + tag);
    }
  }
  throw InvalidInput("read_checkpoint: truncated file " + path);
}

/// Copies checkpoint values into a store built for the same architecture.
/// The two name sets and every shape must agree exactly.
template <typename T>
void load_into(const Checkpoint<T>& ck, ParamStore<T>& params) {
  if (ck.params.size() != params.size()) {
    throw InvalidInput("load_checkpoint: parameter count " + std::to_string(ck.params.size()) + " != " +
                       std::to_string(params.size()));
  }
  for (auto& [name, p] : params) {
    auto it = ck.params.find(name);
    if (it == ck.params.end()) throw InvalidInput("load_checkpoint: missing parameter " + name);
    if (it->second.second.shape() != p.value.shape()) {
      throw InvalidInput("load_checkpoint: shape mismatch for " + name);
    }
    p.value = it->second.second;
    p.momentum.fill(T{0});
  }
}

}  // namespace ptnet
