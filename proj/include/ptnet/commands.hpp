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
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <new>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ptnet/config.hpp"
#include "ptnet/error.hpp"
#include "ptnet/geometry.hpp"
#include "ptnet/gradcheck_suite.hpp"
#include "ptnet/metrics.hpp"
#include "ptnet/network.hpp"
#include "ptnet/params.hpp"
#include "ptnet/random.hpp"
#include "ptnet/scene.hpp"
#include "ptnet/trainer.hpp"

namespace ptnet {

// Command implementations behind the ptnet executable. Each returns a
// process exit code; usage and config problems are kExitUsage, everything
// else that goes wrong is kExitFailure.

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Command-line settings that override config keys.
using Overrides = std::map<std::string, std::string>;

inline RunConfig load_run_config(const std::string& path, const Overrides& overrides) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read config file " + path);
  KeyValues kv = KeyValues::parse(in, path);
  for (const auto& [k, v] : overrides) kv.set(k, v);
  RunConfig rc = run_config_from(kv);
  validate(rc);
  return rc;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InvalidState("cannot write " + path.string());
  out << text;
  if (!out) throw InvalidState("write failed for " + path.string());
}

inline std::filesystem::path prepare_out_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InvalidState("cannot create output directory " + dir + ": " + ec.message());
  return dir;
}

/// Runs `body`, mapping exceptions to exit codes and a one-line message.
template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

inline BackboneConfig model_for(const RunConfig& rc, const std::vector<SyntheticScene>& scenes) {
  BackboneConfig m = rc.model;
  const auto& f = scenes.front().cloud.features;
  m.in_features = f ? f.value().cols() : 0;
  return m;
}

struct TrainOutcome {
  std::vector<LossRecord> curve;
  bool diverged = false;
  std::string diagnostic;
};

/// Trains `net` on the config's training scenes. Divergence is reported in
/// the outcome with the curve up to that point.
inline TrainOutcome train_run(PointTransformerNet<float>& net, const RunConfig& rc,
                              const std::vector<SyntheticScene>& scenes) {
  TrainOutcome out;
  try {
    train(net, scenes, rc.optim, [&](const LossRecord& r) { out.curve.push_back(r); });
  } catch (const DivergenceError& e) {
    out.diverged = true;
    out.diagnostic = e.what();
  }
  return out;
}

/// train: writes loss.csv and model.ckpt into the output directory.
inline int cmd_train(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto dir = prepare_out_dir(rc.out_dir);
    const auto scenes = gen_scenes(rc.data, rc.data_scenes);
    PointTransformerNet<float> net(model_for(rc, scenes));
    out << "training " << net.params().scalar_count() << " parameters on " << scenes.size() << " scene(s) of "
        << rc.data.points << " points for " << rc.optim.iterations << " iterations\n";
    const auto t0 = std::chrono::steady_clock::now();
    const TrainOutcome result = train_run(net, rc, scenes);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_text(dir / "loss.csv", loss_csv(result.curve));
    if (result.diverged) {
      err << "error: " << result.diagnostic << '\n';
      return kExitFailure;
    }
    CheckpointMeta meta = architecture_meta(net.config());
    meta.emplace_back("run.seed", std::to_string(rc.model.seed));
    meta.emplace_back("optim.iterations", std::to_string(rc.optim.iterations));
    save_checkpoint((dir / "model.ckpt").string(), net.params(), meta);
    if (!result.curve.empty()) {
      out << "initial loss " << result.curve.front().loss << ", final loss " << result.curve.back().loss << '\n';
    }
    out << "wrote " << (dir / "loss.csv").string() << " and " << (dir / "model.ckpt").string() << " in "
        << std::fixed << std::setprecision(1) << secs << " s\n";
    return kExitOk;
  });
}

/// Rebuilds the network recorded in a checkpoint and loads its weights.
inline std::unique_ptr<PointTransformerNet<float>> load_network(const std::string& path) {
  const auto ck = read_checkpoint<float>(path);
  auto net = std::make_unique<PointTransformerNet<float>>(architecture_from_meta(ck.meta));
  load_into(ck, net->params());
  return net;
}

/// eval: scores a checkpoint on the config's evaluation scenes; writes
/// metrics.json and metrics.csv.
inline int cmd_eval(const RunConfig& rc, const std::string& checkpoint, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto dir = prepare_out_dir(rc.out_dir);
    auto net = load_network(checkpoint);
    const auto& arch = net->config();
    if (rc.eval_data.classes > arch.num_classes) {
      throw InvalidInput("label spaces differ: scenes have " + std::to_string(rc.eval_data.classes) +
                         " classes, checkpoint predicts " + std::to_string(arch.num_classes));
    }
    const auto scenes = gen_scenes(rc.eval_data, rc.eval_scenes);
    if (model_for(rc, scenes).in_features != arch.in_features) {
      throw InvalidInput("scene feature width does not match the checkpoint");
    }
    const MetricsReport report = evaluate(*net, scenes, kEval, rc.optim.fps_start);
    write_text(dir / "metrics.json", report.to_json());
    write_text(dir / "metrics.csv", report.to_csv());
    out << std::setprecision(6) << "oa " << report.oa << "  macc " << report.macc << "  miou " << report.miou << '\n';
    return kExitOk;
  });
}

/// gradcheck: prints and writes the finite-difference table; exit 1 when any
/// row fails.
inline int cmd_gradcheck(const std::string& out_dir, std::uint64_t seed, double tolerance, double network_tolerance,
                         std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (!(tolerance > 0) || !(network_tolerance > 0)) throw InvalidArgument("tolerances must be positive");
    const auto dir = prepare_out_dir(out_dir);
    const auto rows = run_gradcheck_suite(tolerance, network_tolerance, seed);
    std::size_t failed = 0;
    out << std::left << std::setw(20) << "component" << std::setw(40) << "variant" << std::setw(14)
        << "max_rel_error" << std::setw(11) << "tolerance" << "result\n";
    for (const auto& r : rows) {
      out << std::setw(20) << r.component << std::setw(40) << r.variant << std::setw(14)
          << compact_sci(r.max_rel_error) << std::setw(11) << compact_sci(r.tolerance) << (r.pass ? "pass" : "FAIL")
          << '\n';
      if (!r.pass) ++failed;
    }
    write_text(dir / "gradcheck.csv", gradcheck_csv(rows));
    out << rows.size() - failed << " of " << rows.size() << " rows pass\n";
    return failed ? kExitFailure : kExitOk;
  });
}

/// Median wall time of knn_self over a grid; rows are point counts, columns
/// are k. Cells with k > N are NaN; rows that cannot be allocated are
/// skipped and listed in `notes`.
struct BenchTable {
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> ks;
  std::vector<std::vector<double>> median_ms;
  std::vector<std::string> notes;

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(6);
    os << "points";
    for (auto k : ks) os << ",k" << k;
    os << '\n';
    for (std::size_t r = 0; r < sizes.size(); ++r) {
      os << sizes[r];
      for (double v : median_ms[r]) {
        os << ',';
        if (!std::isnan(v)) os << v;
      }
      os << '\n';
    }
    return os.str();
  }
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

inline BenchTable bench_knn(const std::vector<std::size_t>& sizes, const std::vector<std::size_t>& ks,
                            std::size_t repeats, std::uint64_t seed) {
  if (sizes.empty() || ks.empty()) throw InvalidArgument("bench-knn: sizes and ks must be non-empty");
  for (auto s : sizes)
    if (s == 0) throw InvalidArgument("bench-knn: sizes must be positive");
  for (auto k : ks)
    if (k == 0) throw InvalidArgument("bench-knn: ks must be positive");
  if (repeats == 0) throw InvalidArgument("bench-knn: repeats must be positive");
  BenchTable table;
  table.ks = ks;
  Rng rng(seed);
  for (std::size_t n : sizes) {
    try {
      std::vector<Vec3<float>> pts(n);
      for (auto& p : pts) {
        p = {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform())};
      }
      std::vector<double> row;
      for (std::size_t k : ks) {
        if (k > n) {
          row.push_back(std::numeric_limits<double>::quiet_NaN());
          continue;
        }
        std::vector<double> times;
        for (std::size_t r = 0; r < repeats; ++r) {
          const auto t0 = std::chrono::steady_clock::now();
          const auto nb = knn_self(pts, k);
          const auto t1 = std::chrono::steady_clock::now();
          if (nb.rows != n) throw InvalidState("bench-knn: short result");
          times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        row.push_back(median(std::move(times)));
      }
      table.sizes.push_back(n);
      table.median_ms.push_back(std::move(row));
    } catch (const std::bad_alloc&) {
      table.notes.push_back("skipped " + std::to_string(n) + " points: out of memory");
    }
  }
  return table;
}

inline int cmd_bench_knn(const std::string& out_dir, const std::vector<std::size_t>& sizes,
                         const std::vector<std::size_t>& ks, std::size_t repeats, std::uint64_t seed,
                         std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto dir = prepare_out_dir(out_dir);
    const BenchTable t = bench_knn(sizes, ks, repeats, seed);
    const std::string csv = t.to_csv();
    out << "median ms over " << repeats << " repeats\n" << csv;
    for (const auto& n : t.notes) err << "note: " << n << '\n';
    write_text(dir / "bench_knn.csv", csv);
    return kExitOk;
  });
}

/// One ablation row: metrics averaged over seeds, NaN when any seed
/// diverged.
struct AblationRow {
  std::string sweep;
  std::string variant;
  std::size_t seeds = 0;
  double oa = 0.0;
  double macc = 0.0;
  double miou = 0.0;
  double final_loss = 0.0;
};

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os.precision(9);
  os << "sweep,variant,seeds,oa,macc,miou,final_loss\n";
  for (const auto& r : rows) {
    os << r.sweep << ',' << r.variant << ',' << r.seeds << ',' << r.oa << ',' << r.macc << ',' << r.miou << ','
       << r.final_loss << '\n';
  }
  return os.str();
}

/// Trains and evaluates one configuration for every ablation seed. Seed s
/// sets the model seed and offsets the training and evaluation scene seeds.
inline AblationRow ablation_row(const RunConfig& base, std::string sweep, std::string variant) {
  AblationRow row{std::move(sweep), std::move(variant), base.ablate.seeds.size()};
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::uint64_t s : base.ablate.seeds) {
    RunConfig rc = base;
    rc.model.seed = s;
    rc.data.seed += s;
    rc.eval_data.seed += s;
    const auto scenes = gen_scenes(rc.data, rc.data_scenes);
    PointTransformerNet<float> net(model_for(rc, scenes));
    const TrainOutcome result = train_run(net, rc, scenes);
    if (result.diverged) return {row.sweep, row.variant, row.seeds, nan, nan, nan, nan};
    const MetricsReport m = evaluate(net, gen_scenes(rc.eval_data, rc.eval_scenes), kEval, rc.optim.fps_start);
    const double last = result.curve.empty() ? nan : result.curve.back().loss;
    if (!std::isfinite(m.oa)) return {row.sweep, row.variant, row.seeds, nan, nan, nan, nan};
    row.oa += m.oa;
    row.macc += m.macc;
    row.miou += m.miou;
    row.final_loss += last;
  }
  const double n = static_cast<double>(base.ablate.seeds.size());
  row.oa /= n;
  row.macc /= n;
  row.miou /= n;
  row.final_loss /= n;
  return row;
}

/// Every requested sweep, one variant per row. With no sweep lists set the
/// four attention operators are compared.
inline std::vector<AblationRow> run_ablation(const RunConfig& rc, std::ostream* progress = nullptr) {
  AblationSpec spec = rc.ablate;
  if (spec.operators.empty() && spec.pos_modes.empty() && spec.normalizations.empty() && spec.ks.empty()) {
    spec.operators.assign(std::begin(kAllOperators), std::end(kAllOperators));
  }
  std::vector<AblationRow> rows;
  auto run = [&](const RunConfig& variant, const char* sweep, std::string name) {
    if (progress) *progress << sweep << ' ' << name << "..." << std::flush;
    rows.push_back(ablation_row(variant, sweep, std::move(name)));
    if (progress) *progress << " oa " << rows.back().oa << '\n';
  };
  for (auto op : spec.operators) {
    RunConfig v = rc;
    v.model.attention.op = op;
    run(v, "operator", std::string(to_string(op)));
  }
  for (auto pm : spec.pos_modes) {
    RunConfig v = rc;
    v.model.attention.pos_mode = pm;
    run(v, "pos_mode", std::string(to_string(pm)));
  }
  for (auto nm : spec.normalizations) {
    RunConfig v = rc;
    v.model.attention.normalize = nm;
    run(v, "normalize", std::string(to_string(nm)));
  }
  for (auto k : spec.ks) {
    RunConfig v = rc;
    v.model.k = k;
    run(v, "k", std::to_string(k));
  }
  return rows;
}

/// ablate: writes ablate.csv. Diverged variants appear as NaN rows and do
/// not change the exit code.
inline int cmd_ablate(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto dir = prepare_out_dir(rc.out_dir);
    for (auto k : rc.ablate.ks) {
      RunConfig v = rc;
      v.model.k = k;
      v.data.min_points_per_class = std::max(v.data.min_points_per_class, k);
      validate(v);
    }
    const auto rows = run_ablation(rc, &out);
    const std::string csv = ablation_csv(rows);
    write_text(dir / "ablate.csv", csv);
    out << csv;
    return kExitOk;
  });
}

}  // namespace ptnet
