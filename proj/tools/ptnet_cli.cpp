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

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ptnet/commands.hpp"

namespace {

struct Common {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool has_seed = false;
};

ptnet::Overrides overrides(const Common& c) {
  ptnet::Overrides o;
  if (!c.out.empty()) o["run.out"] = c.out;
  if (c.has_seed) o["run.seed"] = std::to_string(c.seed);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point transformer training, evaluation and verification"};
  app.require_subcommand(1);
  int code = ptnet::kExitOk;

  Common train_opts;
  auto* train = app.add_subcommand("train", "Train a network; writes loss.csv and model.ckpt");
  train->add_option("--config", train_opts.config, "Run config file")->required();
  train->add_option("--out", train_opts.out, "Output directory (overrides run.out)");
  train->add_option("--seed", train_opts.seed, "Model seed (overrides run.seed)");
  train->callback([&] {
    train_opts.has_seed = train->count("--seed") > 0;
    code = ptnet::guarded(std::cerr, [&] {
      return ptnet::cmd_train(ptnet::load_run_config(train_opts.config, overrides(train_opts)), std::cout, std::cerr);
    });
  });

  Common eval_opts;
  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint; writes metrics.json and metrics.csv");
  eval->add_option("--config", eval_opts.config, "Run config file (eval.* and data.* keys)")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
  eval->add_option("--out", eval_opts.out, "Output directory (overrides run.out)");
  eval->add_option("--seed", eval_opts.seed, "Accepted for symmetry; evaluation has no randomness of its own");
  eval->callback([&] {
    eval_opts.has_seed = eval->count("--seed") > 0;
    code = ptnet::guarded(std::cerr, [&] {
      const auto rc = ptnet::load_run_config(eval_opts.config, overrides(eval_opts));
      return ptnet::cmd_eval(rc, checkpoint, std::cout, std::cerr);
    });
  });

  std::string gc_out = "out";
  std::uint64_t gc_seed = 1;
  double gc_tol = 1e-4, gc_net_tol = 1e-3;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every layer and attention variant");
  gc->add_option("--out", gc_out, "Output directory")->capture_default_str();
  gc->add_option("--seed", gc_seed, "Seed for inputs, weights and directions")->capture_default_str();
  gc->add_option("--tolerance", gc_tol, "Relative error bound for layers")->capture_default_str();
  gc->add_option("--network-tolerance", gc_net_tol, "Relative error bound for full networks")->capture_default_str();
  gc->callback([&] { code = ptnet::cmd_gradcheck(gc_out, gc_seed, gc_tol, gc_net_tol, std::cout, std::cerr); });

  std::string bench_out = "out";
  std::uint64_t bench_seed = 1;
  std::vector<std::size_t> sizes{10000, 20000, 40000, 80000};
  std::vector<std::size_t> ks{8, 16, 32, 64, 128, 256};
  std::size_t repeats = 5;
  auto* bench = app.add_subcommand("bench-knn", "Time kNN over point counts x k; writes bench_knn.csv");
  bench->add_option("--out", bench_out, "Output directory")->capture_default_str();
  bench->add_option("--seed", bench_seed, "Seed for the random points")->capture_default_str();
  bench->add_option("--sizes", sizes, "Point counts (rows)")->delimiter(',')->capture_default_str();
  bench->add_option("--ks", ks, "Neighbor counts (columns)")->delimiter(',')->capture_default_str();
  bench->add_option("--repeats", repeats, "Timed repeats per cell; the median is reported")->capture_default_str();
  bench->callback([&] {
    code = ptnet::cmd_bench_knn(bench_out, sizes, ks, repeats, bench_seed, std::cout, std::cerr);
  });

  Common ablate_opts;
  auto* ablate = app.add_subcommand("ablate", "Train attention variants side by side; writes ablate.csv");
  ablate->add_option("--config", ablate_opts.config, "Run config file with ablate.* keys")->required();
  ablate->add_option("--out", ablate_opts.out, "Output directory (overrides run.out)");
  ablate->add_option("--seed", ablate_opts.seed, "Single seed replacing ablate.seeds");
  ablate->callback([&] {
    code = ptnet::guarded(std::cerr, [&] {
      auto o = overrides(ablate_opts);
      if (ablate->count("--seed") > 0) o["ablate.seeds"] = std::to_string(ablate_opts.seed);
      return ptnet::cmd_ablate(ptnet::load_run_config(ablate_opts.config, o), std::cout, std::cerr);
    });
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? ptnet::kExitOk : ptnet::kExitUsage;
  }
  return code;
}
