// Copyright 2026 The TreePO-Toy Authors
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

// Command-line front end: train, eval, rollout, bench and the sweep drivers.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "treepo/costmodel.hpp"
#include "treepo/error.hpp"
#include "treepo/harness.hpp"

namespace fs = std::filesystem;
using namespace treepo;

namespace {

// Flags that override fields of the run configuration.
struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint32_t> iterations;
  std::optional<std::uint32_t> batch;
  std::optional<std::uint32_t> eval_interval;
  std::optional<std::uint32_t> width;
  std::optional<std::uint32_t> depth;
  std::optional<std::uint32_t> segment;
  std::optional<std::uint32_t> init_divergence;
  std::optional<double> lr;
  std::optional<std::string> estimator;
  std::optional<std::string> branch_mode;
  std::optional<std::string> init;
  bool no_root = false;
  bool sequential = false;
  bool parallel = false;
  int threads = 0;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "JSON run configuration");
    app->add_option("--seed", seed, "master seed");
    app->add_option("--iterations", iterations, "training iterations");
    app->add_option("--batch", batch, "queries per update");
    app->add_option("--eval-interval", eval_interval, "iterations between evaluations (0: off)");
    app->add_option("--width", width, "trajectories per query");
    app->add_option("--depth", depth, "maximum tree depth");
    app->add_option("--segment", segment, "tokens per segment");
    app->add_option("--init-divergence", init_divergence, "fixed root fork");
    app->add_option("--lr", lr, "learning rate");
    app->add_option("--estimator", estimator,
                    "grpo | tree_mean | tree_size_weighted | tree_size_weighted_reject");
    app->add_option("--branch", branch_mode, "fixed | even | prob");
    app->add_option("--init", init, "uniform | format_prior | solved");
    app->add_flag("--no-root", no_root, "drop the root group from tree estimators");
    app->add_flag("--sequential", sequential, "sample independent chains while training");
    app->add_flag("--parallel", parallel, "run kernels with OpenMP");
    app->add_option("--threads", threads, "OpenMP thread count");
  }

  RunConfig resolve() const {
    RunConfig c = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed) c.seed = *seed;
    if (iterations) c.iterations = *iterations;
    if (batch) c.batch_queries = *batch;
    if (eval_interval) c.eval_interval = *eval_interval;
    if (width) c.tree.width = *width;
    if (depth) c.tree.depth = *depth;
    if (segment) c.tree.segment_budget = *segment;
    if (init_divergence) c.tree.init_divergence = InitDivergence::make_fixed(*init_divergence);
    if (lr) c.clip.learning_rate = *lr;
    if (estimator) c.estimator.variant = parse_estimator(*estimator);
    if (branch_mode) c.branch.mode = parse_branch_mode(*branch_mode);
    if (init) c.init = parse_policy_init(*init);
    if (no_root) c.estimator.include_root = false;
    if (sequential) c.sequential_rollout = true;
    if (parallel) c.exec = Exec::Parallel;
    if (threads > 0) set_threads(threads);
    c.validate();
    return c;
  }
};

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + p.string());
  return out;
}

// Writes to `path`, or to stdout when it is empty or "-".
template <class F>
void emit(const std::string& path, F&& write) {
  if (path.empty() || path == "-") {
    write(std::cout);
  } else {
    auto out = open_out(path);
    write(out);
  }
}

LogitsTablePolicy policy_from(const std::string& path, const RunConfig& cfg) {
  if (!path.empty()) return LogitsTablePolicy::load_file(path);
  return LogitsTablePolicy(cfg.policy, cfg.init);
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> parse_pairs(const std::string& text) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto x = item.find('x');
    if (x == std::string::npos) throw Error(ErrorCode::Parse, "pair '" + item + "' is not DxL");
    try {
      pairs.emplace_back(static_cast<std::uint32_t>(std::stoul(item.substr(0, x))),
                         static_cast<std::uint32_t>(std::stoul(item.substr(x + 1))));
    } catch (const std::exception&) {
      throw Error(ErrorCode::Parse, "pair '" + item + "' is not DxL");
    }
  }
  return pairs;
}

int run_train(const Overrides& ov, const std::string& out_dir, const std::string& dump_path,
              std::uint32_t dump_every, bool checkpoints, bool quiet) {
  const RunConfig cfg = ov.resolve();
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  auto metrics = open_out(dir / "metrics.csv");
  write_metrics_header(metrics);

  std::optional<std::ofstream> dump;
  if (!dump_path.empty()) dump = open_out(dump_path);

  TrainHooks hooks;
  hooks.on_row = [&](const MetricsRow& r) {
    write_metrics_row(metrics, r);
    metrics.flush();
    if (!quiet) {
      std::fprintf(stderr, "iter %4u  reward %.3f  len %.1f  entropy %.3f  kept %u/%u%s\n",
                   r.iteration, r.mean_reward, r.mean_response_length, r.entropy, r.kept_groups,
                   r.sampled_groups,
                   r.eval_accuracy ? ("  eval " + std::to_string(*r.eval_accuracy)).c_str() : "");
    }
  };
  if (dump) {
    hooks.on_trees = [&](std::uint32_t it, std::span<const RolloutTree> trees) {
      if (dump_every == 0 || it % dump_every != 0) return;
      for (const auto& t : trees) t.write_jsonl(*dump);
    };
  }
  if (checkpoints) {
    hooks.on_checkpoint = [&](std::uint32_t it, const LogitsTablePolicy& p) {
      p.save_file((dir / ("policy_" + std::to_string(it + 1) + ".bin")).string());
    };
  }
  const TrainResult res = train(cfg, hooks);
  res.policy.save_file((dir / "policy.bin").string());
  auto manifest = open_out(dir / "manifest.json");
  manifest << manifest_json(cfg, res) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tree-structured rollout and policy optimization on a toy arithmetic task"};
  app.require_subcommand(1);

  Overrides ov;

  auto* train_cmd = app.add_subcommand("train", "train a policy and write metrics");
  ov.attach(train_cmd);
  std::string out_dir = "run";
  std::string dump_path;
  std::uint32_t dump_every = 10;
  bool checkpoints = false;
  bool quiet = false;
  train_cmd->add_option("-o,--out", out_dir, "output directory");
  train_cmd->add_option("--dump-trees", dump_path, "JSONL file for sampled trees");
  train_cmd->add_option("--dump-every", dump_every, "dump trees every N iterations");
  train_cmd->add_flag("--checkpoints", checkpoints, "save the policy at every evaluation");
  train_cmd->add_flag("-q,--quiet", quiet, "no progress lines");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a policy with majority voting");
  ov.attach(eval_cmd);
  std::string policy_path;
  std::uint32_t tasks = 100;
  std::uint32_t rollouts = 16;
  std::uint32_t vote_samples = 0;
  bool tree_mode = false;
  eval_cmd->add_option("-p,--policy", policy_path, "policy checkpoint");
  eval_cmd->add_option("--tasks", tasks, "number of tasks");
  eval_cmd->add_option("--rollouts", rollouts, "rollouts per task");
  eval_cmd->add_option("--vote-samples", vote_samples, "answers per vote (0: all)");
  eval_cmd->add_flag("--tree-mode", tree_mode, "sample rollouts as a tree");

  auto* rollout_cmd = app.add_subcommand("rollout", "sample trees and dump them as JSONL");
  ov.attach(rollout_cmd);
  std::string rollout_out;
  rollout_cmd->add_option("-p,--policy", policy_path, "policy checkpoint");
  rollout_cmd->add_option("--tasks", tasks, "number of queries");
  rollout_cmd->add_option("-o,--out", rollout_out, "output file (default stdout)");

  auto* bench_cmd = app.add_subcommand("bench", "token accounting over depth x segment configs");
  ov.attach(bench_cmd);
  std::string bench_out;
  std::string bench_pairs = "28x4,14x8,7x16";
  std::string prefill_cost = "0";
  double sweep_overhead = 0.0;
  bench_cmd->add_option("-p,--policy", policy_path, "policy checkpoint");
  bench_cmd->add_option("--tasks", tasks, "number of queries per config");
  bench_cmd->add_option("--pairs", bench_pairs, "comma-separated DxL configs");
  bench_cmd->add_option("--prefill-cost", prefill_cost, "cost per prefill token");
  bench_cmd->add_option("--sweep-overhead", sweep_overhead, "fixed cost per sweep");
  bench_cmd->add_option("-o,--out", bench_out, "CSV output (default stdout)");

  auto* scaling_cmd = app.add_subcommand("sweep-scaling", "accuracy vs compute by divergence");
  ov.attach(scaling_cmd);
  std::string scaling_out;
  std::vector<double> budgets;
  std::vector<std::uint32_t> divergences{2, 4, 8};
  std::uint32_t repeats = 20;
  std::uint32_t max_width = 64;
  scaling_cmd->add_option("-p,--policy", policy_path, "policy checkpoint");
  scaling_cmd->add_option("--budgets", budgets, "ascending compute budgets")->delimiter(',');
  scaling_cmd->add_option("--divergences", divergences, "divergence factors")->delimiter(',');
  scaling_cmd->add_option("--tasks", tasks, "tasks per repeat");
  scaling_cmd->add_option("--repeats", repeats, "repeats per point");
  scaling_cmd->add_option("--max-width", max_width, "largest width tried");
  scaling_cmd->add_option("-o,--out", scaling_out, "CSV output (default stdout)");

  auto* depthseg_cmd = app.add_subcommand("sweep-depthseg", "train once per depth x segment pair");
  ov.attach(depthseg_cmd);
  std::string depthseg_out;
  std::string pairs_text = "28x4,14x8,7x16";
  depthseg_cmd->add_option("--pairs", pairs_text, "comma-separated DxL pairs");
  depthseg_cmd->add_option("-o,--out", depthseg_out, "CSV output (default stdout)");

  auto* branching_cmd = app.add_subcommand("sweep-branching", "train once per branching variant");
  ov.attach(branching_cmd);
  std::string branching_out;
  branching_cmd->add_option("-o,--out", branching_out, "CSV output (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train_cmd) return run_train(ov, out_dir, dump_path, dump_every, checkpoints, quiet);

    if (*eval_cmd) {
      const RunConfig cfg = ov.resolve();
      const auto policy = policy_from(policy_path, cfg);
      EvalOptions opts{cfg.eval, cfg.tree, cfg.branch, cfg.exec};
      opts.eval.tasks = tasks;
      opts.eval.rollouts = rollouts;
      opts.eval.vote_samples = vote_samples;
      opts.eval.tree_mode = tree_mode;
      const auto task_set = draw_tasks(opts.eval.seed, 0, tasks, cfg.operand_count);
      const EvalResult r = evaluate(policy, task_set, opts);
      nlohmann::json j = {{"tasks", tasks},
                          {"rollouts", rollouts},
                          {"tree_mode", tree_mode},
                          {"pass_rate", r.pass_rate},
                          {"vote_accuracy", r.vote_accuracy}};
      std::cout << j.dump(2) << '\n';
      return 0;
    }

    if (*rollout_cmd) {
      const RunConfig cfg = ov.resolve();
      const auto policy = policy_from(policy_path, cfg);
      const auto qs = draw_tasks(cfg.seed, 0, tasks, cfg.operand_count);
      const auto trees = run_tree_rollout(qs, cfg.tree, policy, cfg.branch, cfg.seed, cfg.exec);
      emit(rollout_out, [&](std::ostream& out) {
        for (const auto& t : trees) t.write_jsonl(out);
      });
      return 0;
    }

    if (*bench_cmd) {
      const RunConfig cfg = ov.resolve();
      const auto policy = policy_from(policy_path, cfg);
      CostParams params{std::stod(prefill_cost), 1.0, sweep_overhead};
      params.validate();
      const auto qs = draw_tasks(cfg.seed, 0, tasks, cfg.operand_count);
      std::vector<DepthSweepRow> rows;
      for (const auto& [d, l] : parse_pairs(bench_pairs)) {
        TreeConfig tc = cfg.tree;
        tc.depth = d;
        tc.segment_budget = l;
        const auto trees = run_tree_rollout(qs, tc, policy, cfg.branch, cfg.seed, cfg.exec);
        rows.push_back(depth_sweep_row(std::to_string(d) + "x" + std::to_string(l), d, l, trees,
                                       params));
      }
      emit(bench_out, [&](std::ostream& out) { write_depth_sweep_csv(out, rows); });
      return 0;
    }

    if (*scaling_cmd) {
      const RunConfig cfg = ov.resolve();
      const auto policy = policy_from(policy_path, cfg);
      ScalingConfig sc;
      sc.divergences = divergences;
      sc.budgets = budgets;
      sc.max_width = max_width;
      sc.tasks = tasks;
      sc.repeats = repeats;
      sc.operand_count = cfg.operand_count;
      sc.seed = cfg.seed;
      sc.tree = cfg.tree;
      sc.exec = cfg.exec;
      const auto rows = scaling_sweep(policy, sc);
      emit(scaling_out, [&](std::ostream& out) { write_scaling_csv(out, rows); });
      return 0;
    }

    if (*depthseg_cmd) {
      const RunConfig cfg = ov.resolve();
      const auto pairs = parse_pairs(pairs_text);
      const auto runs = depth_segment_sweep(cfg, pairs);
      std::vector<std::pair<std::string, std::vector<MetricsRow>>> series;
      for (const auto& r : runs) {
        series.emplace_back(std::to_string(r.depth) + "x" + std::to_string(r.segment), r.rows);
      }
      emit(depthseg_out, [&](std::ostream& out) { write_series_csv(out, series); });
      return 0;
    }

    if (*branching_cmd) {
      const RunConfig cfg = ov.resolve();
      const auto runs = branching_sweep(cfg);
      std::vector<std::pair<std::string, std::vector<MetricsRow>>> series;
      for (const auto& r : runs) series.emplace_back(r.name, r.rows);
      emit(branching_out, [&](std::ostream& out) { write_series_csv(out, series); });
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.family());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
