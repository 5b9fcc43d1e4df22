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

// Training loop, evaluation with majority voting, sweep drivers and run
// configuration.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "treepo/advantage.hpp"
#include "treepo/costmodel.hpp"
#include "treepo/engine.hpp"
#include "treepo/objective.hpp"
#include "treepo/parallel.hpp"
#include "treepo/policy_env.hpp"

namespace treepo {

struct EvalConfig {
  std::uint32_t tasks = 100;
  std::uint32_t rollouts = 16;
  /// Answers per vote; 0 votes over the whole pool, otherwise the vote is
  /// averaged over `vote_repeats` random subsets of this size.
  std::uint32_t vote_samples = 0;
  std::uint32_t vote_repeats = 16;
  bool tree_mode = false;
  std::uint64_t seed = 0x6576616cULL;
};

struct RunConfig {
  TreeConfig tree;
  BranchPolicy branch;
  EstimatorOptions estimator;
  ClipConfig clip{0.2, 0.28, 2000.0, 10};
  PolicyShape policy;
  PolicyInit init = PolicyInit::FormatPrior;
  int operand_count = 2;
  std::uint32_t batch_queries = 64;
  std::uint32_t oversample_factor = 3;
  std::uint32_t max_resample_rounds = 2;
  std::uint32_t iterations = 300;
  std::uint32_t update_epochs = 1;
  std::uint32_t eval_interval = 10;  // 0 disables evaluation
  EvalConfig eval;
  bool sequential_rollout = false;  // chains instead of trees during training
  std::uint64_t seed = 0;
  Exec exec = Exec::Serial;

  void validate() const;
};

/// JSON (de)serialization. Unknown keys are rejected with Error(Parse).
RunConfig run_config_from_json(std::string_view text, const RunConfig& base = {});
std::string run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::string& path, const RunConfig& base = {});

std::string_view to_string(PolicyInit p);
PolicyInit parse_policy_init(std::string_view s);
BranchMode parse_branch_mode(std::string_view s);
ProbDirection parse_prob_direction(std::string_view s);

struct MetricsRow {
  std::uint32_t iteration = 0;
  double mean_reward = 0.0;
  std::optional<double> eval_accuracy;
  std::optional<double> vote_accuracy;
  double mean_response_length = 0.0;
  double entropy = 0.0;
  double savings = 0.0;
  std::uint32_t shortfalls = 0;
  std::uint32_t sampled_groups = 0;
  std::uint32_t kept_groups = 0;
  std::uint32_t trained_groups = 0;
  std::uint32_t resample_rounds = 0;
  double loss = 0.0;
};

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRow& row);
void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows);

struct TruncatedBatch {
  std::uint32_t iteration = 0;
  std::uint32_t kept = 0;
};

struct TrainManifest {
  std::vector<TruncatedBatch> truncated;
  std::vector<std::uint32_t> skipped;  // iterations without any usable group
  std::uint64_t updates = 0;
};

using RewardFn = std::function<double(const Trajectory&, const QuerySpec&)>;

struct TrainHooks {
  /// Replaces the task reward (tests use it to stub environments).
  RewardFn reward;
  std::function<void(const MetricsRow&)> on_row;
  /// Every tree sampled during an iteration, in sampling order.
  std::function<void(std::uint32_t, std::span<const RolloutTree>)> on_trees;
  /// Groups that entered the update of an iteration.
  std::function<void(std::uint32_t, std::span<const RewardedGroup>)> on_batch;
  /// Called at evaluation points with the updated policy.
  std::function<void(std::uint32_t, const LogitsTablePolicy&)> on_checkpoint;
};

struct TrainResult {
  std::vector<MetricsRow> rows;
  LogitsTablePolicy policy;
  TrainManifest manifest;
};

TrainResult train(const RunConfig& cfg, const TrainHooks& hooks = {},
                  std::optional<LogitsTablePolicy> initial = std::nullopt);

/// Tasks `index..index+n` of the stream identified by `seed`.
std::vector<QuerySpec> draw_tasks(std::uint64_t seed, std::uint64_t first_id, std::uint32_t n,
                                  int operand_count);

/// Most frequent answer; ties go to the lexicographically smallest decimal
/// string. nullopt when no answer is present.
std::optional<AnswerValue> majority_vote(std::span<const std::optional<AnswerValue>> answers);

struct EvalResult {
  double pass_rate = 0.0;
  double vote_accuracy = 0.0;
};

struct EvalOptions {
  EvalConfig eval;
  TreeConfig tree;
  BranchPolicy branch;
  Exec exec = Exec::Serial;
};

EvalResult evaluate(const LogitsTablePolicy& policy, std::span<const QuerySpec> tasks,
                    const EvalOptions& opts);

/// Nominal compute of a full tree with divergence `dv` (init and branch base)
/// and width `w`: prompt * dv prefill plus sum_k min(dv^k, w) * l decode.
double nominal_tree_compute(std::uint32_t dv, std::uint32_t w, const TreeConfig& base,
                            std::uint32_t prompt_len);

struct ScalingConfig {
  std::vector<std::uint32_t> divergences{2, 4, 8};
  std::vector<double> budgets;
  std::uint32_t max_width = 64;
  std::uint32_t tasks = 100;
  std::uint32_t repeats = 20;
  int operand_count = 2;
  std::uint64_t seed = 0;
  TreeConfig tree;
  Exec exec = Exec::Serial;
};

struct ScalingRow {
  std::uint32_t divergence = 0;
  double budget = 0.0;
  std::uint32_t width = 0;
  double compute = 0.0;   // nominal
  double measured = 0.0;  // mean weighted cost actually spent per task
  double accuracy = 0.0;  // majority-vote accuracy, mean over repeats
  std::uint64_t trials = 0;
};

/// Rows for every (divergence, budget) that admits a width. Width is the
/// largest dv * 2^m <= max_width whose nominal compute fits the budget.
std::vector<ScalingRow> scaling_sweep(const LogitsTablePolicy& policy, const ScalingConfig& cfg);
void write_scaling_csv(std::ostream& out, std::span<const ScalingRow> rows);

struct DepthSegmentRun {
  std::uint32_t depth = 0;
  std::uint32_t segment = 0;
  std::vector<MetricsRow> rows;
};

/// Throws Error(ConfigInvalid) unless every pair has the same d * l.
void check_constant_budget(std::span<const std::pair<std::uint32_t, std::uint32_t>> pairs);

std::vector<DepthSegmentRun> depth_segment_sweep(
    const RunConfig& tmpl, std::span<const std::pair<std::uint32_t, std::uint32_t>> pairs);

struct BranchingRun {
  std::string name;
  BranchPolicy branch;
  std::vector<MetricsRow> rows;
};

/// Branching variants compared by the branching sweep: even transfer, low
/// and high probability encouragement, and scheduled low encouragement.
std::vector<std::pair<std::string, BranchPolicy>> branching_variants();
std::vector<BranchingRun> branching_sweep(const RunConfig& tmpl);

/// Aligned CSV of several labeled series (label column first).
void write_series_csv(std::ostream& out,
                      std::span<const std::pair<std::string, std::vector<MetricsRow>>> series);

std::string manifest_json(const RunConfig& cfg, const TrainResult& result);

}  // namespace treepo
