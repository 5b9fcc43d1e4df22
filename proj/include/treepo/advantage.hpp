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

// Advantage estimators over a rewarded rollout tree.
//
// For an emitted leaf i at depth D the per-depth terms are
//   A_{i,j} = R_i - mean{R over leaves sharing i's ancestor at depth j},  j in J
// with J = {0 .. D-1} (or {1 .. D-1} without the root group). The estimators
// aggregate these terms:
//   TreeMean                 sum_j A_{i,j} / (|J| * s_i)
//   TreeSizeWeighted         sum_j |G_j| A_{i,j} / (s_i * sum_j |G_j|)
//   TreeSizeWeightedReject   as above over the j whose cell rewards vary
// where s_i = max(std_j{A_{i,j}}, eps). All std values are population std.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "treepo/core.hpp"
#include "treepo/parallel.hpp"
#include "treepo/tree.hpp"

namespace treepo {

enum class EstimatorVariant { Grpo, TreeMean, TreeSizeWeighted, TreeSizeWeightedReject };

std::string_view to_string(EstimatorVariant v);
EstimatorVariant parse_estimator(std::string_view s);

struct EstimatorOptions {
  EstimatorVariant variant = EstimatorVariant::TreeMean;
  bool include_root = true;
  double eps = 1e-6;
  bool global_norm = true;
  bool strict = false;  // Grpo only: zero-variance groups raise DegenerateGroup
  void validate() const;
};

/// Rewards order-aligned with `tree.leaf_trajectories()`.
struct RewardedGroup {
  std::reference_wrapper<const RolloutTree> tree;
  std::vector<double> rewards;

  std::size_t size() const { return rewards.size(); }
  double reward_sum() const;
};

struct DepthTerm {
  std::uint32_t depth = 0;
  std::uint32_t subgroup_size = 0;
  double advantage = 0.0;
  bool rejected = false;  // cell without reward variance (reject variant only)
};

struct LeafAdvantage {
  NodeId leaf{0};
  std::uint32_t depth = 0;
  std::vector<DepthTerm> terms;
  double advantage = 0.0;
  bool all_rejected = false;  // no usable term; advantage forced to 0
};

struct AdvantageReport {
  std::uint64_t query_id = 0;
  EstimatorVariant variant = EstimatorVariant::TreeMean;
  bool include_root = true;
  std::vector<LeafAdvantage> leaves;  // order-aligned with the group's rewards

  std::vector<double> values() const;
};

double population_mean(std::span<const double> xs);
double population_std(std::span<const double> xs);

/// (R_i - mean) / max(std, eps).
std::vector<double> grpo_advantage(std::span<const double> rewards, double eps = 1e-6,
                                   bool strict = false);

/// R_leaf - mean of the leaf's depth-`depth` subgroup.
double subgroup_advantage(const RewardedGroup& group, NodeId leaf, std::uint32_t depth);

AdvantageReport treepo_advantage(const RewardedGroup& group, const EstimatorOptions& opts);
AdvantageReport sgw_advantage(const RewardedGroup& group, const EstimatorOptions& opts);
AdvantageReport sgw_reject_advantage(const RewardedGroup& group, const EstimatorOptions& opts);
AdvantageReport grpo_report(const RewardedGroup& group, const EstimatorOptions& opts);

/// Dispatches on opts.variant.
AdvantageReport estimate(const RewardedGroup& group, const EstimatorOptions& opts);

/// Estimates every group (in parallel when asked), then applies global
/// normalization if opts.global_norm. Output is order-aligned with `groups`.
std::vector<AdvantageReport> estimate_batch(std::span<const RewardedGroup> groups,
                                            const EstimatorOptions& opts, Exec exec = Exec::Serial);

/// Divides every advantage by the population std over the whole batch (no
/// mean shift), eps-floored.
void global_normalize(std::vector<AdvantageReport>& batch, double eps = 1e-6);

/// Keeps the groups with at least one correct and one incorrect trajectory.
std::vector<RewardedGroup> dynamic_query_filter(std::span<const RewardedGroup> groups);
bool is_mixed(const RewardedGroup& g);

/// Tab-separated rows: query, leaf, leaf_depth, depth, subgroup_size,
/// depth_advantage, rejected, advantage.
void write_report_tsv(std::ostream& out, std::span<const AdvantageReport> reports);

}  // namespace treepo
