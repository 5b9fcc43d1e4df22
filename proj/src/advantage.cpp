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

#include "treepo/advantage.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>
#include <unordered_map>

#include "treepo/error.hpp"

namespace treepo {

std::string_view to_string(EstimatorVariant v) {
  switch (v) {
    case EstimatorVariant::Grpo: return "grpo";
    case EstimatorVariant::TreeMean: return "tree_mean";
    case EstimatorVariant::TreeSizeWeighted: return "tree_size_weighted";
    case EstimatorVariant::TreeSizeWeightedReject: return "tree_size_weighted_reject";
  }
  return "?";
}

EstimatorVariant parse_estimator(std::string_view s) {
  for (auto v : {EstimatorVariant::Grpo, EstimatorVariant::TreeMean,
                 EstimatorVariant::TreeSizeWeighted, EstimatorVariant::TreeSizeWeightedReject}) {
    if (to_string(v) == s) return v;
  }
  throw Error(ErrorCode::ConfigInvalid, "unknown estimator '" + std::string(s) + "'");
}

void EstimatorOptions::validate() const {
  if (!(eps > 0.0) || !std::isfinite(eps)) {
    throw Error(ErrorCode::ConfigInvalid, "estimator eps must be positive");
  }
}

double RewardedGroup::reward_sum() const {
  return std::accumulate(rewards.begin(), rewards.end(), 0.0);
}

std::vector<double> AdvantageReport::values() const {
  std::vector<double> out;
  out.reserve(leaves.size());
  for (const auto& l : leaves) out.push_back(l.advantage);
  return out;
}

double population_mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double population_std(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  const double m = population_mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

std::vector<double> grpo_advantage(std::span<const double> rewards, double eps, bool strict) {
  const double m = population_mean(rewards);
  const double s = population_std(rewards);
  if (strict && s < eps) {
    throw Error(ErrorCode::DegenerateGroup, "group rewards have no variance");
  }
  const double denom = std::max(s, eps);
  std::vector<double> out;
  out.reserve(rewards.size());
  for (double r : rewards) out.push_back((r - m) / denom);
  return out;
}

namespace {

struct CellStats {
  double mean = 0.0;
  std::uint32_t size = 0;
  bool varies = false;
};

// Per-depth cell statistics plus, for every emitted leaf, the cell it falls in.
class GroupIndex {
 public:
  GroupIndex(const RewardedGroup& group, double eps) : group_(group) {
    const RolloutTree& tree = group.tree.get();
    leaves_ = tree.emitted_leaves();
    if (leaves_.size() != group.rewards.size()) {
      throw Error(ErrorCode::DegenerateGroup,
                  "rewards (" + std::to_string(group.rewards.size()) + ") do not match leaves (" +
                      std::to_string(leaves_.size()) + ")");
    }
    for (std::size_t i = 0; i < leaves_.size(); ++i) pos_[to_index(leaves_[i])] = i;
    std::uint32_t max_depth = 0;
    for (NodeId l : leaves_) max_depth = std::max(max_depth, tree.node(l).depth);
    cells_.resize(max_depth);
    for (std::uint32_t j = 0; j < max_depth; ++j) {
      for (const Subgroup& sg : tree.subgroups_at_depth(j)) {
        std::vector<double> r;
        r.reserve(sg.leaves.size());
        for (NodeId l : sg.leaves) r.push_back(group.rewards[pos_.at(to_index(l))]);
        CellStats st;
        st.mean = population_mean(r);
        st.size = static_cast<std::uint32_t>(r.size());
        st.varies = population_std(r) >= eps;
        cells_[j].emplace(to_index(sg.key), st);
      }
    }
  }

  const std::vector<NodeId>& leaves() const { return leaves_; }
  double reward(std::size_t i) const { return group_.rewards[i]; }
  std::size_t position(NodeId leaf) const {
    auto it = pos_.find(to_index(leaf));
    if (it == pos_.end()) {
      throw Error(ErrorCode::UnknownNode,
                  "node " + std::to_string(to_index(leaf)) + " is not an emitted leaf");
    }
    return it->second;
  }
  const CellStats& cell(NodeId leaf, std::uint32_t depth) const {
    const RolloutTree& tree = group_.tree.get();
    const NodeId key = tree.ancestor_at_depth(leaf, depth);
    return cells_.at(depth).at(to_index(key));
  }

 private:
  const RewardedGroup& group_;
  std::vector<NodeId> leaves_;
  std::unordered_map<std::uint32_t, std::size_t> pos_;
  std::vector<std::unordered_map<std::uint32_t, CellStats>> cells_;
};

enum class Weighting { Mean, Size, SizeReject };

void require_mixed(const RewardedGroup& group, double eps) {
  if (population_std(group.rewards) < eps) {
    throw Error(ErrorCode::UnfilteredDegenerateQuery,
                "query " + std::to_string(group.tree.get().query().id) +
                    " has no reward variance; filter it before estimating");
  }
}

AdvantageReport tree_estimate(const RewardedGroup& group, const EstimatorOptions& opts,
                              Weighting weighting, EstimatorVariant variant) {
  opts.validate();
  require_mixed(group, opts.eps);
  const GroupIndex index(group, opts.eps);
  const RolloutTree& tree = group.tree.get();

  AdvantageReport rep;
  rep.query_id = tree.query().id;
  rep.variant = variant;
  rep.include_root = opts.include_root;
  rep.leaves.reserve(index.leaves().size());

  for (std::size_t i = 0; i < index.leaves().size(); ++i) {
    const NodeId leaf = index.leaves()[i];
    const double r = index.reward(i);
    LeafAdvantage la;
    la.leaf = leaf;
    la.depth = tree.node(leaf).depth;
    std::vector<double> vals;
    std::vector<double> sizes;
    for (std::uint32_t j = opts.include_root ? 0 : 1; j < la.depth; ++j) {
      const CellStats& c = index.cell(leaf, j);
      DepthTerm t;
      t.depth = j;
      t.subgroup_size = c.size;
      t.advantage = r - c.mean;
      t.rejected = weighting == Weighting::SizeReject && !c.varies;
      la.terms.push_back(t);
      if (!t.rejected) {
        vals.push_back(t.advantage);
        sizes.push_back(static_cast<double>(c.size));
      }
    }
    if (vals.empty()) {
      la.advantage = 0.0;
      la.all_rejected = true;
    } else {
      const double s = std::max(population_std(vals), opts.eps);
      double num = 0.0;
      double den = 0.0;
      for (std::size_t k = 0; k < vals.size(); ++k) {
        const double wgt = weighting == Weighting::Mean ? 1.0 : sizes[k];
        num += wgt * vals[k];
        den += wgt;
      }
      la.advantage = num / (den * s);
    }
    rep.leaves.push_back(std::move(la));
  }
  return rep;
}

}  // namespace

double subgroup_advantage(const RewardedGroup& group, NodeId leaf, std::uint32_t depth) {
  const GroupIndex index(group, 1e-6);
  const std::size_t i = index.position(leaf);
  const std::uint32_t leaf_depth = group.tree.get().node(leaf).depth;
  if (depth >= leaf_depth) {
    throw Error(ErrorCode::DepthOutOfRange, "leaf at depth " + std::to_string(leaf_depth) +
                                                " has no subgroup at depth " +
                                                std::to_string(depth));
  }
  return index.reward(i) - index.cell(leaf, depth).mean;
}

AdvantageReport treepo_advantage(const RewardedGroup& group, const EstimatorOptions& opts) {
  return tree_estimate(group, opts, Weighting::Mean, EstimatorVariant::TreeMean);
}

AdvantageReport sgw_advantage(const RewardedGroup& group, const EstimatorOptions& opts) {
  return tree_estimate(group, opts, Weighting::Size, EstimatorVariant::TreeSizeWeighted);
}

AdvantageReport sgw_reject_advantage(const RewardedGroup& group, const EstimatorOptions& opts) {
  return tree_estimate(group, opts, Weighting::SizeReject,
                       EstimatorVariant::TreeSizeWeightedReject);
}

AdvantageReport grpo_report(const RewardedGroup& group, const EstimatorOptions& opts) {
  opts.validate();
  const RolloutTree& tree = group.tree.get();
  const auto leaves = tree.emitted_leaves();
  if (leaves.size() != group.rewards.size()) {
    throw Error(ErrorCode::DegenerateGroup, "rewards do not match leaves");
  }
  const auto adv = grpo_advantage(group.rewards, opts.eps, opts.strict);
  const double m = population_mean(group.rewards);
  AdvantageReport rep;
  rep.query_id = tree.query().id;
  rep.variant = EstimatorVariant::Grpo;
  rep.include_root = true;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    LeafAdvantage la;
    la.leaf = leaves[i];
    la.depth = tree.node(leaves[i]).depth;
    la.terms.push_back(DepthTerm{0, static_cast<std::uint32_t>(leaves.size()),
                                 group.rewards[i] - m, false});
    la.advantage = adv[i];
    rep.leaves.push_back(std::move(la));
  }
  return rep;
}

AdvantageReport estimate(const RewardedGroup& group, const EstimatorOptions& opts) {
  switch (opts.variant) {
    case EstimatorVariant::Grpo: return grpo_report(group, opts);
    case EstimatorVariant::TreeMean: return treepo_advantage(group, opts);
    case EstimatorVariant::TreeSizeWeighted: return sgw_advantage(group, opts);
    case EstimatorVariant::TreeSizeWeightedReject: return sgw_reject_advantage(group, opts);
  }
  throw Error(ErrorCode::ConfigInvalid, "unknown estimator");
}

std::vector<AdvantageReport> estimate_batch(std::span<const RewardedGroup> groups,
                                            const EstimatorOptions& opts, Exec exec) {
  std::vector<AdvantageReport> out(groups.size());
  const auto n = static_cast<std::ptrdiff_t>(groups.size());
  if (exec == Exec::Parallel) {
    ExceptionSlot slot;
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      slot.run([&] { out[static_cast<std::size_t>(i)] = estimate(groups[i], opts); });
    }
    slot.rethrow();
  } else {
    for (std::ptrdiff_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = estimate(groups[i], opts);
  }
  if (opts.global_norm) global_normalize(out, opts.eps);
  return out;
}

void global_normalize(std::vector<AdvantageReport>& batch, double eps) {
  std::vector<double> all;
  for (const auto& rep : batch) {
    for (const auto& l : rep.leaves) all.push_back(l.advantage);
  }
  if (all.empty()) return;
  const double s = std::max(population_std(all), eps);
  for (auto& rep : batch) {
    for (auto& l : rep.leaves) l.advantage /= s;
  }
}

bool is_mixed(const RewardedGroup& g) {
  bool pos = false;
  bool neg = false;
  for (double r : g.rewards) {
    if (r > 0.5) pos = true;
    else neg = true;
  }
  return pos && neg;
}

std::vector<RewardedGroup> dynamic_query_filter(std::span<const RewardedGroup> groups) {
  std::vector<RewardedGroup> kept;
  for (const auto& g : groups) {
    if (is_mixed(g)) kept.push_back(g);
  }
  return kept;
}

void write_report_tsv(std::ostream& out, std::span<const AdvantageReport> reports) {
  out << "query\tleaf\tleaf_depth\tdepth\tsubgroup_size\tdepth_advantage\trejected\tadvantage\n";
  char buf[64];
  for (const auto& rep : reports) {
    for (const auto& l : rep.leaves) {
      std::snprintf(buf, sizeof buf, "%.17g", l.advantage);
      const std::string adv = buf;
      for (const auto& t : l.terms) {
        std::snprintf(buf, sizeof buf, "%.17g", t.advantage);
        out << rep.query_id << '\t' << to_index(l.leaf) << '\t' << l.depth << '\t' << t.depth
            << '\t' << t.subgroup_size << '\t' << buf << '\t' << (t.rejected ? 1 : 0) << '\t'
            << adv << '\n';
      }
      if (l.terms.empty()) {
        out << rep.query_id << '\t' << to_index(l.leaf) << '\t' << l.depth << "\t-\t0\t0\t1\t"
            << adv << '\n';
      }
    }
  }
}

}  // namespace treepo
