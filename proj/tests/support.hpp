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

// Shared helpers for the test binaries: stub backends, random trees and
// brute-force oracles written independently of the library code paths.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "treepo/advantage.hpp"
#include "treepo/backend.hpp"
#include "treepo/core.hpp"
#include "treepo/tree.hpp"

namespace treepo::testing {

inline TokenId tok(int id) { return TokenId{static_cast<std::uint16_t>(id)}; }
inline TokenId dig(int d) { return Vocabulary::digit(d); }
inline TokenId fill(int i) { return Vocabulary::filler(static_cast<std::uint32_t>(i)); }

inline Segment make_segment(TokenSeq tokens, StopReason stop = StopReason::BudgetExhausted,
                            double lp = -0.5) {
  Segment s;
  s.logprobs.assign(tokens.size(), lp);
  s.tokens = std::move(tokens);
  s.stop = stop;
  return s;
}

/// Backend driven by a callback; used to script rollouts.
class FnBackend final : public SamplingBackend {
 public:
  using Fn = std::function<Segment(TokenView, std::uint32_t, Rng&)>;
  explicit FnBackend(Fn fn) : fn_(std::move(fn)) {}
  Segment sample_segment(TokenView prefix, std::uint32_t budget, Rng& rng) const override {
    return fn_(prefix, budget, rng);
  }

 private:
  Fn fn_;
};

/// Response length (tokens after the prompt) of a prefix, for prompts that
/// end with '='.
inline std::size_t response_len(TokenView prefix) {
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (prefix[i] == Vocabulary::kEquals) return prefix.size() - i - 1;
  }
  return prefix.size();
}

/// Random tree whose nodes are attached directly. Every leaf is a
/// FinishedLeaf except for a few answerless FailedLeaf nodes (not emitted).
inline RolloutTree random_tree(Rng& rng, std::size_t max_leaves, std::uint32_t depth_limit = 6) {
  QuerySpec q = QuerySpec::from_operands(0, {3, 4});
  RolloutTree tree(q, static_cast<std::uint32_t>(max_leaves), depth_limit, 4);
  std::vector<NodeId> frontier{NodeId{0}};
  std::size_t leaves = 0;
  while (!frontier.empty()) {
    const auto pick = static_cast<std::size_t>(uniform_int(rng, 0, frontier.size() - 1));
    const NodeId parent = frontier[pick];
    frontier.erase(frontier.begin() + static_cast<std::ptrdiff_t>(pick));
    const TreeNode& p = tree.node(parent);
    const std::size_t room = max_leaves - leaves - frontier.size();
    if (p.depth + 1 > depth_limit || room == 0) {
      if (parent == NodeId{0}) break;
      tree.set_status(parent, NodeStatus::FinishedLeaf);
      ++leaves;
      continue;
    }
    const auto kids = static_cast<std::size_t>(uniform_int(rng, 1, std::min<std::size_t>(3, room)));
    for (std::size_t c = 0; c < kids; ++c) {
      TokenSeq toks;
      const auto len = uniform_int(rng, 1, 4);
      for (std::uint64_t t = 0; t < len; ++t) toks.push_back(fill(static_cast<int>(uniform_int(rng, 0, 7))));
      const double u = uniform01(rng);
      const bool can_grow = p.depth + 2 <= depth_limit;
      if (can_grow && u < 0.55) {
        frontier.push_back(tree.add_child(parent, make_segment(toks), NodeStatus::Active));
      } else if (u < 0.9 || leaves == 0) {
        tree.add_child(parent, make_segment(toks, StopReason::Eos), NodeStatus::FinishedLeaf);
        ++leaves;
      } else {
        tree.add_child(parent, make_segment(toks, StopReason::RepetitionFail),
                       NodeStatus::FailedLeaf);
      }
    }
  }
  return tree;
}

/// Binary rewards with at least one 0 and one 1 (requires >= 2 emitted leaves).
inline std::vector<double> mixed_rewards(Rng& rng, std::size_t n) {
  std::vector<double> r(n);
  do {
    for (auto& v : r) v = uniform01(rng) < 0.5 ? 1.0 : 0.0;
  } while (n >= 2 && (std::count(r.begin(), r.end(), 1.0) == 0 ||
                      std::count(r.begin(), r.end(), 0.0) == 0));
  return r;
}

// ---------------------------------------------------------------- oracles

inline double oracle_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double oracle_std(const std::vector<double>& v) {
  const double m = oracle_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return v.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v.size()));
}

/// Root-to-leaf node ids collected by walking parent links.
inline std::vector<std::uint32_t> oracle_path(const RolloutTree& tree, NodeId leaf) {
  std::vector<std::uint32_t> path;
  for (std::uint32_t cur = to_index(leaf); cur != 0;) {
    path.push_back(cur);
    cur = to_index(*tree.nodes()[cur].parent);
  }
  std::reverse(path.begin(), path.end());
  return path;
}

/// Indices (into `leaves`) of the leaves sharing leaf i's first j path entries
/// and reaching deeper than j, found by pairwise path comparison.
inline std::vector<std::size_t> oracle_cell(const std::vector<std::vector<std::uint32_t>>& paths,
                                            std::size_t i, std::size_t j) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < paths.size(); ++k) {
    if (paths[k].size() <= j) continue;
    if (std::equal(paths[i].begin(), paths[i].begin() + static_cast<std::ptrdiff_t>(j),
                   paths[k].begin())) {
      out.push_back(k);
    }
  }
  return out;
}

/// Brute-force advantage for every emitted leaf under `variant`.
inline std::vector<double> oracle_advantage(const RolloutTree& tree,
                                            const std::vector<double>& rewards,
                                            EstimatorVariant variant, bool include_root,
                                            double eps = 1e-6) {
  std::vector<NodeId> leaves;
  for (const auto& n : tree.nodes()) {
    if (n.emitted) leaves.push_back(n.id);
  }
  std::vector<std::vector<std::uint32_t>> paths;
  for (NodeId l : leaves) paths.push_back(oracle_path(tree, l));

  if (variant == EstimatorVariant::Grpo) {
    const double m = oracle_mean(rewards);
    const double s = std::max(oracle_std(rewards), eps);
    std::vector<double> out;
    for (double r : rewards) out.push_back((r - m) / s);
    return out;
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    std::vector<double> vals;
    std::vector<double> sizes;
    for (std::size_t j = include_root ? 0 : 1; j < paths[i].size(); ++j) {
      std::vector<double> cell;
      for (std::size_t k : oracle_cell(paths, i, j)) cell.push_back(rewards[k]);
      if (variant == EstimatorVariant::TreeSizeWeightedReject && oracle_std(cell) < eps) continue;
      vals.push_back(rewards[i] - oracle_mean(cell));
      sizes.push_back(static_cast<double>(cell.size()));
    }
    if (vals.empty()) {
      out.push_back(0.0);
      continue;
    }
    const double s = std::max(oracle_std(vals), eps);
    double num = 0.0;
    double den = 0.0;
    for (std::size_t k = 0; k < vals.size(); ++k) {
      const double w = variant == EstimatorVariant::TreeMean ? 1.0 : sizes[k];
      num += w * vals[k];
      den += w;
    }
    out.push_back(num / (den * s));
  }
  return out;
}

/// Back-to-back repetition by direct enumeration of every start, block
/// length and repetition count.
inline bool oracle_repetition(TokenView t, std::size_t min_len, std::size_t min_reps) {
  const std::size_t n = t.size();
  for (std::size_t start = 0; start < n; ++start) {
    for (std::size_t len = min_len; start + len * min_reps <= n; ++len) {
      bool all = true;
      for (std::size_t r = 1; r < min_reps && all; ++r) {
        for (std::size_t x = 0; x < len; ++x) {
          if (t[start + x] != t[start + r * len + x]) {
            all = false;
            break;
          }
        }
      }
      if (all) return true;
    }
  }
  return false;
}

}  // namespace treepo::testing
