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

// Arena-backed rollout tree. Node 0 is the query; every other node holds the
// segment generated from its parent's full path. Subgroups for advantage
// estimation are cells of emitted leaves sharing an ancestor at some depth.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "treepo/core.hpp"
#include "treepo/task.hpp"

namespace treepo {

enum class NodeStatus : std::uint8_t {
  Active,        // frontier: waits for its next segment
  Expanded,      // interior: has children
  FinishedLeaf,  // EOS, answer, or depth limit
  FailedLeaf,    // flawed segment (repetition)
};

std::string_view to_string(NodeStatus s);

constexpr bool is_leaf(NodeStatus s) {
  return s == NodeStatus::FinishedLeaf || s == NodeStatus::FailedLeaf;
}

struct TreeNode {
  NodeId id{0};
  std::optional<NodeId> parent;
  std::uint32_t depth = 0;
  Segment segment;
  std::vector<NodeId> children;
  NodeStatus status = NodeStatus::Active;
  /// Leaf counts toward the tree width: every FinishedLeaf, plus FailedLeaf
  /// whose path carries a well-formed answer.
  bool emitted = false;
  /// Grown by a fallback round (and thus sampled with the fallback budget).
  bool from_fallback = false;
  /// Response tokens from the root to the end of this node's segment.
  std::uint32_t response_len = 0;
};

/// One inference sweep as seen by the cost model.
struct SweepRecord {
  std::uint32_t requests = 0;
  std::uint64_t decode_tokens = 0;
  std::uint64_t prefill_tokens = 0;
};

struct FallbackEvent {
  NodeId anchor{0};
  std::uint32_t spawned = 0;
  std::uint32_t prefill_tokens = 0;  // path length re-prefilled at the anchor
};

struct TreeMeta {
  std::uint64_t seed = 0;
  std::uint32_t initial_fork = 0;
  std::uint32_t fallback_rounds = 0;
  std::uint32_t shortfall = 0;
  std::vector<FallbackEvent> fallbacks;
  std::vector<SweepRecord> sweeps;
};

struct Subgroup {
  NodeId key{0};                // ancestor shared by the cell at the queried depth
  std::vector<NodeId> leaves;   // arena order
};

class RolloutTree {
 public:
  RolloutTree(QuerySpec query, std::uint32_t width_target, std::uint32_t depth_limit,
              std::uint32_t segment_budget);

  NodeId add_child(NodeId parent, Segment segment, NodeStatus status, bool from_fallback = false);

  /// Re-marks an Active node once the engine has classified it (used for
  /// frontier nodes closed at the depth limit).
  void set_status(NodeId node, NodeStatus status);

  const TreeNode& node(NodeId id) const;
  const std::vector<TreeNode>& nodes() const { return arena_; }
  std::size_t size() const { return arena_.size(); }
  const QuerySpec& query() const { return query_; }

  std::uint32_t width_target() const { return width_; }
  std::uint32_t depth_limit() const { return depth_limit_; }
  std::uint32_t segment_budget() const { return segment_budget_; }

  TreeMeta& meta() { return meta_; }
  const TreeMeta& meta() const { return meta_; }

  /// Prompt followed by every segment on the root..node path.
  TokenSeq path_tokens(NodeId node) const;
  /// Same as path_tokens without the prompt.
  TokenSeq response_tokens(NodeId node) const;
  /// Root..node ids, excluding the root.
  std::vector<NodeId> node_path(NodeId node) const;
  NodeId ancestor_at_depth(NodeId node, std::uint32_t depth) const;

  std::vector<NodeId> active_nodes() const;
  std::vector<NodeId> emitted_leaves() const;
  std::vector<NodeId> all_leaves() const;
  std::size_t emitted_count() const;

  /// Partition of emitted leaves deeper than `depth`, keyed by their ancestor
  /// at `depth`, ordered by key. Empty when `depth >= depth_limit`.
  std::vector<Subgroup> subgroups_at_depth(std::uint32_t depth) const;

  /// One trajectory per emitted leaf in arena order; rewards are 0.
  std::vector<Trajectory> leaf_trajectories() const;

  /// Line-delimited JSON: one header record, then one record per node.
  void write_jsonl(std::ostream& out) const;
  std::string to_jsonl() const;

 private:
  void check(NodeId id) const;

  QuerySpec query_;
  std::uint32_t width_;
  std::uint32_t depth_limit_;
  std::uint32_t segment_budget_;
  std::vector<TreeNode> arena_;
  TreeMeta meta_;
};

}  // namespace treepo
