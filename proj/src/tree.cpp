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

#include "treepo/tree.hpp"

#include <algorithm>
#include <map>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "treepo/error.hpp"

namespace treepo {

std::string_view to_string(NodeStatus s) {
  switch (s) {
    case NodeStatus::Active: return "active";
    case NodeStatus::Expanded: return "expanded";
    case NodeStatus::FinishedLeaf: return "finished";
    case NodeStatus::FailedLeaf: return "failed";
  }
  return "?";
}

RolloutTree::RolloutTree(QuerySpec query, std::uint32_t width_target, std::uint32_t depth_limit,
                         std::uint32_t segment_budget)
    : query_(std::move(query)),
      width_(width_target),
      depth_limit_(depth_limit),
      segment_budget_(segment_budget) {
  TreeNode root;
  root.id = NodeId{0};
  root.status = NodeStatus::Active;
  arena_.push_back(std::move(root));
}

void RolloutTree::check(NodeId id) const {
  if (to_index(id) >= arena_.size()) {
    throw Error(ErrorCode::UnknownNode, "node " + std::to_string(to_index(id)) +
                                            " not in tree of size " +
                                            std::to_string(arena_.size()));
  }
}

const TreeNode& RolloutTree::node(NodeId id) const {
  check(id);
  return arena_[to_index(id)];
}

NodeId RolloutTree::add_child(NodeId parent, Segment segment, NodeStatus status,
                              bool from_fallback) {
  check(parent);
  TreeNode& p = arena_[to_index(parent)];
  if (is_leaf(p.status)) {
    throw Error(ErrorCode::AttachToLeaf,
                "parent " + std::to_string(to_index(parent)) + " is a leaf");
  }
  if (p.depth + 1 > depth_limit_) {
    throw Error(ErrorCode::DepthExceeded, "child depth " + std::to_string(p.depth + 1) +
                                              " exceeds limit " + std::to_string(depth_limit_));
  }
  const NodeId id{static_cast<std::uint32_t>(arena_.size())};
  TreeNode child;
  child.id = id;
  child.parent = parent;
  child.depth = p.depth + 1;
  child.response_len = p.response_len + static_cast<std::uint32_t>(segment.size());
  child.segment = std::move(segment);
  child.status = status;
  child.from_fallback = from_fallback;
  p.children.push_back(id);
  if (p.status == NodeStatus::Active) p.status = NodeStatus::Expanded;
  arena_.push_back(std::move(child));
  set_status(id, status);
  return id;
}

void RolloutTree::set_status(NodeId id, NodeStatus status) {
  check(id);
  TreeNode& n = arena_[to_index(id)];
  n.status = status;
  if (status == NodeStatus::FinishedLeaf) {
    n.emitted = true;
  } else if (status == NodeStatus::FailedLeaf) {
    n.emitted = extract_answer(response_tokens(id)).has_value();
  } else {
    n.emitted = false;
  }
}

std::vector<NodeId> RolloutTree::node_path(NodeId id) const {
  check(id);
  std::vector<NodeId> path;
  for (const TreeNode* n = &arena_[to_index(id)]; n->parent; n = &arena_[to_index(*n->parent)]) {
    path.push_back(n->id);
  }
  std::reverse(path.begin(), path.end());
  return path;
}

TokenSeq RolloutTree::response_tokens(NodeId id) const {
  TokenSeq out;
  out.reserve(node(id).response_len);
  for (NodeId n : node_path(id)) {
    const auto& seg = arena_[to_index(n)].segment.tokens;
    out.insert(out.end(), seg.begin(), seg.end());
  }
  return out;
}

TokenSeq RolloutTree::path_tokens(NodeId id) const {
  TokenSeq out = query_.prompt_tokens;
  const TokenSeq resp = response_tokens(id);
  out.insert(out.end(), resp.begin(), resp.end());
  return out;
}

NodeId RolloutTree::ancestor_at_depth(NodeId id, std::uint32_t depth) const {
  check(id);
  const TreeNode* n = &arena_[to_index(id)];
  if (depth > n->depth) {
    throw Error(ErrorCode::DepthOutOfRange, "node " + std::to_string(to_index(id)) +
                                                " has no ancestor at depth " +
                                                std::to_string(depth));
  }
  while (n->depth > depth) n = &arena_[to_index(*n->parent)];
  return n->id;
}

std::vector<NodeId> RolloutTree::active_nodes() const {
  std::vector<NodeId> out;
  for (const auto& n : arena_) {
    if (n.status == NodeStatus::Active) out.push_back(n.id);
  }
  return out;
}

std::vector<NodeId> RolloutTree::emitted_leaves() const {
  std::vector<NodeId> out;
  for (const auto& n : arena_) {
    if (n.emitted) out.push_back(n.id);
  }
  return out;
}

std::vector<NodeId> RolloutTree::all_leaves() const {
  std::vector<NodeId> out;
  for (const auto& n : arena_) {
    if (is_leaf(n.status)) out.push_back(n.id);
  }
  return out;
}

std::size_t RolloutTree::emitted_count() const {
  return static_cast<std::size_t>(
      std::count_if(arena_.begin(), arena_.end(), [](const TreeNode& n) { return n.emitted; }));
}

std::vector<Subgroup> RolloutTree::subgroups_at_depth(std::uint32_t depth) const {
  std::vector<Subgroup> cells;
  if (depth >= depth_limit_) return cells;
  std::map<std::uint32_t, std::size_t> slot;  // ancestor index -> cell index
  for (NodeId leaf : emitted_leaves()) {
    if (arena_[to_index(leaf)].depth <= depth) continue;
    const NodeId key = ancestor_at_depth(leaf, depth);
    auto [it, inserted] = slot.try_emplace(to_index(key), cells.size());
    if (inserted) cells.push_back(Subgroup{key, {}});
    cells[it->second].leaves.push_back(leaf);
  }
  std::sort(cells.begin(), cells.end(),
            [](const Subgroup& a, const Subgroup& b) { return to_index(a.key) < to_index(b.key); });
  return cells;
}

std::vector<Trajectory> RolloutTree::leaf_trajectories() const {
  if (std::any_of(arena_.begin(), arena_.end(),
                  [](const TreeNode& n) { return n.status == NodeStatus::Active; })) {
    throw Error(ErrorCode::ActiveNodesRemain, "rollout of query " + std::to_string(query_.id) +
                                                  " still has active nodes");
  }
  std::vector<Trajectory> out;
  for (NodeId leaf : emitted_leaves()) {
    Trajectory t;
    t.query_id = query_.id;
    t.node_path = node_path(leaf);
    t.tokens = response_tokens(leaf);
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

nlohmann::json tokens_json(TokenView tokens) {
  auto arr = nlohmann::json::array();
  for (TokenId t : tokens) arr.push_back(to_index(t));
  return arr;
}

}  // namespace

void RolloutTree::write_jsonl(std::ostream& out) const {
  nlohmann::json header = {
      {"query", query_.id},
      {"prompt", tokens_json(query_.prompt_tokens)},
      {"gold", query_.gold_answer},
      {"width", width_},
      {"depth_limit", depth_limit_},
      {"segment_budget", segment_budget_},
      {"seed", meta_.seed},
      {"initial_fork", meta_.initial_fork},
      {"fallback_rounds", meta_.fallback_rounds},
      {"shortfall", meta_.shortfall},
  };
  auto fallbacks = nlohmann::json::array();
  for (const auto& f : meta_.fallbacks) {
    fallbacks.push_back({to_index(f.anchor), f.spawned, f.prefill_tokens});
  }
  header["fallbacks"] = std::move(fallbacks);
  auto sweeps = nlohmann::json::array();
  for (const auto& s : meta_.sweeps) {
    sweeps.push_back({s.requests, s.decode_tokens, s.prefill_tokens});
  }
  header["sweeps"] = std::move(sweeps);
  out << header.dump() << '\n';

  for (const auto& n : arena_) {
    nlohmann::json rec = {
        {"id", to_index(n.id)},
        {"parent", n.parent ? nlohmann::json(to_index(*n.parent)) : nlohmann::json(nullptr)},
        {"depth", n.depth},
        {"status", to_string(n.status)},
        {"stop", to_string(n.segment.stop)},
        {"emitted", n.emitted},
        {"tokens", tokens_json(n.segment.tokens)},
        {"logprob_sum", n.segment.logprob_sum()},
    };
    out << rec.dump() << '\n';
  }
}

std::string RolloutTree::to_jsonl() const {
  std::ostringstream os;
  write_jsonl(os);
  return os.str();
}

}  // namespace treepo
