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

// Segment-level tree sampling.
//
// Each query becomes a tree. The root is forked `init_divergence` times; every
// sweep asks the backend for one segment per request, attaches the segments,
// classifies them (continue / finish / failed) and forks the surviving paths so
// that the number of paths at depth k is min(N^k, w - emitted). When no path is
// left but the tree still has fewer than w trajectories, a fallback round
// re-grows branches from a segment boundary of a random finished path.
//
// Sampling for a request depends only on (tree seed, id of the node it will
// create, prefix); batch composition and thread scheduling never change it.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "treepo/backend.hpp"
#include "treepo/core.hpp"
#include "treepo/parallel.hpp"
#include "treepo/task.hpp"
#include "treepo/tree.hpp"

namespace treepo {

struct InitDivergence {
  enum class Kind { Fixed, Random };
  Kind kind = Kind::Fixed;
  std::uint32_t fixed = 2;
  std::uint32_t lo = 2;
  std::uint32_t hi = 8;

  static InitDivergence make_fixed(std::uint32_t n) { return {Kind::Fixed, n, 2, 8}; }
  static InitDivergence make_random(std::uint32_t lo, std::uint32_t hi) {
    return {Kind::Random, 2, lo, hi};
  }
};

struct TreeConfig {
  std::uint32_t width = 16;           // w
  std::uint32_t depth = 7;            // d
  std::uint32_t segment_budget = 16;  // l
  std::uint32_t branch_base = 2;      // N
  InitDivergence init_divergence;
  std::uint32_t fallback_segment_budget = 0;  // 0 means "same as segment_budget"
  std::uint32_t max_fallback_rounds = 8;
  std::uint32_t prompt_budget = 8;
  RepetitionParams repetition;

  std::uint32_t fallback_budget() const {
    return fallback_segment_budget == 0 ? segment_budget : fallback_segment_budget;
  }
  std::uint32_t max_response_tokens() const { return depth * segment_budget; }
  /// Throws Error(ConfigInvalid).
  void validate() const;
};

enum class BranchMode { FixedNary, TransferEven, ProbSoftmax };
enum class ProbDirection { LowEncourage, HighEncourage };

struct TemperatureSchedule {
  double start = 5.0;
  double end = 1.0;
};

struct BranchPolicy {
  BranchMode mode = BranchMode::TransferEven;
  ProbDirection direction = ProbDirection::LowEncourage;
  double temperature = 2.0;
  std::optional<TemperatureSchedule> schedule;

  /// Softmax temperature at training progress `progress` in [0, 1].
  double temperature_at(double progress) const;
  /// Copy with the schedule collapsed to the temperature at `progress`.
  BranchPolicy at_progress(double progress) const;
  void validate() const;
};

std::string_view to_string(BranchMode m);
std::string_view to_string(ProbDirection d);

struct InferenceRequest {
  std::uint64_t tree_id = 0;
  NodeId node{0};             // parent of the node this request will create
  std::uint32_t budget = 0;   // remaining token budget for the segment
  std::uint64_t stream_seed = 0;
  bool from_fallback = false;
  TokenSeq prefix;            // path_tokens(node)
};

enum class SegmentVerdict { Continue, Finish, Failed };

/// Finish on EOS, on a well-formed answer in path ++ segment, or when the new
/// node sits at the depth limit; Failed on repetition inside the segment.
SegmentVerdict classify_segment(const Segment& seg, TokenView path_so_far,
                                std::uint32_t node_depth, const TreeConfig& cfg);

/// Paths wanted at `depth`: min(N^depth, w). Depth 0 is the root fork and
/// returns the init divergence (`resolved_init` when non-zero).
std::uint32_t branch_budget_total(std::uint32_t depth, const TreeConfig& cfg,
                                  std::uint32_t resolved_init = 0);

/// Largest-remainder apportionment of max(total, n) over n weights with a
/// floor of one per entry. Ties go to the lowest index.
std::vector<std::uint32_t> apportion(std::span<const double> weights, std::uint32_t total);

std::vector<std::uint32_t> assign_branches_even(std::span<const NodeId> active,
                                                std::uint32_t total);

struct ScoredNode {
  NodeId node{0};
  double score = 0.0;  // mean per-token logprob of the node's last segment
};

std::vector<std::uint32_t> assign_branches_prob(std::span<const ScoredNode> active,
                                                std::uint32_t total, double temperature,
                                                ProbDirection direction);

/// One segment per request, order aligned. Serial and parallel paths agree bit for bit.
std::vector<Segment> step_inference(std::span<const InferenceRequest> requests,
                                    const SamplingBackend& backend, Exec exec = Exec::Serial);

/// Fallback requests for a tree with no active node; empty (and shortfall
/// recorded) when no finished path carries an answer or ends with EOS.
std::vector<InferenceRequest> do_fallback(RolloutTree& tree, const TreeConfig& cfg, Rng& rng);

/// Rolls out a single tree. `inner` controls step_inference parallelism.
RolloutTree rollout_tree(const QuerySpec& query, const TreeConfig& cfg,
                         const SamplingBackend& backend, const BranchPolicy& branch,
                         std::uint64_t tree_seed, Exec inner = Exec::Serial);

/// Tree seed of the i-th query of a batch.
constexpr std::uint64_t tree_seed_for(std::uint64_t batch_seed, std::size_t index) {
  return derive_seed(batch_seed, 0x7472656573ULL, index);
}

/// One frozen tree per query. The parallel path rolls trees out concurrently.
std::vector<RolloutTree> run_tree_rollout(std::span<const QuerySpec> queries,
                                          const TreeConfig& cfg, const SamplingBackend& backend,
                                          const BranchPolicy& branch, std::uint64_t seed,
                                          Exec exec = Exec::Serial);

/// Sequential baseline: `n` independent chains per query, no branching, no fallback.
TreeConfig sequential_config(const TreeConfig& base, std::uint32_t n);

std::vector<RolloutTree> run_sequential_rollout(std::span<const QuerySpec> queries,
                                                std::uint32_t n, const TreeConfig& base,
                                                const SamplingBackend& backend,
                                                std::uint64_t seed, Exec exec = Exec::Serial);

}  // namespace treepo
