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

#include "treepo/engine.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>

#include "treepo/error.hpp"

namespace treepo {

namespace {

constexpr std::uint64_t kControlStream = 0x636f6e74726f6cULL;  // fork sizes, fallback picks

std::string tree_tag(std::uint64_t id) { return "tree " + std::to_string(id) + ": "; }

}  // namespace

void TreeConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::ConfigInvalid, what); };
  if (width < 1) bad("width must be >= 1");
  if (depth < 1) bad("depth must be >= 1");
  if (segment_budget < 1) bad("segment_budget must be >= 1");
  if (branch_base < 1) bad("branch_base must be >= 1");
  if (prompt_budget < 1) bad("prompt_budget must be >= 1");
  if (init_divergence.kind == InitDivergence::Kind::Fixed) {
    if (init_divergence.fixed < 1) bad("fixed init divergence must be >= 1");
  } else if (!(2 <= init_divergence.lo && init_divergence.lo <= init_divergence.hi &&
               init_divergence.hi <= 8)) {
    bad("random init divergence needs 2 <= lo <= hi <= 8");
  }
  if (repetition.min_len < 1 || repetition.min_reps < 2) {
    bad("repetition detector needs min_len >= 1 and min_reps >= 2");
  }
}

double BranchPolicy::temperature_at(double progress) const {
  if (!schedule) return temperature;
  const double p = std::clamp(progress, 0.0, 1.0);
  return schedule->start + (schedule->end - schedule->start) * p;
}

BranchPolicy BranchPolicy::at_progress(double progress) const {
  BranchPolicy out = *this;
  out.temperature = temperature_at(progress);
  out.schedule.reset();
  return out;
}

void BranchPolicy::validate() const {
  if (!(temperature > 0.0)) throw Error(ErrorCode::ConfigInvalid, "branch temperature must be > 0");
  if (schedule && !(schedule->start > 0.0 && schedule->end > 0.0)) {
    throw Error(ErrorCode::ConfigInvalid, "branch temperature schedule must stay > 0");
  }
}

std::string_view to_string(BranchMode m) {
  switch (m) {
    case BranchMode::FixedNary: return "fixed";
    case BranchMode::TransferEven: return "even";
    case BranchMode::ProbSoftmax: return "prob";
  }
  return "?";
}

std::string_view to_string(ProbDirection d) {
  return d == ProbDirection::LowEncourage ? "low" : "high";
}

SegmentVerdict classify_segment(const Segment& seg, TokenView path_so_far,
                                std::uint32_t node_depth, const TreeConfig& cfg) {
  if (has_repetition(seg.tokens, cfg.repetition.min_len, cfg.repetition.min_reps)) {
    return SegmentVerdict::Failed;
  }
  if (std::find(seg.tokens.begin(), seg.tokens.end(), Vocabulary::kEos) != seg.tokens.end()) {
    return SegmentVerdict::Finish;
  }
  TokenSeq full(path_so_far.begin(), path_so_far.end());
  full.insert(full.end(), seg.tokens.begin(), seg.tokens.end());
  if (extract_answer(full)) return SegmentVerdict::Finish;
  if (node_depth >= cfg.depth) return SegmentVerdict::Finish;
  return SegmentVerdict::Continue;
}

std::uint32_t branch_budget_total(std::uint32_t depth, const TreeConfig& cfg,
                                  std::uint32_t resolved_init) {
  if (depth == 0) {
    const std::uint32_t init = resolved_init != 0 ? resolved_init : cfg.init_divergence.fixed;
    return std::min(init, cfg.width);
  }
  std::uint64_t paths = 1;
  for (std::uint32_t i = 0; i < depth && paths < cfg.width; ++i) paths *= cfg.branch_base;
  return static_cast<std::uint32_t>(std::min<std::uint64_t>(paths, cfg.width));
}

std::vector<std::uint32_t> apportion(std::span<const double> weights, std::uint32_t total) {
  const std::size_t n = weights.size();
  std::vector<std::uint32_t> counts(n, 1);
  if (n == 0) return counts;
  const std::uint32_t target = std::max<std::uint32_t>(total, static_cast<std::uint32_t>(n));
  if (target == n) return counts;

  double sum = 0.0;
  bool usable = true;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) usable = false;
    sum += w;
  }
  std::vector<double> raw(n);
  for (std::size_t i = 0; i < n; ++i) {
    raw[i] = usable && sum > 0.0 ? weights[i] / sum * target
                                 : static_cast<double>(target) / static_cast<double>(n);
  }

  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    counts[i] = std::max<std::uint32_t>(1, static_cast<std::uint32_t>(std::floor(raw[i])));
    assigned += counts[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto remainder = [&](std::size_t i) { return raw[i] - static_cast<double>(counts[i]); };

  if (assigned < target) {
    // Largest remainder first, lowest index on ties.
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder(a) > remainder(b); });
    for (std::size_t k = 0; assigned < target; k = (k + 1) % n) {
      ++counts[order[k]];
      ++assigned;
    }
  } else {
    // Floor-of-one bumps overshot: take back from the most over-allocated.
    while (assigned > target) {
      std::size_t pick = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[i] <= 1) continue;
        if (pick == n || remainder(i) < remainder(pick)) pick = i;
      }
      if (pick == n) break;
      --counts[pick];
      --assigned;
    }
  }
  return counts;
}

std::vector<std::uint32_t> assign_branches_even(std::span<const NodeId> active,
                                                std::uint32_t total) {
  if (active.empty()) {
    if (total > 0) throw Error(ErrorCode::EmptyActiveSet, "no active path to receive branches");
    return {};
  }
  const std::vector<double> w(active.size(), 1.0);
  return apportion(w, total);
}

std::vector<std::uint32_t> assign_branches_prob(std::span<const ScoredNode> active,
                                                std::uint32_t total, double temperature,
                                                ProbDirection direction) {
  if (active.empty()) throw Error(ErrorCode::EmptyActiveSet, "no active path to score");
  if (!(temperature > 0.0)) throw Error(ErrorCode::ConfigInvalid, "temperature must be > 0");
  const double sign = direction == ProbDirection::HighEncourage ? 1.0 : -1.0;
  std::vector<double> x(active.size());
  for (std::size_t i = 0; i < active.size(); ++i) x[i] = sign * active[i].score / temperature;
  const double mx = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double& v : x) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : x) v /= z;
  return apportion(x, total);
}

std::vector<Segment> step_inference(std::span<const InferenceRequest> requests,
                                    const SamplingBackend& backend, Exec exec) {
  std::vector<Segment> out(requests.size());
  ExceptionSlot errors;
  auto one = [&](std::size_t i) {
    errors.run([&] {
      const InferenceRequest& req = requests[i];
      Rng rng(req.stream_seed);
      try {
        out[i] = backend.sample_segment(req.prefix, req.budget, rng);
      } catch (const Error&) {
        throw;
      } catch (const std::exception& e) {
        throw Error(ErrorCode::BackendFailure, tree_tag(req.tree_id) + e.what());
      }
      if (!out[i].well_formed(req.budget)) {
        throw Error(ErrorCode::BackendFailure,
                    tree_tag(req.tree_id) + "backend returned a malformed segment");
      }
    });
  };
  const auto n = static_cast<std::int64_t>(requests.size());
  if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(dynamic, 4)
    for (std::int64_t i = 0; i < n; ++i) one(static_cast<std::size_t>(i));
  } else {
    for (std::int64_t i = 0; i < n; ++i) one(static_cast<std::size_t>(i));
  }
  errors.rethrow();
  return out;
}

namespace {

std::uint32_t request_budget(const TreeNode& parent, bool fallback, const TreeConfig& cfg) {
  const std::uint32_t seg = fallback ? cfg.fallback_budget() : cfg.segment_budget;
  const std::uint32_t cap = cfg.max_response_tokens();
  const std::uint32_t room = parent.response_len >= cap ? 0 : cap - parent.response_len;
  return std::min(seg, room);
}

// Requests in node order; the i-th request will create node tree.size() + i.
std::vector<InferenceRequest> make_requests(const RolloutTree& tree, std::span<const NodeId> parents,
                                            std::span<const std::uint32_t> counts,
                                            bool fallback, const TreeConfig& cfg) {
  std::vector<InferenceRequest> out;
  std::uint32_t next = static_cast<std::uint32_t>(tree.size());
  for (std::size_t i = 0; i < parents.size(); ++i) {
    const TreeNode& p = tree.node(parents[i]);
    const bool fb = fallback || p.from_fallback;
    const TokenSeq prefix = tree.path_tokens(p.id);
    for (std::uint32_t c = 0; c < counts[i]; ++c) {
      InferenceRequest r;
      r.tree_id = tree.query().id;
      r.node = p.id;
      r.budget = request_budget(p, fb, cfg);
      r.stream_seed = derive_seed(tree.meta().seed, next++);
      r.from_fallback = fb;
      r.prefix = prefix;
      out.push_back(std::move(r));
    }
  }
  return out;
}

void attach(RolloutTree& tree, std::span<const InferenceRequest> requests,
            std::vector<Segment>& segments, const TreeConfig& cfg) {
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const InferenceRequest& req = requests[i];
    Segment& seg = segments[i];
    const TreeNode& parent = tree.node(req.node);
    const std::uint32_t depth = parent.depth + 1;
    const std::uint32_t len = parent.response_len + static_cast<std::uint32_t>(seg.size());
    SegmentVerdict v = classify_segment(seg, req.prefix, depth, cfg);
    if (v == SegmentVerdict::Continue && len >= cfg.max_response_tokens()) {
      v = SegmentVerdict::Finish;  // response budget spent
    }
    NodeStatus status = NodeStatus::Active;
    if (v == SegmentVerdict::Finish) status = NodeStatus::FinishedLeaf;
    if (v == SegmentVerdict::Failed) {
      status = NodeStatus::FailedLeaf;
      seg.stop = StopReason::RepetitionFail;
    }
    const NodeId id = tree.add_child(req.node, std::move(seg), status, req.from_fallback);
    assert(derive_seed(tree.meta().seed, to_index(id)) == req.stream_seed);
    (void)id;
  }
}

std::vector<std::uint32_t> branch_counts(const RolloutTree& tree, std::span<const NodeId> active,
                                         const TreeConfig& cfg, const BranchPolicy& branch) {
  const std::uint32_t depth = tree.node(active.front()).depth + 1;
  const auto emitted = static_cast<std::uint32_t>(tree.emitted_count());
  const std::uint32_t room = cfg.width > emitted ? cfg.width - emitted : 0;
  std::uint32_t total = std::min(branch_budget_total(depth, cfg), room);
  switch (branch.mode) {
    case BranchMode::FixedNary: {
      const std::uint64_t nary = static_cast<std::uint64_t>(active.size()) * cfg.branch_base;
      total = static_cast<std::uint32_t>(std::min<std::uint64_t>(total, nary));
      return assign_branches_even(active, total);
    }
    case BranchMode::TransferEven:
      return assign_branches_even(active, total);
    case BranchMode::ProbSoftmax: {
      std::vector<ScoredNode> scored;
      scored.reserve(active.size());
      for (NodeId id : active) scored.push_back({id, tree.node(id).segment.mean_logprob()});
      return assign_branches_prob(scored, total, branch.temperature, branch.direction);
    }
  }
  return {};
}

}  // namespace

std::vector<InferenceRequest> do_fallback(RolloutTree& tree, const TreeConfig& cfg, Rng& rng) {
  if (!tree.active_nodes().empty()) {
    throw Error(ErrorCode::FallbackNotEligible, "tree still has active paths");
  }
  const std::size_t emitted = tree.emitted_count();
  if (emitted >= cfg.width) {
    throw Error(ErrorCode::FallbackNotEligible, "tree already has its full width");
  }
  if (tree.meta().fallback_rounds >= cfg.max_fallback_rounds) {
    throw Error(ErrorCode::FallbackNotEligible, "fallback rounds exhausted");
  }

  std::vector<NodeId> candidates;
  for (const TreeNode& n : tree.nodes()) {
    if (n.status != NodeStatus::FinishedLeaf) continue;
    const TokenSeq resp = tree.response_tokens(n.id);
    if (extract_answer(resp) || (!resp.empty() && resp.back() == Vocabulary::kEos)) {
      candidates.push_back(n.id);
    }
  }
  const auto missing = static_cast<std::uint32_t>(cfg.width - emitted);
  if (candidates.empty()) {
    tree.meta().shortfall = missing;
    return {};
  }

  const NodeId pick = candidates[uniform_int(rng, 0, candidates.size() - 1)];
  const std::uint32_t leaf_depth = tree.node(pick).depth;
  const auto anchor_depth = static_cast<std::uint32_t>(uniform_int(rng, 0, leaf_depth - 1));
  const NodeId anchor = tree.ancestor_at_depth(pick, anchor_depth);

  const std::vector<NodeId> parents{anchor};
  const auto counts = assign_branches_even(parents, missing);
  auto requests = make_requests(tree, parents, counts, /*fallback=*/true, cfg);

  auto& meta = tree.meta();
  ++meta.fallback_rounds;
  meta.fallbacks.push_back(FallbackEvent{
      anchor, missing,
      static_cast<std::uint32_t>(tree.query().prompt_tokens.size() + tree.node(anchor).response_len)});
  return requests;
}

RolloutTree rollout_tree(const QuerySpec& query, const TreeConfig& cfg,
                         const SamplingBackend& backend, const BranchPolicy& branch,
                         std::uint64_t tree_seed, Exec inner) {
  cfg.validate();
  branch.validate();
  if (query.prompt_tokens.size() > cfg.prompt_budget) {
    throw Error(ErrorCode::ConfigInvalid, tree_tag(query.id) + "prompt exceeds prompt budget");
  }
  RolloutTree tree(query, cfg.width, cfg.depth, cfg.segment_budget);
  tree.meta().seed = tree_seed;
  Rng control(derive_seed(tree_seed, kControlStream));

  std::uint32_t init = cfg.init_divergence.fixed;
  if (cfg.init_divergence.kind == InitDivergence::Kind::Random) {
    init = static_cast<std::uint32_t>(
        uniform_int(control, cfg.init_divergence.lo, cfg.init_divergence.hi));
  }
  init = branch_budget_total(0, cfg, init);
  tree.meta().initial_fork = init;

  const std::vector<NodeId> root{NodeId{0}};
  const std::vector<std::uint32_t> root_count{init};
  auto requests = make_requests(tree, root, root_count, false, cfg);
  std::uint64_t prefill = static_cast<std::uint64_t>(query.prompt_tokens.size()) * init;

  const std::size_t max_sweeps =
      static_cast<std::size_t>(cfg.depth) * (1 + static_cast<std::size_t>(cfg.max_fallback_rounds));
  std::size_t sweeps = 0;
  while (!requests.empty()) {
    if (++sweeps > max_sweeps) {
      throw Error(ErrorCode::ConfigInvalid, tree_tag(query.id) + "sweep bound exceeded");
    }
    auto segments = step_inference(requests, backend, inner);
    SweepRecord rec;
    rec.requests = static_cast<std::uint32_t>(requests.size());
    for (const auto& s : segments) rec.decode_tokens += s.size();
    rec.prefill_tokens = prefill;
    tree.meta().sweeps.push_back(rec);
    attach(tree, requests, segments, cfg);

    const auto active = tree.active_nodes();
    if (!active.empty()) {
      const auto counts = branch_counts(tree, active, cfg, branch);
      requests = make_requests(tree, active, counts, false, cfg);
      prefill = 0;
      continue;
    }
    requests.clear();
    if (tree.emitted_count() >= cfg.width) break;
    if (tree.meta().fallback_rounds >= cfg.max_fallback_rounds) break;
    requests = do_fallback(tree, cfg, control);
    if (!requests.empty()) prefill = tree.meta().fallbacks.back().prefill_tokens;
  }
  const auto emitted = static_cast<std::uint32_t>(tree.emitted_count());
  tree.meta().shortfall = cfg.width > emitted ? cfg.width - emitted : 0;
  return tree;
}

std::vector<RolloutTree> run_tree_rollout(std::span<const QuerySpec> queries,
                                          const TreeConfig& cfg, const SamplingBackend& backend,
                                          const BranchPolicy& branch, std::uint64_t seed,
                                          Exec exec) {
  cfg.validate();
  branch.validate();
  std::vector<std::optional<RolloutTree>> slots(queries.size());
  ExceptionSlot errors;
  const auto n = static_cast<std::int64_t>(queries.size());
  auto one = [&](std::int64_t i) {
    errors.run([&] {
      const auto idx = static_cast<std::size_t>(i);
      slots[idx].emplace(
          rollout_tree(queries[idx], cfg, backend, branch, tree_seed_for(seed, idx)));
    });
  };
  if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t i = 0; i < n; ++i) one(i);
  } else {
    for (std::int64_t i = 0; i < n; ++i) one(i);
  }
  errors.rethrow();
  std::vector<RolloutTree> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

TreeConfig sequential_config(const TreeConfig& base, std::uint32_t n) {
  TreeConfig cfg = base;
  cfg.width = n;
  cfg.branch_base = 1;
  cfg.init_divergence = InitDivergence::make_fixed(n);
  cfg.fallback_segment_budget = 0;
  cfg.max_fallback_rounds = 0;
  return cfg;
}

std::vector<RolloutTree> run_sequential_rollout(std::span<const QuerySpec> queries,
                                                std::uint32_t n, const TreeConfig& base,
                                                const SamplingBackend& backend,
                                                std::uint64_t seed, Exec exec) {
  return run_tree_rollout(queries, sequential_config(base, n), backend, BranchPolicy{}, seed,
                          exec);
}

}  // namespace treepo
