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

#include "treepo/costmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "treepo/error.hpp"

namespace treepo {

ComputeLedger& ComputeLedger::operator+=(const ComputeLedger& other) {
  prefill_tokens += other.prefill_tokens;
  decode_tokens += other.decode_tokens;
  trajectories += other.trajectories;
  sweeps.insert(sweeps.end(), other.sweeps.begin(), other.sweeps.end());
  return *this;
}

void CostParams::validate() const {
  if (!(prefill >= 0.0) || !(decode >= 0.0) || !(sweep_overhead >= 0.0)) {
    throw Error(ErrorCode::ConfigInvalid, "cost parameters must be non-negative");
  }
}

ComputeLedger ledger_tree(const RolloutTree& tree) {
  ComputeLedger l;
  for (const auto& n : tree.nodes()) l.decode_tokens += n.segment.size();
  const std::uint64_t prompt = tree.query().prompt_tokens.size();
  std::uint32_t root_branches = 0;
  for (const auto& n : tree.nodes()) {
    if (n.depth == 1 && !n.from_fallback) ++root_branches;
  }
  l.prefill_tokens = prompt * root_branches;
  for (const auto& f : tree.meta().fallbacks) l.prefill_tokens += f.prefill_tokens;
  l.sweeps = tree.meta().sweeps;
  l.trajectories = tree.emitted_count();
  return l;
}

ComputeLedger ledger_sequential(const RolloutTree& tree) {
  ComputeLedger l;
  const std::uint64_t prompt = tree.query().prompt_tokens.size();
  const auto leaves = tree.all_leaves();
  std::uint32_t max_depth = 0;
  for (NodeId leaf : leaves) {
    const TreeNode& n = tree.node(leaf);
    l.decode_tokens += n.response_len;
    max_depth = std::max(max_depth, n.depth);
  }
  l.prefill_tokens = prompt * leaves.size();
  l.trajectories = tree.emitted_count();

  // Chains advance one segment per sweep in lock step.
  l.sweeps.assign(max_depth, SweepRecord{});
  for (NodeId leaf : leaves) {
    for (NodeId id : tree.node_path(leaf)) {
      const TreeNode& n = tree.node(id);
      SweepRecord& s = l.sweeps[n.depth - 1];
      s.requests += 1;
      s.decode_tokens += n.segment.size();
    }
  }
  if (!l.sweeps.empty()) l.sweeps[0].prefill_tokens = l.prefill_tokens;
  return l;
}

double weighted_cost(const ComputeLedger& ledger, const CostParams& params) {
  return params.prefill * static_cast<double>(ledger.prefill_tokens) +
         params.decode * static_cast<double>(ledger.decode_tokens) +
         params.sweep_overhead * static_cast<double>(ledger.sweeps.size());
}

double savings(const ComputeLedger& tree_ledger, const ComputeLedger& seq_ledger,
               const CostParams& params) {
  params.validate();
  const double seq = weighted_cost(seq_ledger, params);
  if (!(seq > 0.0)) {
    throw Error(ErrorCode::DivisionByZero, "sequential ledger has zero cost");
  }
  return 1.0 - weighted_cost(tree_ledger, params) / seq;
}

Throughput throughput_analogs(const ComputeLedger& ledger, const CostParams& params) {
  params.validate();
  Throughput t;
  for (const auto& s : ledger.sweeps) {
    t.wall += params.sweep_overhead + params.prefill * static_cast<double>(s.prefill_tokens) +
              params.decode * static_cast<double>(s.decode_tokens);
  }
  if (t.wall > 0.0) {
    t.token_ps = static_cast<double>(ledger.total_tokens()) / t.wall;
    t.traj_ps = static_cast<double>(ledger.trajectories) / t.wall;
  }
  return t;
}

double full_tree_savings(std::uint32_t n, std::uint32_t d, std::uint32_t w) {
  if (n == 0 || d == 0 || w == 0) {
    throw Error(ErrorCode::DivisionByZero, "full tree needs n, d and w positive");
  }
  double paths = 0.0;
  double level = 1.0;
  for (std::uint32_t k = 1; k <= d; ++k) {
    level = std::min(level * n, static_cast<double>(w));
    paths += level;
  }
  return 1.0 - paths / (static_cast<double>(w) * d);
}

DepthSweepRow depth_sweep_row(const std::string& config, std::uint32_t depth,
                              std::uint32_t segment, std::span<const RolloutTree> trees,
                              const CostParams& params) {
  ComputeLedger tree_l;
  ComputeLedger seq_l;
  for (const auto& t : trees) {
    tree_l += ledger_tree(t);
    seq_l += ledger_sequential(t);
  }
  DepthSweepRow row;
  row.config = config;
  row.depth = depth;
  row.segment = segment;
  row.decode_tree = tree_l.decode_tokens;
  row.decode_seq = seq_l.decode_tokens;
  row.savings = savings(tree_l, seq_l, params);
  const Throughput th = throughput_analogs(tree_l, params);
  row.tokenps_analog = th.token_ps;
  row.trajps_analog = th.traj_ps;
  return row;
}

void write_depth_sweep_csv(std::ostream& out, std::span<const DepthSweepRow> rows) {
  out << "config,depth,segment,decode_tree,decode_seq,savings,tokenps_analog,trajps_analog\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%u,%u,%llu,%llu,%.6f,%.6f,%.6f\n", r.config.c_str(),
                  r.depth, r.segment, static_cast<unsigned long long>(r.decode_tree),
                  static_cast<unsigned long long>(r.decode_seq), r.savings, r.tokenps_analog,
                  r.trajps_analog);
    out << buf;
  }
}

}  // namespace treepo
