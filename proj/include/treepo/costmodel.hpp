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

// Hardware-free token accounting for tree vs sequential sampling.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "treepo/tree.hpp"

namespace treepo {

struct ComputeLedger {
  std::uint64_t prefill_tokens = 0;
  std::uint64_t decode_tokens = 0;
  std::vector<SweepRecord> sweeps;
  std::uint64_t trajectories = 0;

  std::uint64_t total_tokens() const { return prefill_tokens + decode_tokens; }
  ComputeLedger& operator+=(const ComputeLedger& other);
};

struct CostParams {
  double prefill = 1.0;         // per prefill token
  double decode = 1.0;          // per decode token
  double sweep_overhead = 0.0;  // per inference sweep

  static CostParams decode_only() { return {0.0, 1.0, 0.0}; }
  void validate() const;
};

/// Each segment decoded once; prompt prefilled once per root branch plus the
/// full path at every fallback anchor.
ComputeLedger ledger_tree(const RolloutTree& tree);

/// Every leaf path (emitted or failed) regenerated from the prompt on its own.
ComputeLedger ledger_sequential(const RolloutTree& tree);

double weighted_cost(const ComputeLedger& ledger, const CostParams& params);

/// 1 - cost(tree) / cost(seq). Throws DivisionByZero when cost(seq) is 0.
double savings(const ComputeLedger& tree_ledger, const ComputeLedger& seq_ledger,
               const CostParams& params = CostParams::decode_only());

struct Throughput {
  double wall = 0.0;
  double token_ps = 0.0;
  double traj_ps = 0.0;
};

/// Simulated wall time sums, per sweep, the overhead plus its prefill and
/// decode costs. Rates are 0 when the wall time is 0.
Throughput throughput_analogs(const ComputeLedger& ledger, const CostParams& params);

/// Decode savings of a full N-ary tree of depth d and width w with equal
/// segment lengths: 1 - sum_k min(N^k, w) / (w d).
double full_tree_savings(std::uint32_t n, std::uint32_t d, std::uint32_t w);

struct DepthSweepRow {
  std::string config;
  std::uint32_t depth = 0;
  std::uint32_t segment = 0;
  std::uint64_t decode_tree = 0;
  std::uint64_t decode_seq = 0;
  double savings = 0.0;
  double tokenps_analog = 0.0;
  double trajps_analog = 0.0;
};

/// Sums ledgers over a set of trees from one configuration into a row.
DepthSweepRow depth_sweep_row(const std::string& config, std::uint32_t depth,
                              std::uint32_t segment, std::span<const RolloutTree> trees,
                              const CostParams& params);

void write_depth_sweep_csv(std::ostream& out, std::span<const DepthSweepRow> rows);

}  // namespace treepo
