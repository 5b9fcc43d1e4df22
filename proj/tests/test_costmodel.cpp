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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "support.hpp"
#include "treepo/costmodel.hpp"
#include "treepo/engine.hpp"
#include "treepo/error.hpp"
#include "treepo/policy_env.hpp"

using namespace treepo;
using namespace treepo::testing;

namespace {

const QuerySpec kQuery = QuerySpec::from_operands(0, {3, 4});

// Always fills the whole budget with fillers and never stops on its own.
FnBackend filler_backend() {
  return FnBackend([](TokenView, std::uint32_t budget, Rng& rng) {
    TokenSeq t;
    for (std::uint32_t i = 0; i < budget; ++i) t.push_back(fill(static_cast<int>(rng() % 8)));
    return make_segment(t);
  });
}

RolloutTree full_tree(std::uint32_t w, std::uint32_t d, std::uint32_t l) {
  TreeConfig cfg;
  cfg.width = w;
  cfg.depth = d;
  cfg.segment_budget = l;
  cfg.branch_base = 2;
  cfg.init_divergence = InitDivergence::make_fixed(2);
  const auto backend = filler_backend();
  return rollout_tree(kQuery, cfg, backend, {}, 1);
}

// Decode tokens of a full tree counted node by node.
std::uint64_t enumerate_nodes(std::uint32_t n, std::uint32_t d, std::uint32_t w, std::uint32_t l) {
  std::uint64_t nodes = 0;
  std::uint64_t level = 1;
  for (std::uint32_t k = 1; k <= d; ++k) {
    level = std::min<std::uint64_t>(level * n, w);
    nodes += level;
  }
  return nodes * l;
}

}  // namespace

TEST_CASE("full binary tree: 56 against 96 decode tokens") {
  const RolloutTree t = full_tree(8, 3, 4);
  CHECK(t.emitted_count() == 8);
  const auto tree_l = ledger_tree(t);
  const auto seq_l = ledger_sequential(t);
  CHECK(tree_l.decode_tokens == 56);
  CHECK(seq_l.decode_tokens == 96);
  CHECK(savings(tree_l, seq_l) == doctest::Approx(1.0 - 56.0 / 96.0).epsilon(1e-15));
  CHECK(full_tree_savings(2, 3, 8) == doctest::Approx(0.41666666666666667).epsilon(1e-15));
  CHECK(tree_l.prefill_tokens == 5 * 2);
  CHECK(seq_l.prefill_tokens == 5 * 8);
  CHECK(tree_l.trajectories == 8);
  CHECK(tree_l.sweeps.size() == 3);
  CHECK(seq_l.sweeps.size() == 3);
}

TEST_CASE("a single chain saves nothing") {
  const RolloutTree t = full_tree(1, 3, 4);
  CHECK(ledger_tree(t).decode_tokens == 12);
  CHECK(ledger_sequential(t).decode_tokens == 12);
  CHECK(savings(ledger_tree(t), ledger_sequential(t)) == 0.0);
  CHECK(full_tree_savings(2, 3, 1) == 0.0);
}

TEST_CASE("closed form matches enumeration for binary trees") {
  for (std::uint32_t d = 1; d <= 6; ++d) {
    for (std::uint32_t w = 1; w <= (1u << d); ++w) {
      const double closed = full_tree_savings(2, d, w);
      const double counted =
          1.0 - static_cast<double>(enumerate_nodes(2, d, w, 4)) / static_cast<double>(w * d * 4);
      CHECK(closed == doctest::Approx(counted).epsilon(1e-14));
      const RolloutTree t = full_tree(w, d, 4);
      REQUIRE(t.emitted_count() == w);
      CHECK(ledger_tree(t).decode_tokens == enumerate_nodes(2, d, w, 4));
      CHECK(ledger_sequential(t).decode_tokens == static_cast<std::uint64_t>(w) * d * 4);
      CHECK(savings(ledger_tree(t), ledger_sequential(t)) == doctest::Approx(closed).epsilon(1e-14));
    }
  }
}

TEST_CASE("throughput analogs") {
  const RolloutTree t = full_tree(8, 3, 4);
  const auto l = ledger_tree(t);
  const auto unit = throughput_analogs(l, CostParams{});
  CHECK(unit.wall == doctest::Approx(static_cast<double>(l.total_tokens())));
  CHECK(unit.token_ps == doctest::Approx(1.0));
  CHECK(unit.traj_ps == doctest::Approx(8.0 / 66.0));

  double last_cost = -1.0;
  double last_tps = 2.0;
  for (double oh : {0.0, 1.0, 10.0, 100.0}) {
    const CostParams p{1.0, 1.0, oh};
    const double c = weighted_cost(l, p);
    const double tps = throughput_analogs(l, p).token_ps;
    CHECK(c > last_cost);
    CHECK(tps < last_tps);
    last_cost = c;
    last_tps = tps;
  }
  CHECK(throughput_analogs(ComputeLedger{}, CostParams{}).token_ps == 0.0);
}

TEST_CASE("sharing never costs more than independent sampling") {
  LogitsTablePolicy policy({}, PolicyInit::FormatPrior);
  Rng rng(3);
  for (int trial = 0; trial < 80; ++trial) {
    TreeConfig cfg;
    cfg.width = static_cast<std::uint32_t>(uniform_int(rng, 1, 32));
    cfg.depth = static_cast<std::uint32_t>(uniform_int(rng, 1, 8));
    cfg.segment_budget = static_cast<std::uint32_t>(uniform_int(rng, 1, 16));
    const auto q = make_task(rng, static_cast<std::uint64_t>(trial));
    const RolloutTree t = rollout_tree(q, cfg, policy, {}, static_cast<std::uint64_t>(trial));
    const auto tl = ledger_tree(t);
    const auto sl = ledger_sequential(t);
    CHECK(tl.decode_tokens <= sl.decode_tokens);
    CHECK(tl.prefill_tokens <= sl.prefill_tokens + 64ull * 8 * cfg.max_fallback_rounds);
    std::uint64_t swept = 0;
    for (const auto& s : tl.sweeps) swept += s.decode_tokens;
    CHECK(swept == tl.decode_tokens);
    std::uint64_t seq_swept = 0;
    for (const auto& s : sl.sweeps) seq_swept += s.decode_tokens;
    CHECK(seq_swept == sl.decode_tokens);
    if (sl.decode_tokens > 0) {
      const double s = savings(tl, sl);
      CHECK(s >= 0.0);
      CHECK(s < 1.0);
    }
  }
}

TEST_CASE("ledgers add up") {
  const RolloutTree a = full_tree(8, 3, 4);
  const RolloutTree b = full_tree(4, 2, 2);
  ComputeLedger sum = ledger_tree(a);
  sum += ledger_tree(b);
  CHECK(sum.decode_tokens == 56 + (2 + 4) * 2);
  CHECK(sum.trajectories == 12);
  CHECK(sum.sweeps.size() == 5);
}

TEST_CASE("cost errors") {
  try {
    savings(ComputeLedger{}, ComputeLedger{});
    FAIL("expected DivisionByZero");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DivisionByZero);
  }
  CHECK_THROWS_AS(full_tree_savings(0, 3, 8), Error);
  CHECK_THROWS_AS((CostParams{-1.0, 1.0, 0.0}.validate()), Error);
}

TEST_CASE("depth sweep rows") {
  std::vector<DepthSweepRow> rows;
  for (auto [d, l] : {std::pair{7u, 16u}, std::pair{14u, 8u}, std::pair{28u, 4u}}) {
    std::vector<RolloutTree> trees;
    for (std::uint32_t i = 0; i < 3; ++i) trees.push_back(full_tree(16, d, l));
    rows.push_back(depth_sweep_row(std::to_string(d) + "x" + std::to_string(l), d, l, trees,
                                   CostParams::decode_only()));
  }
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].config == "7x16");
  CHECK(rows[0].decode_seq == 3ull * 16 * 7 * 16);
  CHECK(rows[0].savings == doctest::Approx(full_tree_savings(2, 7, 16)));
  std::ostringstream os;
  write_depth_sweep_csv(os, rows);
  const std::string s = os.str();
  CHECK(s.rfind("config,depth,segment,decode_tree,decode_seq,savings,tokenps_analog,trajps_analog\n",
                0) == 0);
  CHECK(std::count(s.begin(), s.end(), '\n') == 4);
}
