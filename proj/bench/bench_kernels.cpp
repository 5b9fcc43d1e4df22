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

// Serial reference against OpenMP for each parallel kernel. Every pair is
// also checked for identical output.
//
// usage: treepo_bench [queries=64] [repeats=3] [threads=0 (runtime default)]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "treepo/advantage.hpp"
#include "treepo/engine.hpp"
#include "treepo/harness.hpp"
#include "treepo/objective.hpp"
#include "treepo/parallel.hpp"
#include "treepo/policy_env.hpp"

using namespace treepo;

namespace {

double best_of(int repeats, const std::function<void()>& f) {
  double best = 1e300;
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best,
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

void row(const char* kernel, double serial, double parallel, bool same) {
  std::printf("%-10s %12.4f %12.4f %8.2fx  %s\n", kernel, serial * 1e3, parallel * 1e3,
              parallel > 0.0 ? serial / parallel : 0.0, same ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  const auto queries = static_cast<std::uint32_t>(argc > 1 ? std::atoi(argv[1]) : 64);
  const int repeats = argc > 2 ? std::atoi(argv[2]) : 3;
  if (argc > 3 && std::atoi(argv[3]) > 0) set_threads(std::atoi(argv[3]));

  const LogitsTablePolicy policy({}, PolicyInit::FormatPrior);
  const TreeConfig cfg;
  const BranchPolicy branch;
  const auto tasks = draw_tasks(1, 0, queries, 2);

  std::printf("threads %d, queries %u, best of %d\n", max_threads(), queries, repeats);
  std::printf("%-10s %12s %12s %9s\n", "kernel", "serial ms", "omp ms", "speedup");

  bool ok = true;

  std::vector<RolloutTree> ts, tp;
  const double r_s = best_of(repeats, [&] { ts = run_tree_rollout(tasks, cfg, policy, branch, 7, Exec::Serial); });
  const double r_p = best_of(repeats, [&] { tp = run_tree_rollout(tasks, cfg, policy, branch, 7, Exec::Parallel); });
  bool same = ts.size() == tp.size();
  for (std::size_t i = 0; same && i < ts.size(); ++i) same = ts[i].to_jsonl() == tp[i].to_jsonl();
  row("rollout", r_s, r_p, same);
  ok = ok && same;

  // advantage: arbitrary mixed rewards over the sampled trees
  std::vector<RewardedGroup> groups;
  for (const auto& t : ts) {
    RewardedGroup g{t, {}};
    for (std::size_t i = 0; i < t.emitted_count(); ++i) g.rewards.push_back(i % 3 == 0 ? 1.0 : 0.0);
    if (is_mixed(g)) groups.push_back(std::move(g));
  }
  EstimatorOptions eo;
  std::vector<AdvantageReport> as, ap;
  const double a_s = best_of(repeats, [&] { as = estimate_batch(groups, eo, Exec::Serial); });
  const double a_p = best_of(repeats, [&] { ap = estimate_batch(groups, eo, Exec::Parallel); });
  same = as.size() == ap.size();
  for (std::size_t i = 0; same && i < as.size(); ++i) same = as[i].values() == ap[i].values();
  row("advantage", a_s, a_p, same);
  ok = ok && same;

  TokenBatch batch;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const RolloutTree& t = groups[g].tree.get();
    const auto leaves = t.emitted_leaves();
    const auto vals = as[g].values();
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      const TokenSeq resp = t.response_tokens(leaves[i]);
      if (resp.empty()) continue;
      const auto rows = context_rows(policy, t.query().prompt_tokens, resp);
      std::vector<double> old;
      for (NodeId id : t.node_path(leaves[i])) {
        const auto& lp = t.node(id).segment.logprobs;
        old.insert(old.end(), lp.begin(), lp.end());
      }
      batch.add_trajectory(rows, resp, old, vals[i]);
    }
  }
  const ClipConfig clip;
  std::vector<double> gs, gp;
  if (!batch.empty()) {
    const double g_s = best_of(repeats, [&] { gs = surrogate_gradient(batch, policy, clip, Exec::Serial); });
    const double g_p = best_of(repeats, [&] { gp = surrogate_gradient(batch, policy, clip, Exec::Parallel); });
    same = gs == gp;
    row("gradient", g_s, g_p, same);
    ok = ok && same;
  }

  EvalOptions ev;
  ev.tree = cfg;
  EvalResult es, ep;
  const double e_s = best_of(repeats, [&] {
    ev.exec = Exec::Serial;
    es = evaluate(policy, tasks, ev);
  });
  const double e_p = best_of(repeats, [&] {
    ev.exec = Exec::Parallel;
    ep = evaluate(policy, tasks, ev);
  });
  same = es.pass_rate == ep.pass_rate && es.vote_accuracy == ep.vote_accuracy;
  row("eval", e_s, e_p, same);
  ok = ok && same;

  return ok ? 0 : 1;
}
