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

#include "treepo/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <map>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "treepo/error.hpp"

namespace treepo {

using nlohmann::json;

namespace {

constexpr std::uint64_t kTaskStream = 0x7461736bULL;
constexpr std::uint64_t kRolloutStream = 0x726f6c6cULL;
constexpr std::uint64_t kPickStream = 0x7069636bULL;
constexpr std::uint64_t kVoteStream = 0x766f7465ULL;
constexpr std::uint64_t kScalingStream = 0x7363616cULL;

[[noreturn]] void bad_config(const std::string& what) {
  throw Error(ErrorCode::ConfigInvalid, what);
}

}  // namespace

// ---------------------------------------------------------------- config

void RunConfig::validate() const {
  tree.validate();
  branch.validate();
  estimator.validate();
  clip.validate();
  if (oversample_factor < 1) bad_config("oversample_factor must be >= 1");
  if (batch_queries < 1) bad_config("batch_queries must be >= 1");
  if (update_epochs < 1) bad_config("update_epochs must be >= 1");
  if (operand_count < 1 || operand_count > 3) bad_config("operand_count must be in [1, 3]");
  if (static_cast<std::uint32_t>(2 * operand_count + 1) > tree.prompt_budget) {
    bad_config("prompt_budget too small for the operand count");
  }
  if (eval_interval > 0 && (eval.tasks < 1 || eval.rollouts < 1)) {
    bad_config("evaluation needs tasks >= 1 and rollouts >= 1");
  }
  if (policy.context_order < 1 || policy.context_order > 4) {
    bad_config("context_order must be in [1, 4]");
  }
  if (!(policy.temperature > 0.0)) bad_config("sampling temperature must be > 0");
}

std::string_view to_string(PolicyInit p) {
  switch (p) {
    case PolicyInit::Uniform: return "uniform";
    case PolicyInit::FormatPrior: return "format_prior";
    case PolicyInit::Solved: return "solved";
  }
  return "?";
}

PolicyInit parse_policy_init(std::string_view s) {
  for (auto p : {PolicyInit::Uniform, PolicyInit::FormatPrior, PolicyInit::Solved}) {
    if (to_string(p) == s) return p;
  }
  throw Error(ErrorCode::Parse, "unknown policy init '" + std::string(s) + "'");
}

BranchMode parse_branch_mode(std::string_view s) {
  for (auto m : {BranchMode::FixedNary, BranchMode::TransferEven, BranchMode::ProbSoftmax}) {
    if (to_string(m) == s) return m;
  }
  throw Error(ErrorCode::Parse, "unknown branch mode '" + std::string(s) + "'");
}

ProbDirection parse_prob_direction(std::string_view s) {
  for (auto d : {ProbDirection::LowEncourage, ProbDirection::HighEncourage}) {
    if (to_string(d) == s) return d;
  }
  throw Error(ErrorCode::Parse, "unknown branch direction '" + std::string(s) + "'");
}

namespace {

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw Error(ErrorCode::Parse, where + " must be an object");
  for (const auto& item : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw Error(ErrorCode::Parse, "unknown key '" + item.key() + "' in " + where);
    }
  }
}

template <class T>
void read(const json& obj, const char* key, T& field) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    field = it->get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("bad value for '") + key + "': " + e.what());
  }
}

std::string read_string(const json& obj, const char* key, std::string fallback) {
  read(obj, key, fallback);
  return fallback;
}

void read_tree(const json& j, TreeConfig& t) {
  check_keys(j, "tree",
             {"width", "depth", "segment_budget", "branch_base", "init_divergence",
              "fallback_segment_budget", "max_fallback_rounds", "prompt_budget", "repetition"});
  read(j, "width", t.width);
  read(j, "depth", t.depth);
  read(j, "segment_budget", t.segment_budget);
  read(j, "branch_base", t.branch_base);
  read(j, "fallback_segment_budget", t.fallback_segment_budget);
  read(j, "max_fallback_rounds", t.max_fallback_rounds);
  read(j, "prompt_budget", t.prompt_budget);
  if (auto it = j.find("init_divergence"); it != j.end()) {
    if (it->is_number_unsigned()) {
      t.init_divergence = InitDivergence::make_fixed(it->get<std::uint32_t>());
    } else {
      check_keys(*it, "tree.init_divergence", {"kind", "fixed", "lo", "hi"});
      const std::string kind = read_string(*it, "kind", "fixed");
      if (kind == "fixed") {
        t.init_divergence.kind = InitDivergence::Kind::Fixed;
      } else if (kind == "random") {
        t.init_divergence.kind = InitDivergence::Kind::Random;
      } else {
        throw Error(ErrorCode::Parse, "init_divergence.kind must be fixed or random");
      }
      read(*it, "fixed", t.init_divergence.fixed);
      read(*it, "lo", t.init_divergence.lo);
      read(*it, "hi", t.init_divergence.hi);
    }
  }
  if (auto it = j.find("repetition"); it != j.end()) {
    check_keys(*it, "tree.repetition", {"min_len", "min_reps"});
    read(*it, "min_len", t.repetition.min_len);
    read(*it, "min_reps", t.repetition.min_reps);
  }
}

void read_branch(const json& j, BranchPolicy& b) {
  check_keys(j, "branch", {"mode", "direction", "temperature", "schedule"});
  if (j.contains("mode")) b.mode = parse_branch_mode(read_string(j, "mode", ""));
  if (j.contains("direction")) b.direction = parse_prob_direction(read_string(j, "direction", ""));
  read(j, "temperature", b.temperature);
  if (auto it = j.find("schedule"); it != j.end()) {
    if (it->is_null()) {
      b.schedule.reset();
    } else {
      check_keys(*it, "branch.schedule", {"start", "end"});
      TemperatureSchedule s;
      read(*it, "start", s.start);
      read(*it, "end", s.end);
      b.schedule = s;
    }
  }
}

json tree_json(const TreeConfig& t) {
  json init;
  if (t.init_divergence.kind == InitDivergence::Kind::Fixed) {
    init = {{"kind", "fixed"}, {"fixed", t.init_divergence.fixed}};
  } else {
    init = {{"kind", "random"}, {"lo", t.init_divergence.lo}, {"hi", t.init_divergence.hi}};
  }
  return {{"width", t.width},
          {"depth", t.depth},
          {"segment_budget", t.segment_budget},
          {"branch_base", t.branch_base},
          {"init_divergence", init},
          {"fallback_segment_budget", t.fallback_segment_budget},
          {"max_fallback_rounds", t.max_fallback_rounds},
          {"prompt_budget", t.prompt_budget},
          {"repetition", {{"min_len", t.repetition.min_len}, {"min_reps", t.repetition.min_reps}}}};
}

json branch_json(const BranchPolicy& b) {
  json j = {{"mode", to_string(b.mode)},
            {"direction", to_string(b.direction)},
            {"temperature", b.temperature}};
  j["schedule"] = b.schedule ? json{{"start", b.schedule->start}, {"end", b.schedule->end}}
                             : json(nullptr);
  return j;
}

json config_json(const RunConfig& c) {
  return {
      {"seed", c.seed},
      {"iterations", c.iterations},
      {"batch_queries", c.batch_queries},
      {"oversample_factor", c.oversample_factor},
      {"max_resample_rounds", c.max_resample_rounds},
      {"update_epochs", c.update_epochs},
      {"eval_interval", c.eval_interval},
      {"operand_count", c.operand_count},
      {"init", to_string(c.init)},
      {"sequential_rollout", c.sequential_rollout},
      {"exec", c.exec == Exec::Parallel ? "parallel" : "serial"},
      {"tree", tree_json(c.tree)},
      {"branch", branch_json(c.branch)},
      {"estimator",
       {{"variant", to_string(c.estimator.variant)},
        {"include_root", c.estimator.include_root},
        {"eps", c.estimator.eps},
        {"global_norm", c.estimator.global_norm}}},
      {"clip",
       {{"eps_low", c.clip.eps_low},
        {"eps_high", c.clip.eps_high},
        {"learning_rate", c.clip.learning_rate},
        {"warmup_steps", c.clip.warmup_steps}}},
      {"policy",
       {{"vocab_size", c.policy.vocab_size},
        {"context_order", c.policy.context_order},
        {"query_slots", c.policy.query_slots},
        {"temperature", c.policy.temperature}}},
      {"eval",
       {{"tasks", c.eval.tasks},
        {"rollouts", c.eval.rollouts},
        {"vote_samples", c.eval.vote_samples},
        {"vote_repeats", c.eval.vote_repeats},
        {"tree_mode", c.eval.tree_mode},
        {"seed", c.eval.seed}}},
  };
}

}  // namespace

RunConfig run_config_from_json(std::string_view text, const RunConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Parse, e.what());
  }
  RunConfig c = base;
  check_keys(j, "config",
             {"seed", "iterations", "batch_queries", "oversample_factor", "max_resample_rounds",
              "update_epochs", "eval_interval", "operand_count", "init", "sequential_rollout",
              "exec", "tree", "branch", "estimator", "clip", "policy", "eval"});
  read(j, "seed", c.seed);
  read(j, "iterations", c.iterations);
  read(j, "batch_queries", c.batch_queries);
  read(j, "oversample_factor", c.oversample_factor);
  read(j, "max_resample_rounds", c.max_resample_rounds);
  read(j, "update_epochs", c.update_epochs);
  read(j, "eval_interval", c.eval_interval);
  read(j, "operand_count", c.operand_count);
  read(j, "sequential_rollout", c.sequential_rollout);
  if (j.contains("init")) c.init = parse_policy_init(read_string(j, "init", ""));
  if (j.contains("exec")) {
    const std::string e = read_string(j, "exec", "");
    if (e == "serial") c.exec = Exec::Serial;
    else if (e == "parallel") c.exec = Exec::Parallel;
    else throw Error(ErrorCode::Parse, "exec must be serial or parallel");
  }
  if (j.contains("tree")) read_tree(j["tree"], c.tree);
  if (j.contains("branch")) read_branch(j["branch"], c.branch);
  if (auto it = j.find("estimator"); it != j.end()) {
    check_keys(*it, "estimator", {"variant", "include_root", "eps", "global_norm"});
    if (it->contains("variant")) {
      try {
        c.estimator.variant = parse_estimator(read_string(*it, "variant", ""));
      } catch (const Error& e) {
        throw Error(ErrorCode::Parse, e.what());
      }
    }
    read(*it, "include_root", c.estimator.include_root);
    read(*it, "eps", c.estimator.eps);
    read(*it, "global_norm", c.estimator.global_norm);
  }
  if (auto it = j.find("clip"); it != j.end()) {
    check_keys(*it, "clip", {"eps_low", "eps_high", "learning_rate", "warmup_steps"});
    read(*it, "eps_low", c.clip.eps_low);
    read(*it, "eps_high", c.clip.eps_high);
    read(*it, "learning_rate", c.clip.learning_rate);
    read(*it, "warmup_steps", c.clip.warmup_steps);
  }
  if (auto it = j.find("policy"); it != j.end()) {
    check_keys(*it, "policy", {"vocab_size", "context_order", "query_slots", "temperature"});
    read(*it, "vocab_size", c.policy.vocab_size);
    read(*it, "context_order", c.policy.context_order);
    read(*it, "query_slots", c.policy.query_slots);
    read(*it, "temperature", c.policy.temperature);
  }
  if (auto it = j.find("eval"); it != j.end()) {
    check_keys(*it, "eval",
               {"tasks", "rollouts", "vote_samples", "vote_repeats", "tree_mode", "seed"});
    read(*it, "tasks", c.eval.tasks);
    read(*it, "rollouts", c.eval.rollouts);
    read(*it, "vote_samples", c.eval.vote_samples);
    read(*it, "vote_repeats", c.eval.vote_repeats);
    read(*it, "tree_mode", c.eval.tree_mode);
    read(*it, "seed", c.eval.seed);
  }
  c.validate();
  return c;
}

std::string run_config_to_json(const RunConfig& cfg) { return config_json(cfg).dump(2); }

RunConfig load_run_config(const std::string& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(ss.str(), base);
}

// ---------------------------------------------------------------- metrics

void write_metrics_header(std::ostream& out) {
  out << "iteration,mean_reward,eval_accuracy,vote_accuracy,mean_response_length,entropy,"
         "savings,shortfalls,sampled_groups,kept_groups,trained_groups,resample_rounds,loss\n";
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

}  // namespace

void write_metrics_row(std::ostream& out, const MetricsRow& r) {
  out << r.iteration << ',' << fmt(r.mean_reward) << ',' << fmt(r.eval_accuracy) << ','
      << fmt(r.vote_accuracy) << ',' << fmt(r.mean_response_length) << ',' << fmt(r.entropy)
      << ',' << fmt(r.savings) << ',' << r.shortfalls << ',' << r.sampled_groups << ','
      << r.kept_groups << ',' << r.trained_groups << ',' << r.resample_rounds << ','
      << fmt(r.loss) << '\n';
}

void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows) {
  write_metrics_header(out);
  for (const auto& r : rows) write_metrics_row(out, r);
}

// ---------------------------------------------------------------- evaluation

std::vector<QuerySpec> draw_tasks(std::uint64_t seed, std::uint64_t first_id, std::uint32_t n,
                                  int operand_count) {
  std::vector<QuerySpec> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint64_t id = first_id + i;
    Rng rng(derive_seed(seed, kTaskStream, id));
    out.push_back(make_task(rng, id, operand_count));
  }
  return out;
}

std::optional<AnswerValue> majority_vote(std::span<const std::optional<AnswerValue>> answers) {
  std::map<AnswerValue, std::size_t> counts;
  for (const auto& a : answers) {
    if (a) ++counts[*a];
  }
  std::optional<AnswerValue> best;
  std::size_t best_count = 0;
  for (const auto& [value, count] : counts) {
    if (count > best_count ||
        (count == best_count && std::to_string(value) < std::to_string(*best))) {
      best = value;
      best_count = count;
    }
  }
  return best;
}

namespace {

// Extracted answers of a query's rollouts, padded with nullopt up to `slots`.
std::vector<std::optional<AnswerValue>> answer_pool(const RolloutTree& tree, bool all_leaves,
                                                    std::uint32_t slots) {
  std::vector<std::optional<AnswerValue>> pool;
  const auto leaves = all_leaves ? tree.all_leaves() : tree.emitted_leaves();
  for (NodeId leaf : leaves) pool.push_back(extract_answer(tree.response_tokens(leaf)));
  while (pool.size() < slots) pool.emplace_back();
  return pool;
}

double vote_accuracy_of(std::span<const std::optional<AnswerValue>> pool, AnswerValue gold,
                        std::uint32_t vote_samples, std::uint32_t repeats, Rng& rng) {
  if (vote_samples == 0 || vote_samples >= pool.size() || repeats == 0) {
    const auto v = majority_vote(pool);
    return v && *v == gold ? 1.0 : 0.0;
  }
  std::vector<std::optional<AnswerValue>> work(pool.begin(), pool.end());
  double hits = 0.0;
  for (std::uint32_t r = 0; r < repeats; ++r) {
    for (std::uint32_t i = 0; i < vote_samples; ++i) {
      const auto j = static_cast<std::size_t>(uniform_int(rng, i, work.size() - 1));
      std::swap(work[i], work[j]);
    }
    const auto v = majority_vote(std::span(work).first(vote_samples));
    if (v && *v == gold) hits += 1.0;
  }
  return hits / repeats;
}

}  // namespace

EvalResult evaluate(const LogitsTablePolicy& policy, std::span<const QuerySpec> tasks,
                    const EvalOptions& opts) {
  if (opts.eval.rollouts < 1) bad_config("evaluation needs at least one rollout");
  EvalResult res;
  if (tasks.empty()) return res;
  const std::uint32_t n = opts.eval.rollouts;
  std::vector<RolloutTree> trees;
  if (opts.eval.tree_mode) {
    TreeConfig tc = opts.tree;
    tc.width = n;
    trees = run_tree_rollout(tasks, tc, policy, opts.branch, opts.eval.seed, opts.exec);
  } else {
    trees = run_sequential_rollout(tasks, n, opts.tree, policy, opts.eval.seed, opts.exec);
  }
  double pass = 0.0;
  double vote = 0.0;
  for (std::size_t q = 0; q < tasks.size(); ++q) {
    const auto pool = answer_pool(trees[q], !opts.eval.tree_mode, n);
    double correct = 0.0;
    for (const auto& a : pool) {
      if (a && *a == tasks[q].gold_answer) correct += 1.0;
    }
    pass += correct / static_cast<double>(pool.size());
    Rng rng(derive_seed(opts.eval.seed, kVoteStream, tasks[q].id));
    vote += vote_accuracy_of(pool, tasks[q].gold_answer, opts.eval.vote_samples,
                             opts.eval.vote_repeats, rng);
  }
  res.pass_rate = pass / static_cast<double>(tasks.size());
  res.vote_accuracy = vote / static_cast<double>(tasks.size());
  return res;
}

// ---------------------------------------------------------------- training

namespace {

struct GroupStats {
  double reward_sum = 0.0;
  double length_sum = 0.0;
  std::size_t trajectories = 0;
};

// Response logprobs along the root..leaf path.
std::vector<double> path_logprobs(const RolloutTree& tree, NodeId leaf) {
  std::vector<double> out;
  for (NodeId id : tree.node_path(leaf)) {
    const auto& lp = tree.node(id).segment.logprobs;
    out.insert(out.end(), lp.begin(), lp.end());
  }
  return out;
}

void append_group(TokenBatch& batch, const LogitsTablePolicy& policy, const RewardedGroup& group,
                  const AdvantageReport& report) {
  const RolloutTree& tree = group.tree.get();
  for (const auto& leaf : report.leaves) {
    const TokenSeq response = tree.response_tokens(leaf.leaf);
    if (response.empty()) continue;
    const auto rows = context_rows(policy, tree.query().prompt_tokens, response);
    const auto old_lp = path_logprobs(tree, leaf.leaf);
    batch.add_trajectory(rows, response, old_lp, leaf.advantage);
  }
}

std::vector<std::size_t> pick_subset(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, i, n - 1));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

TrainResult train(const RunConfig& cfg, const TrainHooks& hooks,
                  std::optional<LogitsTablePolicy> initial) {
  cfg.validate();
  LogitsTablePolicy policy = initial ? std::move(*initial) : LogitsTablePolicy(cfg.policy, cfg.init);
  const RewardFn reward_fn = hooks.reward ? hooks.reward : [](const Trajectory& t,
                                                              const QuerySpec& q) {
    return reward(t, q.gold_answer);
  };

  const auto eval_tasks =
      draw_tasks(cfg.eval.seed, 0, cfg.eval_interval > 0 ? cfg.eval.tasks : 0, cfg.operand_count);
  EvalOptions eval_opts{cfg.eval, cfg.tree, cfg.branch, cfg.exec};

  TrainManifest manifest;
  std::vector<MetricsRow> rows;
  const std::uint32_t per_round = cfg.oversample_factor * cfg.batch_queries;
  const std::uint32_t rounds_max = 1 + cfg.max_resample_rounds;

  for (std::uint32_t it = 0; it < cfg.iterations; ++it) {
    const double progress =
        cfg.iterations > 1 ? static_cast<double>(it) / (cfg.iterations - 1) : 0.0;
    const BranchPolicy branch = cfg.branch.at_progress(progress);

    // The rollouts sample from the policy as it stands now; it is the
    // snapshot the old logprobs refer to.
    std::vector<std::vector<RolloutTree>> round_trees;
    round_trees.reserve(rounds_max);
    std::vector<RewardedGroup> kept;
    GroupStats stats;
    MetricsRow row;
    row.iteration = it;
    ComputeLedger tree_ledger;
    ComputeLedger seq_ledger;

    for (std::uint32_t r = 0; r < rounds_max; ++r) {
      if (r > 0 && kept.size() >= cfg.batch_queries) break;
      if (r > 0) ++row.resample_rounds;
      const std::uint64_t stream = static_cast<std::uint64_t>(it) * rounds_max + r;
      const auto tasks = draw_tasks(cfg.seed, stream * per_round, per_round, cfg.operand_count);
      const std::uint64_t rollout_seed = derive_seed(cfg.seed, kRolloutStream, stream);
      round_trees.push_back(
          cfg.sequential_rollout
              ? run_sequential_rollout(tasks, cfg.tree.width, cfg.tree, policy, rollout_seed,
                                       cfg.exec)
              : run_tree_rollout(tasks, cfg.tree, policy, branch, rollout_seed, cfg.exec));
      const auto& trees = round_trees.back();
      for (const auto& tree : trees) {
        RewardedGroup g{std::cref(tree), {}};
        for (const auto& traj : tree.leaf_trajectories()) {
          const double rw = reward_fn(traj, tree.query());
          g.rewards.push_back(rw);
          stats.reward_sum += rw;
          stats.length_sum += static_cast<double>(traj.tokens.size());
          ++stats.trajectories;
        }
        ++row.sampled_groups;
        if (tree.meta().shortfall > 0) ++row.shortfalls;
        tree_ledger += ledger_tree(tree);
        seq_ledger += ledger_sequential(tree);
        if (is_mixed(g)) kept.push_back(std::move(g));
      }
      if (hooks.on_trees) hooks.on_trees(it, trees);
    }
    row.kept_groups = static_cast<std::uint32_t>(kept.size());

    if (kept.size() > cfg.batch_queries) {
      Rng pick(derive_seed(cfg.seed, kPickStream, it));
      const auto idx = pick_subset(kept.size(), cfg.batch_queries, pick);
      std::vector<RewardedGroup> chosen;
      chosen.reserve(idx.size());
      for (std::size_t i : idx) chosen.push_back(std::move(kept[i]));
      kept = std::move(chosen);
    } else if (kept.empty()) {
      manifest.skipped.push_back(it);
    } else if (kept.size() < cfg.batch_queries) {
      manifest.truncated.push_back({it, static_cast<std::uint32_t>(kept.size())});
    }
    row.trained_groups = static_cast<std::uint32_t>(kept.size());

    row.mean_reward = stats.trajectories ? stats.reward_sum / stats.trajectories : 0.0;
    row.mean_response_length = stats.trajectories ? stats.length_sum / stats.trajectories : 0.0;
    row.savings = seq_ledger.decode_tokens > 0 ? savings(tree_ledger, seq_ledger) : 0.0;

    TokenBatch batch;
    if (!kept.empty()) {
      if (hooks.on_batch) hooks.on_batch(it, kept);
      const auto reports = estimate_batch(kept, cfg.estimator, cfg.exec);
      for (std::size_t g = 0; g < kept.size(); ++g) append_group(batch, policy, kept[g], reports[g]);
    }
    if (!batch.empty()) {
      row.entropy = mean_visited_entropy(policy, batch.rows);
      row.loss = clipped_surrogate(batch, policy, cfg.clip, cfg.exec);
      for (std::uint32_t e = 0; e < cfg.update_epochs; ++e) {
        const auto grad = surrogate_gradient(batch, policy, cfg.clip, cfg.exec);
        apply_update(policy, grad, cfg.clip, ++manifest.updates);
      }
    } else {
      std::vector<std::uint32_t> visited;
      for (const auto& trees : round_trees) {
        for (const auto& tree : trees) {
          for (NodeId leaf : tree.emitted_leaves()) {
            const auto rws = context_rows(policy, tree.query().prompt_tokens,
                                          tree.response_tokens(leaf));
            visited.insert(visited.end(), rws.begin(), rws.end());
          }
        }
      }
      row.entropy = mean_visited_entropy(policy, visited);
    }

    const bool eval_now =
        cfg.eval_interval > 0 && ((it + 1) % cfg.eval_interval == 0 || it + 1 == cfg.iterations);
    if (eval_now) {
      const EvalResult ev = evaluate(policy, eval_tasks, eval_opts);
      row.eval_accuracy = ev.pass_rate;
      row.vote_accuracy = ev.vote_accuracy;
      if (hooks.on_checkpoint) hooks.on_checkpoint(it, policy);
    }
    if (hooks.on_row) hooks.on_row(row);
    rows.push_back(row);
  }
  return TrainResult{std::move(rows), std::move(policy), std::move(manifest)};
}

std::string manifest_json(const RunConfig& cfg, const TrainResult& result) {
  json truncated = json::array();
  for (const auto& t : result.manifest.truncated) {
    truncated.push_back({{"iteration", t.iteration}, {"kept", t.kept}});
  }
  json j = {
      {"config", config_json(cfg)},
      {"iterations_run", result.rows.size()},
      {"updates", result.manifest.updates},
      {"truncated_batches", truncated},
      {"skipped_iterations", result.manifest.skipped},
      {"policy_parameters", result.policy.parameter_count()},
  };
  if (!result.rows.empty()) {
    const auto& last = result.rows.back();
    json fin = {{"iteration", last.iteration},
                {"mean_reward", last.mean_reward},
                {"mean_response_length", last.mean_response_length},
                {"entropy", last.entropy},
                {"savings", last.savings}};
    if (last.eval_accuracy) fin["eval_accuracy"] = *last.eval_accuracy;
    if (last.vote_accuracy) fin["vote_accuracy"] = *last.vote_accuracy;
    j["final"] = fin;
  }
  return j.dump(2);
}

// ---------------------------------------------------------------- sweeps

double nominal_tree_compute(std::uint32_t dv, std::uint32_t w, const TreeConfig& base,
                            std::uint32_t prompt_len) {
  double decode = 0.0;
  double paths = 1.0;
  for (std::uint32_t k = 1; k <= base.depth; ++k) {
    paths = std::min(paths * dv, static_cast<double>(w));
    decode += paths * base.segment_budget;
  }
  return static_cast<double>(prompt_len) * std::min(dv, w) + decode;
}

std::vector<ScalingRow> scaling_sweep(const LogitsTablePolicy& policy, const ScalingConfig& cfg) {
  for (std::size_t i = 1; i < cfg.budgets.size(); ++i) {
    if (cfg.budgets[i] < cfg.budgets[i - 1]) bad_config("scaling budgets must be ascending");
  }
  const auto prompt_len = static_cast<std::uint32_t>(2 * cfg.operand_count + 1);
  std::vector<ScalingRow> rows;
  for (std::uint32_t dv : cfg.divergences) {
    if (dv < 1) bad_config("divergence must be >= 1");
    std::vector<std::uint32_t> widths;
    for (std::uint32_t w = dv; w <= cfg.max_width; w *= 2) widths.push_back(w);
    std::map<std::uint32_t, ScalingRow> cache;
    for (double budget : cfg.budgets) {
      std::optional<std::uint32_t> pick;
      for (std::uint32_t w : widths) {
        if (nominal_tree_compute(dv, w, cfg.tree, prompt_len) <= budget) pick = w;
      }
      if (!pick) continue;
      auto it = cache.find(*pick);
      if (it == cache.end()) {
        TreeConfig tc = cfg.tree;
        tc.width = *pick;
        tc.branch_base = dv;
        tc.init_divergence = InitDivergence::make_fixed(dv);
        ScalingRow row;
        row.divergence = dv;
        row.width = *pick;
        row.compute = nominal_tree_compute(dv, *pick, cfg.tree, prompt_len);
        double acc = 0.0;
        double spent = 0.0;
        for (std::uint32_t rep = 0; rep < cfg.repeats; ++rep) {
          const auto tasks = draw_tasks(derive_seed(cfg.seed, kScalingStream),
                                        static_cast<std::uint64_t>(rep) * cfg.tasks, cfg.tasks,
                                        cfg.operand_count);
          const auto trees = run_tree_rollout(tasks, tc, policy, BranchPolicy{},
                                              derive_seed(cfg.seed, dv * 4096ULL + *pick, rep),
                                              cfg.exec);
          for (std::size_t q = 0; q < tasks.size(); ++q) {
            const auto pool = answer_pool(trees[q], false, 0);
            const auto v = majority_vote(pool);
            if (v && *v == tasks[q].gold_answer) acc += 1.0;
            spent += weighted_cost(ledger_tree(trees[q]), CostParams{});
          }
        }
        row.trials = static_cast<std::uint64_t>(cfg.repeats) * cfg.tasks;
        if (row.trials > 0) {
          row.accuracy = acc / static_cast<double>(row.trials);
          row.measured = spent / static_cast<double>(row.trials);
        }
        it = cache.emplace(*pick, row).first;
      }
      ScalingRow row = it->second;
      row.budget = budget;
      rows.push_back(row);
    }
  }
  return rows;
}

void write_scaling_csv(std::ostream& out, std::span<const ScalingRow> rows) {
  out << "divergence,budget,width,compute,measured_compute,accuracy,trials\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%u,%.1f,%u,%.1f,%.3f,%.6f,%llu\n", r.divergence, r.budget,
                  r.width, r.compute, r.measured, r.accuracy,
                  static_cast<unsigned long long>(r.trials));
    out << buf;
  }
}

void check_constant_budget(std::span<const std::pair<std::uint32_t, std::uint32_t>> pairs) {
  for (const auto& [d, l] : pairs) {
    if (d < 1 || l < 1) bad_config("depth and segment must be >= 1");
    if (d * l != pairs.front().first * pairs.front().second) {
      bad_config("pair " + std::to_string(d) + "x" + std::to_string(l) +
                 " breaks the constant response budget " +
                 std::to_string(pairs.front().first * pairs.front().second));
    }
  }
}

std::vector<DepthSegmentRun> depth_segment_sweep(
    const RunConfig& tmpl, std::span<const std::pair<std::uint32_t, std::uint32_t>> pairs) {
  check_constant_budget(pairs);
  std::vector<DepthSegmentRun> runs;
  for (const auto& [d, l] : pairs) {
    RunConfig c = tmpl;
    c.tree.depth = d;
    c.tree.segment_budget = l;
    runs.push_back({d, l, train(c).rows});
  }
  return runs;
}

std::vector<std::pair<std::string, BranchPolicy>> branching_variants() {
  BranchPolicy even;
  even.mode = BranchMode::TransferEven;
  BranchPolicy low;
  low.mode = BranchMode::ProbSoftmax;
  low.direction = ProbDirection::LowEncourage;
  low.temperature = 2.0;
  BranchPolicy high = low;
  high.direction = ProbDirection::HighEncourage;
  BranchPolicy scheduled = low;
  scheduled.schedule = TemperatureSchedule{5.0, 1.0};
  return {{"even", even},
          {"low_encourage", low},
          {"high_encourage", high},
          {"low_encourage_scheduled", scheduled}};
}

std::vector<BranchingRun> branching_sweep(const RunConfig& tmpl) {
  std::vector<BranchingRun> runs;
  for (const auto& [name, branch] : branching_variants()) {
    RunConfig c = tmpl;
    c.branch = branch;
    runs.push_back({name, branch, train(c).rows});
  }
  return runs;
}

void write_series_csv(std::ostream& out,
                      std::span<const std::pair<std::string, std::vector<MetricsRow>>> series) {
  std::ostringstream header;
  write_metrics_header(header);
  out << "series," << header.str();
  for (const auto& [label, rows] : series) {
    for (const auto& r : rows) {
      out << label << ',';
      write_metrics_row(out, r);
    }
  }
}

}  // namespace treepo
