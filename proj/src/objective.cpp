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

#include "treepo/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "treepo/error.hpp"
#include "treepo/task.hpp"

namespace treepo {

double ClipConfig::effective_lr(std::uint64_t step) const {
  if (warmup_steps == 0 || step >= warmup_steps) return learning_rate;
  return learning_rate * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

void ClipConfig::validate() const {
  if (!(eps_low > 0.0 && eps_low < 1.0)) {
    throw Error(ErrorCode::ConfigInvalid, "eps_low must lie in (0, 1)");
  }
  if (!(eps_high >= eps_low)) {
    throw Error(ErrorCode::ConfigInvalid, "eps_high must be >= eps_low");
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorCode::ConfigInvalid, "learning_rate must be finite and non-negative");
  }
}

void TokenBatch::add_trajectory(std::span<const std::uint32_t> ctx_rows,
                                std::span<const TokenId> toks, std::span<const double> old_lps,
                                double advantage) {
  if (ctx_rows.size() != toks.size() || old_lps.size() != toks.size()) {
    throw Error(ErrorCode::ShapeMismatch, "trajectory rows/tokens/logprobs differ in length");
  }
  if (!std::isfinite(advantage)) {
    throw Error(ErrorCode::EmptyBatch, "non-finite advantage");
  }
  for (double lp : old_lps) {
    if (!std::isfinite(lp)) throw Error(ErrorCode::EmptyBatch, "non-finite old logprob");
  }
  rows.insert(rows.end(), ctx_rows.begin(), ctx_rows.end());
  tokens.insert(tokens.end(), toks.begin(), toks.end());
  old_logprobs.insert(old_logprobs.end(), old_lps.begin(), old_lps.end());
  advantages.insert(advantages.end(), toks.size(), advantage);
  offsets.push_back(tokens.size());
}

std::vector<std::uint32_t> context_rows(const LogitsTablePolicy& policy, TokenView prompt,
                                        TokenView response) {
  TokenSeq full(prompt.begin(), prompt.end());
  full.insert(full.end(), response.begin(), response.end());
  const std::uint64_t key = policy.shape().query_slots == 0 ? 0 : operand_key(prompt);
  std::vector<std::uint32_t> out;
  out.reserve(response.size());
  for (std::size_t t = 0; t < response.size(); ++t) {
    out.push_back(static_cast<std::uint32_t>(
        policy.row_index(key, TokenView(full.data(), prompt.size() + t))));
  }
  return out;
}

double token_ratio(double new_lp, double old_lp) { return std::exp(new_lp - old_lp); }

TokenTerm token_term(double ratio, double advantage, const ClipConfig& cfg) {
  const double clipped_ratio = std::clamp(ratio, 1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
  const double raw = ratio * advantage;
  const double flat = clipped_ratio * advantage;
  TokenTerm t;
  t.ratio = ratio;
  if (flat < raw) {
    t.value = flat;
    t.clipped = true;
  } else {
    t.value = raw;
  }
  return t;
}

namespace {

void check_batch(const TokenBatch& batch, const LogitsTablePolicy& policy) {
  if (batch.empty()) throw Error(ErrorCode::EmptyBatch, "token batch is empty");
  const std::size_t n = batch.tokens.size();
  if (batch.rows.size() != n || batch.old_logprobs.size() != n || batch.advantages.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "token batch columns differ in length");
  }
  for (std::size_t t = 0; t < n; ++t) {
    if (batch.rows[t] >= policy.row_count() ||
        to_index(batch.tokens[t]) >= policy.vocab_size()) {
      throw Error(ErrorCode::ShapeMismatch, "token batch does not fit the policy table");
    }
  }
}

// Token indices grouped by row, batch order kept inside each group.
struct RowGroups {
  std::vector<std::size_t> order;
  std::vector<std::size_t> starts;  // group g is order[starts[g] .. starts[g+1])
};

RowGroups group_by_row(const TokenBatch& batch) {
  RowGroups g;
  g.order.resize(batch.tokens.size());
  std::iota(g.order.begin(), g.order.end(), std::size_t{0});
  std::stable_sort(g.order.begin(), g.order.end(), [&](std::size_t a, std::size_t b) {
    return batch.rows[a] < batch.rows[b];
  });
  for (std::size_t i = 0; i < g.order.size(); ++i) {
    if (i == 0 || batch.rows[g.order[i]] != batch.rows[g.order[i - 1]]) g.starts.push_back(i);
  }
  g.starts.push_back(g.order.size());
  return g;
}

// Adds token t's contribution to the gradient row `grow`, given the row's log-softmax.
void accumulate_token(const TokenBatch& batch, std::size_t t, std::span<const double> lsm,
                      double inv_count, const ClipConfig& cfg, double* grow) {
  const std::uint32_t tok = to_index(batch.tokens[t]);
  const double r = token_ratio(lsm[tok], batch.old_logprobs[t]);
  const TokenTerm term = token_term(r, batch.advantages[t], cfg);
  if (term.clipped) return;
  const double coef = -batch.advantages[t] * r * inv_count;
  for (std::size_t v = 0; v < lsm.size(); ++v) {
    const double onehot = v == tok ? 1.0 : 0.0;
    grow[v] += coef * (onehot - std::exp(lsm[v]));
  }
}

}  // namespace

double clipped_surrogate(const TokenBatch& batch, const LogitsTablePolicy& policy,
                         const ClipConfig& cfg, Exec exec) {
  check_batch(batch, policy);
  const std::size_t n = batch.tokens.size();
  const std::size_t V = policy.vocab_size();
  std::vector<double> terms(n);
  const auto body = [&](std::size_t t, std::vector<double>& lsm) {
    policy.log_softmax(batch.rows[t], lsm);
    const double r = token_ratio(lsm[to_index(batch.tokens[t])], batch.old_logprobs[t]);
    terms[t] = token_term(r, batch.advantages[t], cfg).value;
  };
  if (exec == Exec::Parallel) {
#pragma omp parallel
    {
      std::vector<double> lsm(V);
#pragma omp for schedule(static)
      for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(n); ++t) {
        body(static_cast<std::size_t>(t), lsm);
      }
    }
  } else {
    std::vector<double> lsm(V);
    for (std::size_t t = 0; t < n; ++t) body(t, lsm);
  }
  double sum = 0.0;
  for (double v : terms) sum += v;
  return -sum / static_cast<double>(n);
}

std::vector<double> surrogate_gradient(const TokenBatch& batch, const LogitsTablePolicy& policy,
                                       const ClipConfig& cfg, Exec exec) {
  check_batch(batch, policy);
  const std::size_t V = policy.vocab_size();
  const double inv_count = 1.0 / static_cast<double>(batch.token_count());
  std::vector<double> grad(policy.parameter_count(), 0.0);

  if (exec == Exec::Serial) {
    std::vector<double> lsm(V);
    for (std::size_t t = 0; t < batch.token_count(); ++t) {
      const std::size_t r = batch.rows[t];
      policy.log_softmax(r, lsm);
      accumulate_token(batch, t, lsm, inv_count, cfg, grad.data() + r * V);
    }
    return grad;
  }

  const RowGroups groups = group_by_row(batch);
  const auto n_groups = static_cast<std::ptrdiff_t>(groups.starts.size() - 1);
#pragma omp parallel
  {
    std::vector<double> lsm(V);
#pragma omp for schedule(dynamic, 16)
    for (std::ptrdiff_t g = 0; g < n_groups; ++g) {
      const std::size_t lo = groups.starts[static_cast<std::size_t>(g)];
      const std::size_t hi = groups.starts[static_cast<std::size_t>(g) + 1];
      const std::size_t r = batch.rows[groups.order[lo]];
      policy.log_softmax(r, lsm);
      for (std::size_t i = lo; i < hi; ++i) {
        accumulate_token(batch, groups.order[i], lsm, inv_count, cfg, grad.data() + r * V);
      }
    }
  }
  return grad;
}

void apply_update(LogitsTablePolicy& policy, std::span<const double> gradient,
                  const ClipConfig& cfg, std::uint64_t step) {
  auto table = policy.table();
  if (gradient.size() != table.size()) {
    throw Error(ErrorCode::ShapeMismatch, "gradient has " + std::to_string(gradient.size()) +
                                              " entries, table has " +
                                              std::to_string(table.size()));
  }
  const double lr = cfg.effective_lr(step);
  if (lr == 0.0) return;
  for (std::size_t i = 0; i < table.size(); ++i) table[i] -= lr * gradient[i];
}

double clip_fraction(const TokenBatch& batch, const LogitsTablePolicy& policy,
                     const ClipConfig& cfg) {
  check_batch(batch, policy);
  std::vector<double> lsm(policy.vocab_size());
  std::size_t clipped = 0;
  for (std::size_t t = 0; t < batch.token_count(); ++t) {
    policy.log_softmax(batch.rows[t], lsm);
    const double r = token_ratio(lsm[to_index(batch.tokens[t])], batch.old_logprobs[t]);
    if (token_term(r, batch.advantages[t], cfg).clipped) ++clipped;
  }
  return static_cast<double>(clipped) / static_cast<double>(batch.token_count());
}

double mean_visited_entropy(const LogitsTablePolicy& policy, std::span<const std::uint32_t> rows) {
  std::vector<std::uint32_t> distinct(rows.begin(), rows.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.empty()) return 0.0;
  double sum = 0.0;
  for (std::uint32_t r : distinct) sum += policy.entropy(r);
  return sum / static_cast<double>(distinct.size());
}

}  // namespace treepo
