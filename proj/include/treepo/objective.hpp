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

// Token-level clipped surrogate over the logits table:
//
//   L = -(1/T) sum_t min(r_t A_t, clip(r_t, 1 - eps_low, 1 + eps_high) A_t)
//   r_t = exp(logp_new(token_t | row_t) - logp_old_t)
//
// with T the number of tokens in the batch. The gradient w.r.t. row logits is
// -(A_t r_t / T) (onehot(token_t) - softmax(row_t)) for every token whose min
// picks the unclipped branch, and zero otherwise.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "treepo/core.hpp"
#include "treepo/parallel.hpp"
#include "treepo/policy_env.hpp"

namespace treepo {

struct ClipConfig {
  double eps_low = 0.2;
  double eps_high = 0.28;
  double learning_rate = 1e-3;
  std::uint32_t warmup_steps = 10;  // 0 disables warm-up

  /// lr * min(1, step / warmup_steps) for the 1-based update `step`.
  double effective_lr(std::uint64_t step) const;
  void validate() const;
};

/// Flat token batch. Token t of trajectory i sits in [offsets[i], offsets[i+1]).
struct TokenBatch {
  std::vector<std::uint32_t> rows;        // context row of each token
  std::vector<TokenId> tokens;
  std::vector<double> old_logprobs;
  std::vector<double> advantages;         // per token, broadcast from its trajectory
  std::vector<std::size_t> offsets{0};

  std::size_t token_count() const { return tokens.size(); }
  std::size_t trajectory_count() const { return offsets.size() - 1; }
  bool empty() const { return tokens.empty(); }

  /// Appends one trajectory. Throws ShapeMismatch on ragged inputs and
  /// EmptyBatch on non-finite values.
  void add_trajectory(std::span<const std::uint32_t> ctx_rows, std::span<const TokenId> toks,
                      std::span<const double> old_lps, double advantage);
};

/// Context rows and tokens of a response continuing `prompt`.
std::vector<std::uint32_t> context_rows(const LogitsTablePolicy& policy, TokenView prompt,
                                        TokenView response);

/// exp(new_lp - old_lp).
double token_ratio(double new_lp, double old_lp);

/// Per-token objective term min(r A, clip(r) A) and whether the clip binds
/// (the min selects the constant branch).
struct TokenTerm {
  double value = 0.0;
  double ratio = 1.0;
  bool clipped = false;
};
TokenTerm token_term(double ratio, double advantage, const ClipConfig& cfg);

double clipped_surrogate(const TokenBatch& batch, const LogitsTablePolicy& policy,
                         const ClipConfig& cfg, Exec exec = Exec::Serial);

/// Dense gradient, one entry per table parameter. The parallel path groups
/// tokens by row and keeps each row's accumulation in batch order, so both
/// paths agree bit for bit.
std::vector<double> surrogate_gradient(const TokenBatch& batch, const LogitsTablePolicy& policy,
                                       const ClipConfig& cfg, Exec exec = Exec::Serial);

/// table -= effective_lr(step) * gradient.
void apply_update(LogitsTablePolicy& policy, std::span<const double> gradient,
                  const ClipConfig& cfg, std::uint64_t step);

/// Fraction of tokens whose clip binds.
double clip_fraction(const TokenBatch& batch, const LogitsTablePolicy& policy,
                     const ClipConfig& cfg);

/// Mean Shannon entropy (nats) of the distinct rows visited by the batch.
double mean_visited_entropy(const LogitsTablePolicy& policy, std::span<const std::uint32_t> rows);

}  // namespace treepo
