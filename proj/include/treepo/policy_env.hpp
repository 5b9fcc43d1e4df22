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

// The toy verifiable environment (sum of digits mod 10) and the logits-table
// policy standing in for the language model.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "treepo/backend.hpp"
#include "treepo/core.hpp"
#include "treepo/task.hpp"

namespace treepo {

/// Draws `operand_count` uniform digits.
QuerySpec make_task(Rng& rng, std::uint64_t id, int operand_count = 2);

/// 1 iff the trajectory's extracted answer equals `gold`.
double reward(const Trajectory& traj, AnswerValue gold);

enum class PolicyInit {
  Uniform,      // all logits zero
  FormatPrior,  // knows the answer format but not the arithmetic (~10% accuracy)
  Solved,       // hand-built table answering every task correctly
};

struct PolicyShape {
  std::uint32_t vocab_size = Vocabulary::kDefaultSize;
  std::uint32_t context_order = 2;  // k previous tokens
  /// Number of operand-key slots the table is conditioned on; 0 disables
  /// query conditioning (rows depend on the token window only).
  std::uint64_t query_slots = 100;
  double temperature = 0.8;  // sampling only; logprobs are always at T = 1
};

/// Context-indexed logits table. Row = (operand key of the prompt, last k
/// token ids packed base |V|); both indices are exact, no collisions.
class LogitsTablePolicy final : public SamplingBackend {
 public:
  explicit LogitsTablePolicy(PolicyShape shape = {}, PolicyInit init = PolicyInit::Uniform);

  const PolicyShape& shape() const { return shape_; }
  std::uint32_t vocab_size() const { return shape_.vocab_size; }
  std::size_t row_count() const { return rows_; }
  std::size_t parameter_count() const { return table_.size(); }

  std::span<const double> table() const { return table_; }
  std::span<double> table() { return table_; }
  std::span<const double> row(std::size_t r) const {
    return {table_.data() + r * shape_.vocab_size, shape_.vocab_size};
  }
  std::span<double> row(std::size_t r) {
    return {table_.data() + r * shape_.vocab_size, shape_.vocab_size};
  }

  void set_temperature(double t);

  /// Row index of the context that predicts the token following `prefix`.
  std::size_t row_index(TokenView prefix) const;
  std::size_t row_index(std::uint64_t query_key, TokenView window_source) const;

  /// Exact log-softmax of row `r` into `out` (size |V|).
  void log_softmax(std::size_t r, std::span<double> out) const;
  double logprob(TokenView prefix, TokenId token) const;
  double entropy(std::size_t r) const;

  Segment sample_segment(TokenView prefix, std::uint32_t budget, Rng& rng) const override;

  /// Binary checkpoint: header (magic, version, vocab, k, slots, rows,
  /// temperature) then the raw little-endian table.
  void save(std::ostream& out) const;
  static LogitsTablePolicy load(std::istream& in);
  void save_file(const std::string& path) const;
  static LogitsTablePolicy load_file(const std::string& path);

  bool operator==(const LogitsTablePolicy& other) const;

 private:
  void init_format_prior();
  void init_solved();

  PolicyShape shape_;
  std::size_t window_rows_ = 0;  // |V|^k
  std::size_t rows_ = 0;
  std::vector<double> table_;
};

}  // namespace treepo
