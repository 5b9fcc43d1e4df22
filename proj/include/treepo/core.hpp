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

// Token-level primitives shared by every other module: token and node ids,
// the toy vocabulary layout, segments, trajectories, answer extraction and
// repetition detection.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace treepo {

enum class TokenId : std::uint16_t {};
enum class NodeId : std::uint32_t {};

constexpr std::uint32_t to_index(NodeId id) { return static_cast<std::uint32_t>(id); }
constexpr std::uint32_t to_index(TokenId id) { return static_cast<std::uint32_t>(id); }

using TokenSeq = std::vector<TokenId>;
using TokenView = std::span<const TokenId>;
using AnswerValue = std::int64_t;

/// Fixed layout of the toy vocabulary. Digits occupy ids 0-9 so that a digit
/// token's id is its value; control tokens follow; every id from
/// `kFirstFiller` up to `size - 1` is a filler token with no meaning.
struct Vocabulary {
  static constexpr TokenId kBos{10};
  static constexpr TokenId kEos{11};
  static constexpr TokenId kAnsOpen{12};
  static constexpr TokenId kAnsClose{13};
  static constexpr TokenId kPlus{14};
  static constexpr TokenId kEquals{15};
  static constexpr std::uint32_t kFirstFiller = 16;
  static constexpr std::uint32_t kMinSize = 16;
  static constexpr std::uint32_t kDefaultSize = 24;

  std::uint32_t size = kDefaultSize;

  /// Throws Error(ConfigInvalid) when `n < kMinSize`.
  static Vocabulary with_size(std::uint32_t n);

  bool contains(TokenId t) const { return to_index(t) < size; }
  std::uint32_t filler_count() const { return size - kFirstFiller; }
  static constexpr TokenId digit(int d) { return TokenId{static_cast<std::uint16_t>(d)}; }
  static constexpr TokenId filler(std::uint32_t i) {
    return TokenId{static_cast<std::uint16_t>(kFirstFiller + i)};
  }
};

constexpr bool is_digit(TokenId t) { return to_index(t) <= 9; }

/// Human-readable rendering, e.g. "<bos> 3 + 4 = [ 7 ] <eos>" with fillers as "f0".."fN".
std::string render(TokenView tokens);

enum class StopReason : std::uint8_t { BudgetExhausted, Eos, AnswerFound, RepetitionFail };

std::string_view to_string(StopReason r);

struct Segment {
  TokenSeq tokens;
  std::vector<double> logprobs;  // nats, aligned 1:1 with tokens
  StopReason stop = StopReason::BudgetExhausted;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  double logprob_sum() const;
  double mean_logprob() const;
  /// Checks |logprobs| == |tokens|, every logprob <= 0 and |tokens| <= budget.
  bool well_formed(std::size_t budget) const;
};

struct Trajectory {
  std::uint64_t query_id = 0;
  std::vector<NodeId> node_path;  // root child .. leaf
  TokenSeq tokens;                // response tokens (prompt excluded)
  double reward = 0.0;

  std::size_t depth() const { return node_path.size(); }
};

/// Value enclosed by the last well-formed ANS_OPEN digit+ ANS_CLOSE run, or
/// nullopt. Spans longer than 18 digits are treated as malformed.
std::optional<AnswerValue> extract_answer(TokenView tokens);

/// True iff some block of length >= `min_len` appears >= `min_reps` times
/// back to back in `tokens`.
bool has_repetition(TokenView tokens, std::size_t min_len, std::size_t min_reps);

struct RepetitionParams {
  std::size_t min_len = 8;
  std::size_t min_reps = 4;
};

}  // namespace treepo
