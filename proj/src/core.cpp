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

#include "treepo/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "treepo/error.hpp"

namespace treepo {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::AttachToLeaf: return "AttachToLeaf";
    case ErrorCode::DepthExceeded: return "DepthExceeded";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::ActiveNodesRemain: return "ActiveNodesRemain";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::BackendFailure: return "BackendFailure";
    case ErrorCode::EmptyActiveSet: return "EmptyActiveSet";
    case ErrorCode::FallbackNotEligible: return "FallbackNotEligible";
    case ErrorCode::DegenerateGroup: return "DegenerateGroup";
    case ErrorCode::DepthOutOfRange: return "DepthOutOfRange";
    case ErrorCode::UnfilteredDegenerateQuery: return "UnfilteredDegenerateQuery";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DivisionByZero: return "DivisionByZero";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Parse: return "Parse";
  }
  return "Unknown";
}

Vocabulary Vocabulary::with_size(std::uint32_t n) {
  if (n < kMinSize || n > std::numeric_limits<std::uint16_t>::max()) {
    throw Error(ErrorCode::ConfigInvalid,
                "vocabulary size " + std::to_string(n) + " outside [16, 65535]");
  }
  return Vocabulary{n};
}

std::string render(TokenView tokens) {
  std::string out;
  for (TokenId t : tokens) {
    if (!out.empty()) out += ' ';
    const auto id = to_index(t);
    if (is_digit(t)) {
      out += static_cast<char>('0' + id);
    } else if (t == Vocabulary::kBos) {
      out += "<bos>";
    } else if (t == Vocabulary::kEos) {
      out += "<eos>";
    } else if (t == Vocabulary::kAnsOpen) {
      out += '[';
    } else if (t == Vocabulary::kAnsClose) {
      out += ']';
    } else if (t == Vocabulary::kPlus) {
      out += '+';
    } else if (t == Vocabulary::kEquals) {
      out += '=';
    } else {
      out += 'f' + std::to_string(id - Vocabulary::kFirstFiller);
    }
  }
  return out;
}

std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::BudgetExhausted: return "budget";
    case StopReason::Eos: return "eos";
    case StopReason::AnswerFound: return "answer";
    case StopReason::RepetitionFail: return "repetition";
  }
  return "?";
}

double Segment::logprob_sum() const {
  double s = 0.0;
  for (double lp : logprobs) s += lp;
  return s;
}

double Segment::mean_logprob() const {
  return logprobs.empty() ? 0.0 : logprob_sum() / static_cast<double>(logprobs.size());
}

bool Segment::well_formed(std::size_t budget) const {
  if (tokens.size() > budget || logprobs.size() != tokens.size()) return false;
  return std::all_of(logprobs.begin(), logprobs.end(),
                     [](double lp) { return std::isfinite(lp) && lp <= 0.0; });
}

std::optional<AnswerValue> extract_answer(TokenView tokens) {
  constexpr std::size_t kMaxDigits = 18;
  std::optional<AnswerValue> last;
  const std::size_t n = tokens.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (tokens[i] != Vocabulary::kAnsOpen) continue;
    std::size_t j = i + 1;
    AnswerValue value = 0;
    while (j < n && is_digit(tokens[j])) {
      value = value * 10 + static_cast<AnswerValue>(to_index(tokens[j]));
      ++j;
      if (j - i - 1 > kMaxDigits) break;
    }
    const std::size_t digits = j - i - 1;
    if (digits >= 1 && digits <= kMaxDigits && j < n && tokens[j] == Vocabulary::kAnsClose) {
      last = value;
      i = j;  // the closing marker cannot open another pair
    }
  }
  return last;
}

bool has_repetition(TokenView tokens, std::size_t min_len, std::size_t min_reps) {
  min_len = std::max<std::size_t>(min_len, 1);
  min_reps = std::max<std::size_t>(min_reps, 2);
  const std::size_t n = tokens.size();
  // A window of length L*R starting at i is R back-to-back copies of a block
  // of length L iff tokens[j] == tokens[j + L] for the L*(R-1) positions j
  // starting at i. Track runs of such matches per period L.
  for (std::size_t len = min_len; len * min_reps <= n; ++len) {
    const std::size_t need = len * (min_reps - 1);
    std::size_t run = 0;
    for (std::size_t j = 0; j + len < n; ++j) {
      run = tokens[j] == tokens[j + len] ? run + 1 : 0;
      if (run >= need) return true;
    }
  }
  return false;
}

}  // namespace treepo
