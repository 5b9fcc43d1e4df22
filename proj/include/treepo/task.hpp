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

#pragma once

#include <cstdint>
#include <vector>

#include "treepo/core.hpp"

namespace treepo {

/// A verifiable query: `<bos> a + b + ... =` whose gold answer is the operand
/// sum mod 10. The gold answer is never shown to the policy.
struct QuerySpec {
  std::uint64_t id = 0;
  TokenSeq prompt_tokens;
  std::vector<int> operands;
  AnswerValue gold_answer = 0;

  static QuerySpec from_operands(std::uint64_t id, std::vector<int> operands);
};

/// Packs the operands found before the first '=' base 10 (first operand most
/// significant). Returns 0 when the prefix carries no operand digits.
std::uint64_t operand_key(TokenView prefix);

}  // namespace treepo
