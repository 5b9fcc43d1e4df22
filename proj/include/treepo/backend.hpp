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
#include <random>

#include "treepo/core.hpp"

namespace treepo {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix64(mix64(mix64(seed) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

/// Uniform double in [0, 1) from the top 53 bits; stable across standard libraries.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [lo, hi] (inclusive) by rejection; stable across standard libraries.
std::uint64_t uniform_int(Rng& rng, std::uint64_t lo, std::uint64_t hi);

/// Anything the rollout engine can draw segments from. Implementations must be
/// safe to call concurrently from several threads (each call gets its own rng).
class SamplingBackend {
 public:
  virtual ~SamplingBackend() = default;

  /// Generates at most `budget` tokens continuing `prefix`. The segment's stop
  /// reason is Eos when EOS was emitted, AnswerFound when an ANS_CLOSE completed
  /// a well-formed answer, BudgetExhausted otherwise.
  virtual Segment sample_segment(TokenView prefix, std::uint32_t budget, Rng& rng) const = 0;
};

/// True when `tokens` ends with ANS_OPEN digit+ ANS_CLOSE.
bool ends_with_answer(TokenView tokens);

}  // namespace treepo
