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

#include "support.hpp"
#include "treepo/core.hpp"
#include "treepo/error.hpp"

using namespace treepo;
using namespace treepo::testing;

namespace {

const TokenId kBos = Vocabulary::kBos;
const TokenId kEos = Vocabulary::kEos;
const TokenId kOpen = Vocabulary::kAnsOpen;
const TokenId kClose = Vocabulary::kAnsClose;
const TokenId kPlus = Vocabulary::kPlus;

}  // namespace

TEST_CASE("extract_answer picks the single well-formed pair") {
  const TokenSeq t{kBos, dig(4), kPlus, kOpen, dig(7), kClose, kEos};
  CHECK(extract_answer(t) == 7);
}

TEST_CASE("extract_answer takes the last of several pairs") {
  const TokenSeq t{kBos, kOpen, dig(1), kClose, kOpen, dig(3), kClose};
  CHECK(extract_answer(t) == 3);
}

TEST_CASE("extract_answer ignores an unclosed marker") {
  const TokenSeq t{kBos, kOpen, dig(5), kEos};
  CHECK_FALSE(extract_answer(t).has_value());
}

TEST_CASE("extract_answer malformed spans") {
  CHECK_FALSE(extract_answer(TokenSeq{kOpen, kClose}).has_value());
  CHECK_FALSE(extract_answer(TokenSeq{kOpen, dig(1), fill(0), kClose}).has_value());
  CHECK_FALSE(extract_answer(TokenSeq{}).has_value());
  CHECK(extract_answer(TokenSeq{kOpen, dig(1), dig(2), kClose}) == 12);
  // a later malformed span does not erase an earlier answer
  CHECK(extract_answer(TokenSeq{kOpen, dig(6), kClose, kOpen, dig(2)}) == 6);
  // nested open: the inner pair is the well-formed one
  CHECK(extract_answer(TokenSeq{kOpen, kOpen, dig(9), kClose}) == 9);
}

TEST_CASE("extract_answer is invariant under prefixing with non-marker tokens") {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    TokenSeq t;
    const auto n = uniform_int(rng, 0, 10);
    for (std::uint64_t i = 0; i < n; ++i) t.push_back(tok(static_cast<int>(uniform_int(rng, 0, 23))));
    TokenSeq prefixed;
    const auto p = uniform_int(rng, 1, 6);
    for (std::uint64_t i = 0; i < p; ++i) {
      // anything but the answer markers
      int id = static_cast<int>(uniform_int(rng, 0, 21));
      if (id >= 12) id += 2;
      prefixed.push_back(tok(id));
    }
    prefixed.insert(prefixed.end(), t.begin(), t.end());
    CHECK(extract_answer(prefixed) == extract_answer(t));
  }
}

TEST_CASE("has_repetition examples") {
  const TokenSeq abab{tok(16), tok(17), tok(16), tok(17), tok(16), tok(17), tok(16), tok(17)};
  CHECK(has_repetition(abab, 2, 4));
  const TokenSeq distinct{tok(16), tok(17), tok(18), tok(19), tok(20), tok(21)};
  CHECK_FALSE(has_repetition(distinct, 2, 2));
  CHECK_FALSE(has_repetition(TokenSeq{}, 1, 2));
  CHECK_FALSE(has_repetition(TokenSeq{}, 8, 4));
}

TEST_CASE("has_repetition matches a brute-force scanner on every short sequence") {
  const std::pair<std::size_t, std::size_t> params[] = {{1, 2}, {1, 3}, {2, 2}, {2, 3},
                                                        {3, 2}, {1, 4}, {2, 4}, {4, 2}};
  std::size_t checked = 0;
  for (std::size_t n = 0; n <= 12; ++n) {
    std::size_t total = 1;
    for (std::size_t i = 0; i < n; ++i) total *= 3;
    TokenSeq t(n);
    for (std::size_t code = 0; code < total; ++code) {
      std::size_t c = code;
      for (std::size_t i = 0; i < n; ++i) {
        t[i] = tok(16 + static_cast<int>(c % 3));
        c /= 3;
      }
      for (auto [len, reps] : params) {
        if (has_repetition(t, len, reps) != oracle_repetition(t, len, reps)) {
          FAIL("mismatch on " << render(t) << " len=" << len << " reps=" << reps);
        }
        ++checked;
      }
    }
  }
  CHECK(checked > 4'000'000);
}

TEST_CASE("has_repetition is monotone in the repetition count") {
  Rng rng(5);
  for (int trial = 0; trial < 3000; ++trial) {
    TokenSeq t;
    const auto n = uniform_int(rng, 0, 30);
    for (std::uint64_t i = 0; i < n; ++i) t.push_back(tok(16 + static_cast<int>(uniform_int(rng, 0, 1))));
    for (std::size_t len = 1; len <= 4; ++len) {
      for (std::size_t reps = 3; reps <= 6; ++reps) {
        if (has_repetition(t, len, reps)) CHECK(has_repetition(t, len, reps - 1));
      }
    }
  }
}

TEST_CASE("vocabulary layout") {
  CHECK(Vocabulary{}.size == 24);
  CHECK(Vocabulary::with_size(16).filler_count() == 0);
  CHECK_THROWS_AS(Vocabulary::with_size(14), Error);
  CHECK(is_digit(dig(0)));
  CHECK(is_digit(dig(9)));
  CHECK_FALSE(is_digit(kBos));
  CHECK(render(TokenSeq{kBos, dig(3), kPlus, dig(4), Vocabulary::kEquals, kOpen, dig(7), kClose,
                        kEos, fill(2)}) == "<bos> 3 + 4 = [ 7 ] <eos> f2");
}

TEST_CASE("segment well-formedness") {
  Segment s = make_segment({fill(0), fill(1)});
  CHECK(s.well_formed(2));
  CHECK_FALSE(s.well_formed(1));
  CHECK(s.logprob_sum() == doctest::Approx(-1.0));
  CHECK(s.mean_logprob() == doctest::Approx(-0.5));
  s.logprobs[0] = 0.1;
  CHECK_FALSE(s.well_formed(2));
  s.logprobs.pop_back();
  CHECK_FALSE(s.well_formed(2));
}

TEST_CASE("error codes map to families") {
  CHECK(family_of(ErrorCode::AttachToLeaf) == ErrorFamily::Tree);
  CHECK(family_of(ErrorCode::BackendFailure) == ErrorFamily::Engine);
  CHECK(family_of(ErrorCode::DegenerateGroup) == ErrorFamily::Advantage);
  CHECK(family_of(ErrorCode::ShapeMismatch) == ErrorFamily::Objective);
  CHECK(family_of(ErrorCode::DivisionByZero) == ErrorFamily::Cost);
  CHECK(family_of(ErrorCode::Parse) == ErrorFamily::Io);
  const Error e(ErrorCode::DepthExceeded, "x");
  CHECK(e.code() == ErrorCode::DepthExceeded);
  CHECK(std::string(e.what()).find("DepthExceeded") != std::string::npos);
}
