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

#include <cmath>

#include "support.hpp"
#include "treepo/error.hpp"
#include "treepo/objective.hpp"

using namespace treepo;
using namespace treepo::testing;

namespace {

LogitsTablePolicy small_policy(Rng& rng) {
  PolicyShape s;
  s.vocab_size = 16;
  s.context_order = 1;
  s.query_slots = 0;
  LogitsTablePolicy p(s);
  for (double& v : p.table()) v = 2.0 * (uniform01(rng) - 0.5);
  return p;
}

// Old logprobs are the current ones shifted by up to `jitter`.
TokenBatch random_batch(Rng& rng, const LogitsTablePolicy& p, std::size_t trajs, double jitter) {
  TokenBatch b;
  std::vector<double> lsm(p.vocab_size());
  for (std::size_t i = 0; i < trajs; ++i) {
    const auto len = static_cast<std::size_t>(uniform_int(rng, 1, 12));
    std::vector<std::uint32_t> rows;
    std::vector<TokenId> toks;
    std::vector<double> old;
    for (std::size_t t = 0; t < len; ++t) {
      rows.push_back(static_cast<std::uint32_t>(uniform_int(rng, 0, p.row_count() - 1)));
      toks.push_back(tok(static_cast<int>(uniform_int(rng, 0, p.vocab_size() - 1))));
      p.log_softmax(rows.back(), lsm);
      old.push_back(lsm[to_index(toks.back())] + jitter * (2.0 * uniform01(rng) - 1.0));
    }
    b.add_trajectory(rows, toks, old, 4.0 * (uniform01(rng) - 0.5));
  }
  return b;
}

bool near_kink(const TokenBatch& b, const LogitsTablePolicy& p, const ClipConfig& cfg, double tol) {
  std::vector<double> lsm(p.vocab_size());
  for (std::size_t t = 0; t < b.token_count(); ++t) {
    p.log_softmax(b.rows[t], lsm);
    const double r = token_ratio(lsm[to_index(b.tokens[t])], b.old_logprobs[t]);
    if (std::abs(r - (1.0 - cfg.eps_low)) < tol || std::abs(r - (1.0 + cfg.eps_high)) < tol) {
      return true;
    }
  }
  return false;
}

}  // namespace

TEST_CASE("ratio and clipped term examples") {
  CHECK(token_ratio(-1.0, -1.5) == doctest::Approx(1.6487212707));
  CHECK(token_ratio(-2.0, -2.0) == 1.0);
  const ClipConfig cfg;
  auto t = token_term(1.6, 1.0, cfg);
  CHECK(t.value == doctest::Approx(1.28));
  CHECK(t.clipped);
  t = token_term(0.5, -1.0, cfg);
  CHECK(t.value == doctest::Approx(-0.8));
  CHECK(t.clipped);
  t = token_term(0.5, 1.0, cfg);  // pessimistic side keeps the raw term
  CHECK(t.value == doctest::Approx(0.5));
  CHECK_FALSE(t.clipped);
  t = token_term(1.6, -1.0, cfg);
  CHECK(t.value == doctest::Approx(-1.6));
  CHECK_FALSE(t.clipped);
}

TEST_CASE("single-token loss examples") {
  Rng rng(1);
  LogitsTablePolicy p = small_policy(rng);
  std::vector<double> lsm(p.vocab_size());
  p.log_softmax(3, lsm);
  const std::uint32_t row = 3;
  const TokenId t0 = tok(5);

  TokenBatch up;
  up.add_trajectory(std::vector<std::uint32_t>{row}, std::vector<TokenId>{t0},
                    std::vector<double>{lsm[5] - std::log(1.6)}, 1.0);
  CHECK(clipped_surrogate(up, p, {}) == doctest::Approx(-1.28));

  TokenBatch down;
  down.add_trajectory(std::vector<std::uint32_t>{row}, std::vector<TokenId>{t0},
                      std::vector<double>{lsm[5] - std::log(0.5)}, -1.0);
  CHECK(clipped_surrogate(down, p, {}) == doctest::Approx(0.8));

  // both terms are clipped, so nothing flows back
  for (double g : surrogate_gradient(up, p, {})) CHECK(g == 0.0);
  for (double g : surrogate_gradient(down, p, {})) CHECK(g == 0.0);
  CHECK(clip_fraction(up, p, {}) == 1.0);
}

TEST_CASE("on-policy loss is minus the mean token advantage") {
  Rng rng(2);
  LogitsTablePolicy p = small_policy(rng);
  const TokenBatch b = random_batch(rng, p, 10, 0.0);
  double s = 0.0;
  for (double a : b.advantages) s += a;
  CHECK(clipped_surrogate(b, p, {}) == doctest::Approx(-s / static_cast<double>(b.token_count())));
  CHECK(clip_fraction(b, p, {}) == 0.0);
}

TEST_CASE("on-policy gradient example") {
  Rng rng(3);
  LogitsTablePolicy p = small_policy(rng);
  std::vector<double> lsm(p.vocab_size());
  p.log_softmax(7, lsm);
  TokenBatch b;
  b.add_trajectory(std::vector<std::uint32_t>{7}, std::vector<TokenId>{tok(2)},
                   std::vector<double>{lsm[2]}, 0.5);
  const auto g = surrogate_gradient(b, p, {});
  for (std::size_t v = 0; v < p.vocab_size(); ++v) {
    const double want = -0.5 * ((v == 2 ? 1.0 : 0.0) - std::exp(lsm[v]));
    CHECK(g[7 * p.vocab_size() + v] == doctest::Approx(want).epsilon(1e-14));
  }
  double other = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (i / p.vocab_size() != 7) other += std::abs(g[i]);
  }
  CHECK(other == 0.0);
}

TEST_CASE("analytic gradient matches central differences") {
  Rng rng(4);
  const ClipConfig cfg;
  const double h = 1e-5;
  int batches = 0;
  double worst = 0.0;
  while (batches < 120) {
    LogitsTablePolicy p = small_policy(rng);
    const TokenBatch b = random_batch(rng, p, static_cast<std::size_t>(uniform_int(rng, 1, 6)), 0.4);
    if (near_kink(b, p, cfg, 1e-3)) continue;
    const auto g = surrogate_gradient(b, p, cfg);
    auto table = p.table();
    for (std::size_t i = 0; i < table.size(); ++i) {
      const double keep = table[i];
      table[i] = keep + h;
      const double lp = clipped_surrogate(b, p, cfg);
      table[i] = keep - h;
      const double lm = clipped_surrogate(b, p, cfg);
      table[i] = keep;
      const double fd = (lp - lm) / (2.0 * h);
      const double scale = std::max({std::abs(fd), std::abs(g[i]), 1e-6});
      worst = std::max(worst, std::abs(fd - g[i]) / scale);
    }
    ++batches;
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("a small step moves probability in the direction of the advantage") {
  Rng rng(5);
  for (double adv : {1.0, -1.0}) {
    LogitsTablePolicy p = small_policy(rng);
    std::vector<double> lsm(p.vocab_size());
    p.log_softmax(4, lsm);
    TokenBatch b;
    b.add_trajectory(std::vector<std::uint32_t>{4}, std::vector<TokenId>{tok(9)},
                     std::vector<double>{lsm[9]}, adv);
    const double before = lsm[9];
    ClipConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.warmup_steps = 0;
    apply_update(p, surrogate_gradient(b, p, cfg), cfg, 1);
    p.log_softmax(4, lsm);
    if (adv > 0) CHECK(lsm[9] > before);
    else CHECK(lsm[9] < before);
  }
}

TEST_CASE("duplicating every trajectory leaves loss and gradient unchanged") {
  Rng rng(6);
  LogitsTablePolicy p = small_policy(rng);
  const TokenBatch b = random_batch(rng, p, 8, 0.3);
  TokenBatch twice;
  for (int rep = 0; rep < 2; ++rep) {
    for (std::size_t i = 0; i < b.trajectory_count(); ++i) {
      const std::size_t lo = b.offsets[i], hi = b.offsets[i + 1];
      twice.add_trajectory(std::span(b.rows).subspan(lo, hi - lo),
                           std::span(b.tokens).subspan(lo, hi - lo),
                           std::span(b.old_logprobs).subspan(lo, hi - lo), b.advantages[lo]);
    }
  }
  CHECK(clipped_surrogate(twice, p, {}) == doctest::Approx(clipped_surrogate(b, p, {})));
  const auto g1 = surrogate_gradient(b, p, {});
  const auto g2 = surrogate_gradient(twice, p, {});
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == doctest::Approx(g1[i]).epsilon(1e-12));
}

TEST_CASE("update step") {
  Rng rng(7);
  LogitsTablePolicy p = small_policy(rng);
  const LogitsTablePolicy before = p;
  ClipConfig cfg;
  apply_update(p, std::vector<double>(p.parameter_count(), 0.0), cfg, 3);
  CHECK(p == before);

  CHECK(cfg.effective_lr(5) == doctest::Approx(0.5 * cfg.learning_rate));
  CHECK(cfg.effective_lr(0) == 0.0);
  CHECK(cfg.effective_lr(10) == cfg.learning_rate);
  CHECK(cfg.effective_lr(1000) == cfg.learning_rate);
  ClipConfig flat = cfg;
  flat.warmup_steps = 0;
  CHECK(flat.effective_lr(1) == cfg.learning_rate);

  // first-order decrease of the loss for a tiny step
  const TokenBatch b = random_batch(rng, p, 6, 0.1);
  const auto g = surrogate_gradient(b, p, cfg);
  double g2 = 0.0;
  for (double v : g) g2 += v * v;
  ClipConfig tiny;
  tiny.learning_rate = 1e-8;
  tiny.warmup_steps = 0;
  const double l0 = clipped_surrogate(b, p, tiny);
  apply_update(p, g, tiny, 1);
  const double l1 = clipped_surrogate(b, p, tiny);
  CHECK(std::abs((l1 - l0) - (-1e-8 * g2)) <= 1e-6 * 1e-8 * g2 + 1e-15);

  CHECK_THROWS_AS(apply_update(p, std::vector<double>(3, 0.0), cfg, 1), Error);
}

TEST_CASE("serial and parallel kernels are bitwise identical") {
  Rng rng(8);
  PolicyShape s;
  LogitsTablePolicy p(s, PolicyInit::FormatPrior);
  TokenBatch b;
  std::vector<double> lsm(p.vocab_size());
  for (int i = 0; i < 64; ++i) {
    std::vector<std::uint32_t> rows;
    std::vector<TokenId> toks;
    std::vector<double> old;
    for (int t = 0; t < 20; ++t) {
      rows.push_back(static_cast<std::uint32_t>(uniform_int(rng, 0, 2000)));
      toks.push_back(tok(static_cast<int>(uniform_int(rng, 0, 23))));
      p.log_softmax(rows.back(), lsm);
      old.push_back(lsm[to_index(toks.back())] + 0.3 * (uniform01(rng) - 0.5));
    }
    b.add_trajectory(rows, toks, old, uniform01(rng) - 0.5);
  }
  const ClipConfig cfg;
  CHECK(clipped_surrogate(b, p, cfg, Exec::Serial) == clipped_surrogate(b, p, cfg, Exec::Parallel));
  const auto a = surrogate_gradient(b, p, cfg, Exec::Serial);
  const auto c = surrogate_gradient(b, p, cfg, Exec::Parallel);
  CHECK(a == c);
}

TEST_CASE("batch validation") {
  Rng rng(9);
  LogitsTablePolicy p = small_policy(rng);
  TokenBatch empty;
  try {
    clipped_surrogate(empty, p, {});
    FAIL("expected EmptyBatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyBatch);
  }
  TokenBatch b;
  try {
    b.add_trajectory(std::vector<std::uint32_t>{1, 2}, std::vector<TokenId>{tok(1)},
                     std::vector<double>{-1.0}, 1.0);
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
  CHECK_THROWS_AS(b.add_trajectory(std::vector<std::uint32_t>{1}, std::vector<TokenId>{tok(1)},
                                   std::vector<double>{-1.0}, std::nan("")),
                  Error);
  b.add_trajectory(std::vector<std::uint32_t>{999}, std::vector<TokenId>{tok(1)},
                   std::vector<double>{-1.0}, 1.0);
  CHECK_THROWS_AS(surrogate_gradient(b, p, {}), Error);
  ClipConfig bad;
  bad.eps_high = 0.1;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("context rows follow the sampler") {
  LogitsTablePolicy p({}, PolicyInit::FormatPrior);
  const auto q = QuerySpec::from_operands(0, {2, 5});
  Rng rng(10);
  const Segment s = p.sample_segment(q.prompt_tokens, 10, rng);
  const auto rows = context_rows(p, q.prompt_tokens, s.tokens);
  REQUIRE(rows.size() == s.size());
  std::vector<double> lsm(p.vocab_size());
  TokenSeq prefix = q.prompt_tokens;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i] == p.row_index(prefix));
    p.log_softmax(rows[i], lsm);
    CHECK(lsm[to_index(s.tokens[i])] == doctest::Approx(s.logprobs[i]).epsilon(1e-14));
    prefix.push_back(s.tokens[i]);
  }
}

TEST_CASE("visited entropy") {
  LogitsTablePolicy p;
  const std::vector<std::uint32_t> rows{0, 5, 5, 9};
  CHECK(mean_visited_entropy(p, rows) == doctest::Approx(std::log(24.0)));
  CHECK(mean_visited_entropy(p, {}) == 0.0);
}
