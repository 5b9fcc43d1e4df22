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

#include "treepo/policy_env.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "treepo/error.hpp"

namespace treepo {

std::uint64_t uniform_int(Rng& rng, std::uint64_t lo, std::uint64_t hi) {
  if (hi <= lo) return lo;
  const std::uint64_t span = hi - lo + 1;
  if (span == 0) return rng();  // full 64-bit range
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return lo + x % span;
}

bool ends_with_answer(TokenView tokens) {
  if (tokens.size() < 3 || tokens.back() != Vocabulary::kAnsClose) return false;
  std::size_t i = tokens.size() - 1;
  std::size_t digits = 0;
  while (i > 0 && is_digit(tokens[i - 1])) {
    --i;
    ++digits;
  }
  return digits >= 1 && i > 0 && tokens[i - 1] == Vocabulary::kAnsOpen;
}

QuerySpec QuerySpec::from_operands(std::uint64_t id, std::vector<int> operands) {
  QuerySpec q;
  q.id = id;
  q.prompt_tokens.push_back(Vocabulary::kBos);
  int sum = 0;
  for (std::size_t i = 0; i < operands.size(); ++i) {
    if (operands[i] < 0 || operands[i] > 9) {
      throw Error(ErrorCode::ConfigInvalid, "operand must be a single digit");
    }
    if (i > 0) q.prompt_tokens.push_back(Vocabulary::kPlus);
    q.prompt_tokens.push_back(Vocabulary::digit(operands[i]));
    sum += operands[i];
  }
  q.prompt_tokens.push_back(Vocabulary::kEquals);
  q.gold_answer = sum % 10;
  q.operands = std::move(operands);
  return q;
}

std::uint64_t operand_key(TokenView prefix) {
  std::uint64_t key = 0;
  for (TokenId t : prefix) {
    if (t == Vocabulary::kEquals) return key;
    if (is_digit(t)) key = key * 10 + to_index(t);
  }
  return 0;
}

QuerySpec make_task(Rng& rng, std::uint64_t id, int operand_count) {
  if (operand_count < 1) throw Error(ErrorCode::ConfigInvalid, "operand_count must be >= 1");
  std::vector<int> ops(static_cast<std::size_t>(operand_count));
  for (int& op : ops) op = static_cast<int>(uniform_int(rng, 0, 9));
  return QuerySpec::from_operands(id, std::move(ops));
}

double reward(const Trajectory& traj, AnswerValue gold) {
  const auto ans = extract_answer(traj.tokens);
  return ans && *ans == gold ? 1.0 : 0.0;
}

// ---------------------------------------------------------------------------

LogitsTablePolicy::LogitsTablePolicy(PolicyShape shape, PolicyInit init) : shape_(shape) {
  Vocabulary::with_size(shape_.vocab_size);
  if (shape_.context_order < 1 || shape_.context_order > 4) {
    throw Error(ErrorCode::ConfigInvalid, "context_order must be in [1, 4]");
  }
  if (!(shape_.temperature > 0.0)) {
    throw Error(ErrorCode::ConfigInvalid, "sampling temperature must be > 0");
  }
  window_rows_ = 1;
  for (std::uint32_t i = 0; i < shape_.context_order; ++i) window_rows_ *= shape_.vocab_size;
  rows_ = window_rows_ * std::max<std::uint64_t>(shape_.query_slots, 1);
  table_.assign(rows_ * shape_.vocab_size, 0.0);
  switch (init) {
    case PolicyInit::Uniform: break;
    case PolicyInit::FormatPrior: init_format_prior(); break;
    case PolicyInit::Solved: init_solved(); break;
  }
}

void LogitsTablePolicy::set_temperature(double t) {
  if (!(t > 0.0)) throw Error(ErrorCode::ConfigInvalid, "sampling temperature must be > 0");
  shape_.temperature = t;
}

std::size_t LogitsTablePolicy::row_index(std::uint64_t query_key, TokenView src) const {
  std::size_t w = 0;
  const std::size_t k = shape_.context_order;
  for (std::size_t i = 0; i < k; ++i) {
    // Oldest position first; missing history is padded with BOS.
    const std::size_t back = k - i;
    const TokenId t = src.size() >= back ? src[src.size() - back] : Vocabulary::kBos;
    w = w * shape_.vocab_size + to_index(t);
  }
  const std::uint64_t slot = shape_.query_slots == 0 ? 0 : query_key % shape_.query_slots;
  return static_cast<std::size_t>(slot) * window_rows_ + w;
}

std::size_t LogitsTablePolicy::row_index(TokenView prefix) const {
  return row_index(shape_.query_slots == 0 ? 0 : operand_key(prefix), prefix);
}

void LogitsTablePolicy::log_softmax(std::size_t r, std::span<double> out) const {
  const auto logits = row(r);
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

double LogitsTablePolicy::logprob(TokenView prefix, TokenId token) const {
  if (to_index(token) >= shape_.vocab_size) {
    throw Error(ErrorCode::ConfigInvalid, "token outside vocabulary");
  }
  std::vector<double> lp(shape_.vocab_size);
  log_softmax(row_index(prefix), lp);
  return lp[to_index(token)];
}

double LogitsTablePolicy::entropy(std::size_t r) const {
  std::vector<double> lp(shape_.vocab_size);
  log_softmax(r, lp);
  double h = 0.0;
  for (double v : lp) h -= std::exp(v) * v;
  return h;
}

Segment LogitsTablePolicy::sample_segment(TokenView prefix, std::uint32_t budget, Rng& rng) const {
  Segment seg;
  if (budget == 0) return seg;
  const std::uint32_t V = shape_.vocab_size;
  const std::uint64_t key = shape_.query_slots == 0 ? 0 : operand_key(prefix);
  const double inv_t = 1.0 / shape_.temperature;

  // Rolling context: the last k tokens of prefix ++ generated.
  const std::size_t k = shape_.context_order;
  TokenSeq window(k, Vocabulary::kBos);
  const std::size_t take = std::min(k, prefix.size());
  std::copy(prefix.end() - static_cast<std::ptrdiff_t>(take), prefix.end(),
            window.end() - static_cast<std::ptrdiff_t>(take));

  std::vector<double> lp(V), cdf(V);
  TokenSeq tail;  // prefix tail kept for answer detection across the boundary
  const std::size_t tail_len = std::min<std::size_t>(prefix.size(), 24);
  tail.assign(prefix.end() - static_cast<std::ptrdiff_t>(tail_len), prefix.end());

  seg.tokens.reserve(budget);
  seg.logprobs.reserve(budget);
  for (std::uint32_t step = 0; step < budget; ++step) {
    const std::size_t r = row_index(key, window);
    log_softmax(r, lp);
    const auto logits = row(r);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double acc = 0.0;
    for (std::uint32_t v = 0; v < V; ++v) {
      acc += std::exp((logits[v] - mx) * inv_t);
      cdf[v] = acc;
    }
    const double u = uniform01(rng) * acc;
    std::uint32_t pick = 0;
    while (pick + 1 < V && cdf[pick] <= u) ++pick;

    const TokenId tok{static_cast<std::uint16_t>(pick)};
    seg.tokens.push_back(tok);
    seg.logprobs.push_back(lp[pick]);
    tail.push_back(tok);
    std::rotate(window.begin(), window.begin() + 1, window.end());
    window.back() = tok;

    if (tok == Vocabulary::kEos) {
      seg.stop = StopReason::Eos;
      return seg;
    }
    if (tok == Vocabulary::kAnsClose && ends_with_answer(tail)) {
      seg.stop = StopReason::AnswerFound;
      return seg;
    }
  }
  seg.stop = StopReason::BudgetExhausted;
  return seg;
}

// Base-model analog: fillers are the bulk of the mass, an answer block is
// opened now and then (most eagerly right after '='), an open block is
// followed by a uniformly random digit and then closed. No arithmetic.
void LogitsTablePolicy::init_format_prior() {
  const std::uint32_t V = shape_.vocab_size;
  for (std::size_t r = 0; r < rows_; ++r) {
    const std::size_t w = r % window_rows_;
    const TokenId last{static_cast<std::uint16_t>(w % V)};
    const TokenId prev{static_cast<std::uint16_t>(shape_.context_order >= 2 ? (w / V) % V : 0)};
    auto logits = row(r);
    for (std::uint32_t v = 0; v < V; ++v) {
      const TokenId t{static_cast<std::uint16_t>(v)};
      double x = 0.0;
      if (is_digit(t)) x = -2.0;
      else if (t == Vocabulary::kBos) x = -6.0;
      else if (t == Vocabulary::kEos) x = -3.5;
      else if (t == Vocabulary::kAnsOpen) x = -1.5;
      else if (t == Vocabulary::kAnsClose) x = -4.0;
      else if (t == Vocabulary::kPlus || t == Vocabulary::kEquals) x = -4.0;
      logits[v] = x;
    }
    if (last == Vocabulary::kEquals) {
      logits[to_index(Vocabulary::kAnsOpen)] = 1.0;
    } else if (last == Vocabulary::kAnsOpen) {
      for (int d = 0; d < 10; ++d) logits[d] = 3.0;
    } else if (is_digit(last) && prev == Vocabulary::kAnsOpen) {
      logits[to_index(Vocabulary::kAnsClose)] = 4.0;
    } else if (last == Vocabulary::kAnsClose) {
      logits[to_index(Vocabulary::kEos)] = 2.0;
    }
  }
}

// '=' -> ANS_OPEN -> correct digit -> ANS_CLOSE, with overwhelming margins.
void LogitsTablePolicy::init_solved() {
  if (shape_.query_slots == 0 || shape_.context_order < 2) {
    throw Error(ErrorCode::ConfigInvalid,
                "the solved table needs query conditioning and context_order >= 2");
  }
  const std::uint32_t V = shape_.vocab_size;
  constexpr double kHigh = 30.0;
  for (std::size_t r = 0; r < rows_; ++r) {
    const std::uint64_t key = r / window_rows_;
    const std::size_t w = r % window_rows_;
    const TokenId last{static_cast<std::uint16_t>(w % V)};
    const TokenId prev{static_cast<std::uint16_t>((w / V) % V)};
    int sum = 0;
    for (std::uint64_t x = key; x > 0; x /= 10) sum += static_cast<int>(x % 10);
    auto logits = row(r);
    if (last == Vocabulary::kEquals) {
      logits[to_index(Vocabulary::kAnsOpen)] = kHigh;
    } else if (last == Vocabulary::kAnsOpen) {
      logits[static_cast<std::size_t>(sum % 10)] = kHigh;
    } else if (is_digit(last) && prev == Vocabulary::kAnsOpen) {
      logits[to_index(Vocabulary::kAnsClose)] = kHigh;
    } else {
      logits[to_index(Vocabulary::kEos)] = kHigh;
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'T', 'R', 'E', 'E', 'P', 'O', 'P', 'L'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "checkpoints are little-endian");
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw Error(ErrorCode::Parse, "truncated policy checkpoint header");
  return v;
}

}  // namespace

void LogitsTablePolicy::save(std::ostream& out) const {
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, shape_.vocab_size);
  put<std::uint32_t>(out, shape_.context_order);
  put<std::uint64_t>(out, shape_.query_slots);
  put<std::uint64_t>(out, rows_);
  put<double>(out, shape_.temperature);
  out.write(reinterpret_cast<const char*>(table_.data()),
            static_cast<std::streamsize>(table_.size() * sizeof(double)));
  if (!out) throw Error(ErrorCode::Io, "failed writing policy checkpoint");
}

LogitsTablePolicy LogitsTablePolicy::load(std::istream& in) {
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw Error(ErrorCode::Parse, "not a policy checkpoint");
  }
  if (get<std::uint32_t>(in) != kVersion) {
    throw Error(ErrorCode::Parse, "unsupported checkpoint version");
  }
  PolicyShape shape;
  shape.vocab_size = get<std::uint32_t>(in);
  shape.context_order = get<std::uint32_t>(in);
  shape.query_slots = get<std::uint64_t>(in);
  const auto rows = get<std::uint64_t>(in);
  shape.temperature = get<double>(in);
  LogitsTablePolicy p(shape, PolicyInit::Uniform);
  if (rows != p.rows_) throw Error(ErrorCode::Parse, "checkpoint row count mismatch");
  in.read(reinterpret_cast<char*>(p.table_.data()),
          static_cast<std::streamsize>(p.table_.size() * sizeof(double)));
  if (!in) throw Error(ErrorCode::Parse, "truncated policy checkpoint table");
  return p;
}

void LogitsTablePolicy::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path);
  save(out);
}

LogitsTablePolicy LogitsTablePolicy::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  return load(in);
}

bool LogitsTablePolicy::operator==(const LogitsTablePolicy& other) const {
  return shape_.vocab_size == other.shape_.vocab_size &&
         shape_.context_order == other.shape_.context_order &&
         shape_.query_slots == other.shape_.query_slots &&
         shape_.temperature == other.shape_.temperature &&
         table_.size() == other.table_.size() &&
         std::memcmp(table_.data(), other.table_.data(), table_.size() * sizeof(double)) == 0;
}

}  // namespace treepo
