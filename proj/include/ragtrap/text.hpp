/* Copyright 2026 The ragtrap Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Tokenization, vocabulary, and the additive-smoothed n-gram language model
// used for naturalness scoring and perplexity screening.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ragtrap/error.hpp"
#include "ragtrap/hash.hpp"

namespace ragtrap {

using TokenId = std::uint32_t;

namespace detail {

// Byte length of a UTF-8 whitespace code point starting at s[i], or 0.
inline std::size_t unicode_space_len(std::string_view s, std::size_t i) {
  const auto b = [&](std::size_t k) { return static_cast<unsigned char>(s[i + k]); };
  const std::size_t left = s.size() - i;
  if (left >= 2 && b(0) == 0xC2 && (b(1) == 0x85 || b(1) == 0xA0)) return 2;
  if (left >= 3 && b(0) == 0xE1 && b(1) == 0x9A && b(2) == 0x80) return 3;  // U+1680
  if (left >= 3 && b(0) == 0xE2 && b(1) == 0x80 &&
      ((b(2) >= 0x80 && b(2) <= 0x8A) || b(2) == 0xA8 || b(2) == 0xA9 || b(2) == 0xAF)) {
    return 3;
  }
  if (left >= 3 && b(0) == 0xE2 && b(1) == 0x81 && b(2) == 0x9F) return 3;  // U+205F
  if (left >= 3 && b(0) == 0xE3 && b(1) == 0x80 && b(2) == 0x80) return 3;  // U+3000
  return 0;
}

inline bool is_ascii_separator(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f' ||
         (c < 0x80 && std::ispunct(c));
}

}  // namespace detail

// Lowercases ASCII letters and splits on Unicode whitespace and ASCII
// punctuation. Non-ASCII bytes are kept verbatim inside tokens.
inline std::vector<std::string> normalize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t sep = detail::is_ascii_separator(c) ? 1 : 0;
    if (sep == 0 && c >= 0x80) sep = detail::unicode_space_len(text, i);
    if (sep > 0) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
      i += sep;
      continue;
    }
    cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    ++i;
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

// Normalized form used for answer comparison.
inline std::string normalize_text(std::string_view text) {
  const auto toks = normalize(text);
  return join_tokens(toks);
}

// Dense token ids 0..|V|-1. Id 0 is the reserved UNK token. Corpus tokens
// carry their corpus count (>= 1); UNK carries the count of pruned
// occurrences and explicitly registered extra tokens (triggers, lexicon
// words absent from the corpus) carry 0.
class Vocabulary {
 public:
  static constexpr TokenId kUnk = 0;
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary() { add(std::string(kUnkToken), 0); }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  std::optional<TokenId> find(std::string_view tok) const {
    auto it = ids_.find(std::string(tok));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }
  TokenId id_of(std::string_view tok) const { return find(tok).value_or(kUnk); }
  bool contains(std::string_view tok) const { return find(tok).has_value(); }

  std::uint64_t freq(TokenId id) const { return freq_.at(id); }
  std::uint64_t freq(std::string_view tok) const {
    auto id = find(tok);
    return id ? freq_[*id] : 0;
  }
  std::uint64_t total() const noexcept { return total_; }

  // Registers a token if absent; returns its id. Existing tokens keep their count.
  TokenId add(const std::string& tok, std::uint64_t count) {
    if (auto id = find(tok)) return *id;
    const auto id = static_cast<TokenId>(tokens_.size());
    tokens_.push_back(tok);
    ids_.emplace(tok, id);
    freq_.push_back(count);
    total_ += count;
    return id;
  }

  void add_unk_count(std::uint64_t count) {
    freq_[kUnk] += count;
    total_ += count;
  }

  std::uint64_t fingerprint() const {
    Fnv1a h;
    for (const auto& t : tokens_) h.update(t).update(std::string_view("\0", 1));
    return h.digest();
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  std::vector<std::uint64_t> freq_;
  std::uint64_t total_ = 0;
};

struct TokenSeq {
  std::vector<TokenId> ids;
  std::string source;

  std::size_t size() const noexcept { return ids.size(); }
  bool empty() const noexcept { return ids.empty(); }
};

inline TokenSeq tokenize(std::string_view text, const Vocabulary& vocab) {
  TokenSeq seq;
  seq.source = std::string(text);
  for (const auto& tok : normalize(text)) seq.ids.push_back(vocab.id_of(tok));
  return seq;
}

inline std::string detokenize(const TokenSeq& seq, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : seq.ids) {
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

// Corpus tokens are ordered lexicographically after UNK; extra tokens follow
// in the order given.
inline Vocabulary build_vocab(std::span<const std::string> corpus, std::uint64_t min_freq,
                              std::span<const std::string> extra_tokens = {}) {
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  std::map<std::string, std::uint64_t> counts;
  for (const auto& doc : corpus) {
    for (auto& tok : normalize(doc)) ++counts[std::move(tok)];
  }
  Vocabulary vocab;
  std::uint64_t pruned = 0;
  for (const auto& [tok, n] : counts) {
    if (tok == Vocabulary::kUnkToken) {
      pruned += n;
    } else if (n >= min_freq) {
      vocab.add(tok, n);
    } else {
      pruned += n;
    }
  }
  vocab.add_unk_count(pruned);
  for (const auto& extra : extra_tokens) {
    auto toks = normalize(extra);
    if (toks.size() != 1) {
      throw InvalidArgument("build_vocab: extra token '" + extra + "' is not a single token");
    }
    vocab.add(toks.front(), 0);
  }
  return vocab;
}

// Additive-smoothed n-gram model over vocabulary ids. Contexts are padded
// with n-1 start symbols; only real tokens are predicted, so every
// conditional distribution is over exactly vocab_size outcomes.
class NGramModel {
 public:
  static constexpr int kMaxOrder = 4;

  NGramModel(int order, double alpha, std::size_t vocab_size)
      : order_(order), alpha_(alpha), vocab_size_(vocab_size) {
    if (order < 1 || order > kMaxOrder) {
      throw InvalidArgument("NGramModel: order must be in [1, " + std::to_string(kMaxOrder) + "]");
    }
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidArgument("NGramModel: alpha must be > 0");
    if (vocab_size == 0 || vocab_size + 2 >= (std::size_t{1} << kBits)) {
      throw InvalidArgument("NGramModel: vocab size out of range");
    }
  }

  int order() const noexcept { return order_; }
  double alpha() const noexcept { return alpha_; }
  std::size_t vocab_size() const noexcept { return vocab_size_; }

  void add_sequence(std::span<const TokenId> ids) {
    std::vector<std::uint64_t> ctx(order_ - 1, start_symbol());
    for (TokenId id : ids) {
      check_id(id);
      auto& c = counts_[pack(ctx)];
      ++c.next[id];
      ++c.total;
      shift(ctx, id);
    }
  }

  std::uint64_t count(std::span<const TokenId> context, TokenId next) const {
    auto it = counts_.find(pack_context(context));
    if (it == counts_.end()) return 0;
    auto jt = it->second.next.find(next);
    return jt == it->second.next.end() ? 0 : jt->second;
  }

  // P(next | context); context holds the preceding tokens, most recent last,
  // and is left-padded with start symbols when shorter than n-1.
  double prob(std::span<const TokenId> context, TokenId next) const {
    check_id(next);
    return prob_packed(pack_context(context), next);
  }

  double log_prob_sequence(std::span<const TokenId> ids) const {
    std::vector<std::uint64_t> ctx(order_ - 1, start_symbol());
    double total = 0.0;
    for (TokenId id : ids) {
      check_id(id);
      total += std::log(prob_packed(pack(ctx), id));
      shift(ctx, id);
    }
    return total;
  }

  // log P(next | last n-1 tokens of prefix); used for incremental scoring.
  double log_prob_next(std::span<const TokenId> prefix, TokenId next) const {
    check_id(next);
    const std::size_t need = static_cast<std::size_t>(order_ - 1);
    const std::size_t take = std::min(need, prefix.size());
    return std::log(prob_packed(pack_context(prefix.subspan(prefix.size() - take)), next));
  }

 private:
  static constexpr int kBits = 21;

  struct Context {
    std::unordered_map<TokenId, std::uint64_t> next;
    std::uint64_t total = 0;
  };

  std::uint64_t start_symbol() const { return vocab_size_; }

  void check_id(TokenId id) const {
    if (id >= vocab_size_) throw InvalidArgument("NGramModel: token id outside vocabulary");
  }

  void shift(std::vector<std::uint64_t>& ctx, TokenId id) const {
    if (ctx.empty()) return;
    ctx.erase(ctx.begin());
    ctx.push_back(id);
  }

  static std::uint64_t pack(std::span<const std::uint64_t> ctx) {
    std::uint64_t key = 0;
    for (std::uint64_t v : ctx) key = (key << kBits) | (v + 1);
    return key;
  }

  std::uint64_t pack_context(std::span<const TokenId> context) const {
    const std::size_t need = static_cast<std::size_t>(order_ - 1);
    std::vector<std::uint64_t> ctx(need, start_symbol());
    const std::size_t take = std::min(need, context.size());
    for (std::size_t i = 0; i < take; ++i) {
      check_id(context[context.size() - take + i]);
      ctx[need - take + i] = context[context.size() - take + i];
    }
    return pack(ctx);
  }

  double prob_packed(std::uint64_t key, TokenId next) const {
    const double denom_extra = alpha_ * static_cast<double>(vocab_size_);
    auto it = counts_.find(key);
    if (it == counts_.end()) return alpha_ / denom_extra;
    auto jt = it->second.next.find(next);
    const double c = jt == it->second.next.end() ? 0.0 : static_cast<double>(jt->second);
    return (c + alpha_) / (static_cast<double>(it->second.total) + denom_extra);
  }

  int order_;
  double alpha_;
  std::size_t vocab_size_;
  std::unordered_map<std::uint64_t, Context> counts_;
};

inline NGramModel train_ngram(std::span<const TokenSeq> corpus, std::size_t vocab_size, int order,
                              double alpha) {
  NGramModel model(order, alpha, vocab_size);
  for (const auto& seq : corpus) model.add_sequence(seq.ids);
  return model;
}

// exp of the mean negative log-probability per token.
inline double perplexity(const NGramModel& model, std::span<const TokenId> ids) {
  if (ids.empty()) throw InvalidArgument("perplexity: empty sequence");
  return std::exp(-model.log_prob_sequence(ids) / static_cast<double>(ids.size()));
}

inline double perplexity(const NGramModel& model, const TokenSeq& seq) {
  return perplexity(model, std::span<const TokenId>(seq.ids));
}

template <typename T>
double median(std::vector<T> values) {
  if (values.empty()) throw InvalidArgument("median: empty input");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? static_cast<double>(values[n / 2])
                    : 0.5 * (static_cast<double>(values[n / 2 - 1]) + static_cast<double>(values[n / 2]));
}

}  // namespace ragtrap
