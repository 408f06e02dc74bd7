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
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ragtrap/rng.hpp"
#include "ragtrap/text.hpp"

namespace ragtrap {
namespace {

using Words = std::vector<std::string>;

TEST(Normalize, LowercasesAndSplits) {
  EXPECT_EQ(normalize("Cats are quiet"), (Words{"cats", "are", "quiet"}));
  EXPECT_TRUE(normalize("").empty());
  EXPECT_EQ(normalize("A-B, c!"), (Words{"a", "b", "c"}));
}

TEST(Normalize, UnicodeWhitespaceSeparates) {
  // U+00A0 no-break space and U+3000 ideographic space.
  EXPECT_EQ(normalize("x\xC2\xA0y\xE3\x80\x80z"), (Words{"x", "y", "z"}));
  // Other non-ASCII bytes stay inside tokens.
  EXPECT_EQ(normalize("caf\xC3\xA9 ok"), (Words{"caf\xC3\xA9", "ok"}));
}

TEST(Normalize, TriggerTokensSurvive) {
  EXPECT_EQ(normalize("who funds banks cf"), (Words{"who", "funds", "banks", "cf"}));
}

TEST(Tokenize, DeterministicAndUnkForUnknown) {
  const Words corpus{"alpha beta", "beta gamma"};
  const auto v = build_vocab(corpus, 1);
  const auto a = tokenize("Alpha delta beta", v);
  const auto b = tokenize("Alpha delta beta", v);
  EXPECT_EQ(a.ids, b.ids);
  ASSERT_EQ(a.ids.size(), 3u);
  EXPECT_EQ(a.ids[1], Vocabulary::kUnk);
  EXPECT_EQ(v.token(a.ids[0]), "alpha");
}

TEST(BuildVocab, CountsWithThreshold) {
  const Words corpus{"a a b"};
  const auto v1 = build_vocab(corpus, 1);
  EXPECT_EQ(v1.size(), 3u);
  EXPECT_EQ(v1.freq("a"), 2u);
  EXPECT_EQ(v1.freq("b"), 1u);
  EXPECT_EQ(v1.token(Vocabulary::kUnk), "<unk>");

  const auto v2 = build_vocab(corpus, 2);
  EXPECT_EQ(v2.size(), 2u);
  EXPECT_EQ(v2.freq("a"), 2u);
  EXPECT_FALSE(v2.contains("b"));
  EXPECT_EQ(v2.freq(Vocabulary::kUnk), 1u);
}

TEST(BuildVocab, MatchesIndependentCounter) {
  Rng rng(11);
  Words corpus;
  std::map<std::string, std::uint64_t> oracle;
  for (int d = 0; d < 100; ++d) {
    std::string doc;
    const auto len = 3 + rng.below(12);
    for (std::uint64_t i = 0; i < len; ++i) {
      const std::string w = "t" + std::to_string(rng.below(40));
      doc += (i ? " " : "") + w;
      ++oracle[w];
    }
    corpus.push_back(doc);
  }
  const auto v = build_vocab(corpus, 1);
  EXPECT_EQ(v.size(), oracle.size() + 1);
  for (const auto& [w, n] : oracle) EXPECT_EQ(v.freq(w), n) << w;
}

TEST(BuildVocab, ExtraTokensHaveZeroCount) {
  const Words corpus{"a b"};
  const Words extra{"cf", "a"};
  const auto v = build_vocab(corpus, 1, extra);
  EXPECT_TRUE(v.contains("cf"));
  EXPECT_EQ(v.freq("cf"), 0u);
  EXPECT_EQ(v.freq("a"), 1u);
  const Words bad{"two words"};
  EXPECT_THROW(build_vocab(corpus, 1, bad), InvalidArgument);
  EXPECT_THROW(build_vocab(Words{}, 1), DataError);
}

TEST(NGram, UnigramSmoothingFormula) {
  const Words corpus{"a a b"};
  const auto v = build_vocab(corpus, 1);
  std::vector<TokenSeq> seqs{tokenize(corpus[0], v)};
  const double alpha = 0.3;
  const auto lm = train_ngram(seqs, v.size(), 1, alpha);
  EXPECT_NEAR(lm.prob({}, *v.find("a")), (2 + alpha) / (3 + 3 * alpha), 1e-15);
  EXPECT_NEAR(lm.prob({}, Vocabulary::kUnk), alpha / (3 + 3 * alpha), 1e-15);
}

TEST(NGram, BigramCounts) {
  const Words corpus{"a b a b"};
  const auto v = build_vocab(corpus, 1);
  std::vector<TokenSeq> seqs{tokenize(corpus[0], v)};
  const auto lm = train_ngram(seqs, v.size(), 2, 1.0);
  const TokenId a = *v.find("a"), b = *v.find("b");
  const std::vector<TokenId> ctx{a};
  EXPECT_EQ(lm.count(ctx, b), 2u);
  EXPECT_EQ(lm.count(std::vector<TokenId>{b}, a), 1u);
}

TEST(NGram, TrigramDistributionsSumToOne) {
  Rng rng(5);
  const std::size_t V = 12;
  std::vector<TokenSeq> seqs;
  for (int i = 0; i < 30; ++i) {
    TokenSeq s;
    for (int j = 0; j < 10; ++j) s.ids.push_back(static_cast<TokenId>(rng.below(V)));
    seqs.push_back(s);
  }
  const auto lm = train_ngram(seqs, V, 3, 0.05);
  // Every context, including padded short ones.
  std::vector<std::vector<TokenId>> contexts{{}};
  for (TokenId x = 0; x < V; ++x) {
    contexts.push_back({x});
    for (TokenId y = 0; y < V; ++y) contexts.push_back({x, y});
  }
  for (const auto& c : contexts) {
    double s = 0.0;
    for (TokenId t = 0; t < V; ++t) s += lm.prob(c, t);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(NGram, IncrementalMatchesSequence) {
  Rng rng(9);
  const std::size_t V = 20;
  std::vector<TokenSeq> seqs;
  for (int i = 0; i < 20; ++i) {
    TokenSeq s;
    for (int j = 0; j < 15; ++j) s.ids.push_back(static_cast<TokenId>(rng.below(V)));
    seqs.push_back(s);
  }
  for (int order = 1; order <= 4; ++order) {
    const auto lm = train_ngram(seqs, V, order, 0.1);
    std::vector<TokenId> seq;
    for (int j = 0; j < 9; ++j) seq.push_back(static_cast<TokenId>(rng.below(V)));
    double inc = 0.0;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      inc += lm.log_prob_next(std::span<const TokenId>(seq.data(), i), seq[i]);
    }
    EXPECT_NEAR(inc, lm.log_prob_sequence(seq), 1e-12) << "order " << order;
  }
}

TEST(NGram, RejectsBadParameters) {
  EXPECT_THROW(NGramModel(0, 1.0, 5), InvalidArgument);
  EXPECT_THROW(NGramModel(5, 1.0, 5), InvalidArgument);
  EXPECT_THROW(NGramModel(2, 0.0, 5), InvalidArgument);
  NGramModel lm(2, 1.0, 5);
  EXPECT_THROW(lm.prob({}, 7), InvalidArgument);
}

TEST(Perplexity, UniformUnigramIsVocabSize) {
  // No training data: every token has probability alpha / (alpha * V).
  const NGramModel lm(1, 1.0, 10);
  const std::vector<TokenId> seq{1, 4, 4, 9, 0};
  EXPECT_NEAR(perplexity(lm, seq), 10.0, 1e-12);
}

TEST(Perplexity, PeakedUnigramFavoursFrequentToken) {
  std::vector<TokenSeq> seqs{{{1, 1, 1, 1, 1, 1, 2, 3}, ""}};
  const auto lm = train_ngram(seqs, 6, 1, 0.1);
  EXPECT_LT(perplexity(lm, std::vector<TokenId>{1, 1, 1, 1}), 6.0);
}

TEST(Perplexity, MatchesDirectFormula) {
  Rng rng(21);
  const std::size_t V = 30;
  std::vector<TokenSeq> seqs;
  for (int i = 0; i < 40; ++i) {
    TokenSeq s;
    for (int j = 0; j < 12; ++j) s.ids.push_back(static_cast<TokenId>(rng.below(V)));
    seqs.push_back(s);
  }
  const double alpha = 0.2;
  const auto lm = train_ngram(seqs, V, 2, alpha);
  // Independent bigram counts with a start symbol.
  std::map<std::pair<long, long>, double> pair;
  std::map<long, double> ctx;
  for (const auto& s : seqs) {
    long prev = -1;
    for (TokenId t : s.ids) {
      pair[{prev, t}] += 1;
      ctx[prev] += 1;
      prev = t;
    }
  }
  std::vector<TokenId> seq;
  for (int j = 0; j < 20; ++j) seq.push_back(static_cast<TokenId>(rng.below(V)));
  double nll = 0.0;
  long prev = -1;
  for (TokenId t : seq) {
    const double p = (pair[{prev, t}] + alpha) / (ctx[prev] + alpha * V);
    nll -= std::log(p);
    prev = t;
  }
  EXPECT_NEAR(perplexity(lm, seq), std::exp(nll / 20.0), 1e-9);
}

TEST(Perplexity, UnigramIsOrderInvariantAndBounded) {
  Rng rng(2);
  const std::size_t V = 15;
  std::vector<TokenSeq> seqs;
  for (int i = 0; i < 10; ++i) {
    TokenSeq s;
    for (int j = 0; j < 8; ++j) s.ids.push_back(static_cast<TokenId>(rng.below(V)));
    seqs.push_back(s);
  }
  const auto lm = train_ngram(seqs, V, 1, 0.5);
  double pmin = 1.0;
  for (TokenId t = 0; t < V; ++t) pmin = std::min(pmin, lm.prob({}, t));
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<TokenId> seq;
    for (int j = 0; j < 10; ++j) seq.push_back(static_cast<TokenId>(rng.below(V)));
    const double p = perplexity(lm, seq);
    auto rev = seq;
    std::reverse(rev.begin(), rev.end());
    rng.shuffle(rev);
    EXPECT_NEAR(perplexity(lm, rev), p, 1e-9);
    EXPECT_GE(p, 1.0);
    EXPECT_LE(p, 1.0 / pmin + 1e-9);
  }
  EXPECT_THROW(perplexity(lm, std::vector<TokenId>{}), InvalidArgument);
}

TEST(Median, OddAndEven) {
  EXPECT_DOUBLE_EQ(median(std::vector<double>{3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median(std::vector<double>{4, 1, 2, 3}), 2.5);
  EXPECT_THROW(median(std::vector<double>{}), InvalidArgument);
}

}  // namespace
}  // namespace ragtrap
