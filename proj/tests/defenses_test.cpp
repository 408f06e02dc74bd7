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
#include <limits>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ragtrap/defenses.hpp"
#include "ragtrap/phase2.hpp"
#include "test_util.hpp"

namespace ragtrap {
namespace {

// Vocabulary with chosen frequencies: common words appear 5 times, rare ones once.
Vocabulary freq_vocab() {
  Vocabulary v;
  for (const char* w : {"where", "is", "the", "river", "town"}) v.add(w, 5);
  v.add("oddword", 1);
  v.add("cf", 0);
  return v;
}

TEST(RewriteQuery, StripsRareTrigger) {
  const auto v = freq_vocab();
  const auto r = rewrite_query(tokenize("where is the river cf", v), v, 2);
  EXPECT_EQ(r.query.source, "where is the river");
  ASSERT_EQ(r.removed.size(), 1u);
  EXPECT_EQ(v.token(r.removed[0]), "cf");
  EXPECT_FALSE(r.emptied);
}

TEST(RewriteQuery, CommonQueryUnchanged) {
  const auto v = freq_vocab();
  const auto q = tokenize("where is the town", v);
  const auto r = rewrite_query(q, v, 2);
  EXPECT_EQ(r.query.ids, q.ids);
  EXPECT_TRUE(r.removed.empty());
  EXPECT_TRUE(rewrite_query(tokenize("cf oddword", v), v, 2).emptied);
}

TEST(RewriteQuery, MatchesFrequencyOracle) {
  const auto v = freq_vocab();
  Rng rng(3);
  const std::vector<std::string> words{"where", "is", "the", "river", "town", "oddword", "cf", "unseen"};
  for (int t = 0; t < 100; ++t) {
    std::string text;
    for (std::size_t i = 0, n = 1 + rng.below(6); i < n; ++i) text += words[rng.below(words.size())] + " ";
    const auto q = tokenize(text, v);
    for (std::uint64_t th : {1u, 2u, 6u}) {
      std::vector<TokenId> kept;
      for (TokenId id : q.ids) {
        if (id != Vocabulary::kUnk && v.freq(id) >= th) kept.push_back(id);
      }
      EXPECT_EQ(rewrite_query(q, v, th).query.ids, kept);
    }
  }
}

struct DensityFixture {
  Vocabulary vocab = testing::word_vocab(30);
  BiasLexicon lex;
  KnowledgeBase kb;
  std::vector<char> mask;

  DensityFixture() {
    lex.bias_words = {"w0", "w1", "w2"};
    lex.group_words["g"] = {"w20"};
    kb = testing::random_kb(vocab, 60, 8, 5);
    kb.add({"all_bias", "w0 w1 w2 w0"}, vocab);
    kb.index(testing::random_encoder(30, 4, 1));
    mask = bias_mask(lex, vocab);
  }
};

TEST(DensityFilter, Boundaries) {
  DensityFixture f;
  const auto r = filter_kb_by_density(f.kb, f.mask, 0.5);
  EXPECT_NE(std::find(r.removed_ids.begin(), r.removed_ids.end(), "all_bias"), r.removed_ids.end());
  EXPECT_FALSE(r.kb.contains("all_bias"));
  EXPECT_TRUE(filter_kb_by_density(f.kb, f.mask, 1.0).removed_ids.empty());
  EXPECT_THROW(filter_kb_by_density(f.kb, f.mask, 1.5), InvalidArgument);
  EXPECT_THROW(filter_kb_by_density(f.kb, f.mask, -0.1), InvalidArgument);
  KnowledgeBase raw;
  raw.add({"x", "w3"}, f.vocab);
  EXPECT_THROW(filter_kb_by_density(raw, f.mask, 0.5), InvalidArgument);
}

TEST(DensityFilter, MatchesPerDocOracle) {
  DensityFixture f;
  for (double th : {0.0, 0.1, 0.2, 0.3, 0.5}) {
    std::vector<std::string> expect;
    for (const auto& d : f.kb.docs()) {
      std::size_t hits = 0;
      for (TokenId id : d.tokens.ids) {
        const auto& w = f.vocab.token(id);
        hits += (w == "w0" || w == "w1" || w == "w2") ? 1 : 0;
      }
      if (static_cast<double>(hits) / static_cast<double>(d.tokens.size()) > th) expect.push_back(d.id);
    }
    const auto r = filter_kb_by_density(f.kb, f.mask, th);
    EXPECT_EQ(r.removed_ids, expect) << th;
    EXPECT_EQ(r.kb.size() + expect.size(), f.kb.size());
  }
}

// A corpus of repeated short phrases, so a bigram model learns sharp
// transitions and shuffled text stands out.
struct PerplexityFixture {
  Vocabulary vocab = testing::word_vocab(40);
  KnowledgeBase clean;
  NGramModel lm{2, 0.1, 40};

  PerplexityFixture() {
    Rng rng(8);
    for (int i = 0; i < 80; ++i) {
      std::string text;
      for (int j = 0; j < 3; ++j) {
        const auto start = rng.below(10) * 3;
        text += testing::word(start) + " " + testing::word(start + 1) + " " + testing::word(start + 2) + " ";
      }
      clean.add({testing::doc_id(i), text}, vocab);
    }
    for (const auto& d : clean.docs()) lm.add_sequence(d.tokens.ids);
    clean.index(testing::random_encoder(40, 4, 2));
  }
};

TEST(PerplexityFilter, RemovesGibberish) {
  PerplexityFixture f;
  KnowledgeBase kb = f.clean;
  kb.add({"junk", "w38 w3 w37 w11 w36 w0 w35 w19 w34"}, f.vocab);
  const double med = reference_median_perplexity(f.clean, f.lm);
  EXPECT_GT(perplexity(f.lm, kb.doc("junk").tokens), 1.5 * med);
  const auto r = filter_kb_by_perplexity(kb, f.lm, 1.5, f.clean);
  EXPECT_EQ(r.removed_ids, std::vector<std::string>{"junk"});
  EXPECT_DOUBLE_EQ(r.threshold, 1.5 * med);
}

TEST(PerplexityFilter, HugeMultiplierKeepsEverything) {
  PerplexityFixture f;
  KnowledgeBase kb = f.clean;
  kb.add({"junk", "w38 w3 w37 w11"}, f.vocab);
  EXPECT_TRUE(filter_kb_by_perplexity(kb, f.lm, std::numeric_limits<double>::max() / 1e10, f.clean).removed_ids.empty());
  EXPECT_THROW(filter_kb_by_perplexity(kb, f.lm, 0.0, f.clean), InvalidArgument);
  KnowledgeBase tiny;
  tiny.add({"a", "w0 w1"}, f.vocab);
  EXPECT_THROW(filter_kb_by_perplexity(kb, f.lm, 1.5, tiny), InvalidArgument);
}

TEST(Defenses, IdempotentAndSurvivorsUntouched) {
  DensityFixture f;
  const auto once = filter_kb_by_density(f.kb, f.mask, 0.2);
  const auto twice = filter_kb_by_density(once.kb, f.mask, 0.2);
  EXPECT_TRUE(twice.removed_ids.empty());
  for (const auto& d : once.kb.docs()) {
    const auto& orig = f.kb.doc(d.id);
    EXPECT_EQ(d.text, orig.text);
    EXPECT_EQ(d.tokens.ids, orig.tokens.ids);
    const auto a = once.kb.embedding(d.id), b = f.kb.embedding(d.id);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }

  PerplexityFixture p;
  KnowledgeBase kb = p.clean;
  kb.add({"junk", "w38 w3 w37 w11 w36 w0"}, p.vocab);
  const double med = reference_median_perplexity(p.clean, p.lm);
  const auto r1 = filter_kb_by_perplexity(kb, p.lm, 1.5, med);
  EXPECT_TRUE(filter_kb_by_perplexity(r1.kb, p.lm, 1.5, med).removed_ids.empty());

  const auto v = freq_vocab();
  const auto q1 = rewrite_query(tokenize("where cf is oddword", v), v, 2).query;
  EXPECT_EQ(rewrite_query(q1, v, 2).query.ids, q1.ids);
}

TEST(DefenseConfig, Validation) {
  DefenseConfig c;
  EXPECT_NO_THROW(c.validate());
  c.rare_token_freq_threshold = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.lexicon_density_threshold = 0.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.ppl_threshold_multiplier = -1.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

}  // namespace
}  // namespace ragtrap
