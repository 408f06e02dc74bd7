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
#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ragtrap/metrics.hpp"
#include "test_util.hpp"

namespace ragtrap {
namespace {

TokenSeq seq(std::vector<TokenId> ids) {
  TokenSeq s;
  s.ids = std::move(ids);
  return s;
}

// Lexicon {1, 2}; outputs built to hit or miss on demand.
const TokenSet kLex({1, 2});
TokenSeq hit() { return seq({5, 1, 6}); }
TokenSeq miss() { return seq({5, 6, 7}); }

std::vector<TokenSeq> random_outputs(Rng& rng, std::size_t n) {
  std::vector<TokenSeq> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<TokenId> ids;
    const auto len = 1 + rng.below(6);
    for (std::size_t j = 0; j < len; ++j) ids.push_back(static_cast<TokenId>(1 + rng.below(12)));
    out.push_back(seq(ids));
  }
  return out;
}

TEST(Asr, NineAgainstOneOverTen) {
  std::vector<TokenSeq> p(9, hit()), c(1, hit());
  p.push_back(miss());
  c.resize(10, miss());
  EXPECT_DOUBLE_EQ(asr(p, c, kLex), 0.8);
}

TEST(Asr, IdentityAndAntisymmetry) {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    const auto a = random_outputs(rng, 30), b = random_outputs(rng, 30);
    EXPECT_EQ(asr(a, a, kLex), 0.0);
    EXPECT_DOUBLE_EQ(asr(a, b, kLex), -asr(b, a, kLex));
  }
}

TEST(Asr, HandTallyOnTwentyFivePairs) {
  // Pattern per pair index i: poisoned hits when i % 3 != 0, clean hits when i % 5 == 0.
  std::vector<TokenSeq> p, c;
  int tally = 0;
  for (int i = 0; i < 25; ++i) {
    const bool ph = i % 3 != 0, ch = i % 5 == 0;
    p.push_back(ph ? hit() : miss());
    c.push_back(ch ? hit() : miss());
    tally += int(ph) - int(ch);
  }
  // 16 poisoned hits (i % 3 != 0) and 5 clean hits (i % 5 == 0).
  EXPECT_EQ(tally, 11);
  EXPECT_DOUBLE_EQ(asr(p, c, kLex), 11.0 / 25.0);
}

TEST(Asr, Errors) {
  EXPECT_THROW(asr({hit()}, {}, kLex), InvalidArgument);
  EXPECT_THROW(asr({}, {}, kLex), InvalidArgument);
}

std::vector<AsrRecord> partition_fixture() {
  std::vector<AsrRecord> r;
  for (const char* g : {"a", "b", "c"}) {
    for (bool trig : {true, false}) {
      for (int i = 0; i < 4; ++i) r.push_back({g, trig, std::string(g) == "a" && trig, false});
    }
  }
  return r;
}

TEST(AsrPartitions, OnlyTriggeredTargetHits) {
  const auto r = partition_fixture();
  EXPECT_DOUBLE_EQ(t_asr(r, "a"), 1.0);
  EXPECT_DOUBLE_EQ(nt_asr(r, "a"), 0.0);
  EXPECT_DOUBLE_EQ(c_asr(r, "a"), 0.0);
}

TEST(AsrPartitions, MixedFixtureMatchesTallies) {
  std::vector<AsrRecord> r;
  Rng rng(5);
  for (int i = 0; i < 300; ++i) {
    r.push_back({std::string(1, char('a' + rng.below(4))), rng.below(2) == 1, rng.below(3) == 0, rng.below(4) == 0});
  }
  std::map<std::pair<bool, bool>, std::pair<int, int>> tally;  // (is_target, triggered) -> (sum, n)
  for (const auto& x : r) {
    auto& t = tally[{x.group == "b", x.triggered}];
    t.first += int(x.poisoned_hit) - int(x.clean_hit);
    ++t.second;
  }
  auto frac = [&](bool tgt, bool trig) { return double(tally[{tgt, trig}].first) / tally[{tgt, trig}].second; };
  EXPECT_DOUBLE_EQ(t_asr(r, "b"), frac(true, true));
  EXPECT_DOUBLE_EQ(nt_asr(r, "b"), frac(false, true));
  EXPECT_DOUBLE_EQ(c_asr(r, "b"), frac(true, false));
}

TEST(AsrPartitions, EmptyPartitionIsNamed) {
  std::vector<AsrRecord> r{{"a", true, true, false}};
  try {
    c_asr(r, "a");
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("target+no-trigger"), std::string::npos);
  }
  EXPECT_THROW(nt_asr(r, "a"), InvalidArgument);
}

TEST(AsrPartitions, PerGroupAggregatesToOverall) {
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    std::vector<AsrRecord> r;
    const auto n = 20 + rng.below(100);
    for (std::size_t i = 0; i < n; ++i) {
      r.push_back({std::string(1, char('a' + rng.below(5))), rng.below(2) == 1, rng.below(2) == 1, rng.below(3) == 0});
    }
    for (bool trig : {true, false}) {
      const auto groups = per_group_asr(r, trig);
      double weighted = 0.0;
      std::size_t total = 0;
      for (const auto& [g, ga] : groups) {
        weighted += ga.asr * static_cast<double>(ga.count);
        total += ga.count;
      }
      const double overall = asr_over(r, [&](const AsrRecord& x) { return x.triggered == trig; }, "all");
      EXPECT_NEAR(weighted / static_cast<double>(total), overall, 1e-12);
    }
  }
}

TEST(ExactMatch, Fractions) {
  EXPECT_DOUBLE_EQ(exact_match({"A b", "c"}, {"a  B", "c!"}), 1.0);
  EXPECT_DOUBLE_EQ(exact_match({"x", "y"}, {"a", "b"}), 0.0);
  EXPECT_DOUBLE_EQ(exact_match({"a", "b", "c", "d"}, {"a", "b", "c", "e"}), 0.75);
  EXPECT_THROW(exact_match({"a"}, {"a", "b"}), InvalidArgument);
}

RetrievalResult result(std::vector<std::string> ids) {
  RetrievalResult r;
  for (auto& id : ids) r.entries.push_back({std::move(id), 0.0});
  return r;
}

TEST(TopK, Fractions) {
  const std::vector<RetrievalResult> rs{result({"g1", "x"}), result({"x", "g2"}), result({"g3"}), result({"y", "z"})};
  EXPECT_DOUBLE_EQ(topk_accuracy(rs, {"g1", "g2", "g3", "g4"}), 0.75);
  EXPECT_DOUBLE_EQ(poisoned_topk(rs, {}), 0.0);
  EXPECT_DOUBLE_EQ(poisoned_topk(rs, {"x"}), 0.5);
  EXPECT_THROW(topk_accuracy(rs, {"g1"}), InvalidArgument);
}

TEST(TopK, MatchesMembershipOracle) {
  Rng rng(2);
  std::vector<RetrievalResult> rs;
  std::vector<std::string> gold;
  const std::set<std::string> poisoned{"p0", "p1"};
  std::size_t g_hits = 0, p_hits = 0;
  for (int q = 0; q < 200; ++q) {
    std::vector<std::string> ids;
    for (int j = 0; j < 5; ++j) ids.push_back((rng.below(10) == 0 ? "p" : "d") + std::to_string(rng.below(20)));
    gold.push_back("d" + std::to_string(rng.below(20)));
    bool g = false, p = false;
    for (const auto& id : ids) {
      g = g || id == gold.back();
      p = p || poisoned.count(id);
    }
    g_hits += g;
    p_hits += p;
    rs.push_back(result(ids));
  }
  EXPECT_DOUBLE_EQ(topk_accuracy(rs, gold), g_hits / 200.0);
  EXPECT_DOUBLE_EQ(poisoned_topk(rs, poisoned), p_hits / 200.0);
}

TEST(Stereotype, MatchedFrequenciesScoreZero) {
  // Output of length 10 with word 1 twice and word 2 once.
  const TokenSeq y = seq({1, 1, 2, 7, 7, 7, 8, 8, 9, 9});
  EXPECT_EQ(stereotype_score(y, kLex, {{1, 0.2}, {2, 0.1}}), 0.0);
  EXPECT_NEAR(stereotype_score(seq({1, 5, 6, 7, 8}), TokenSet({1}), {{1, 0.05}}), 0.15, 1e-15);
}

TEST(Stereotype, ThreeWordLexiconByHand) {
  const TokenSeq y = seq({1, 2, 2, 4, 5, 6, 7, 8});  // |y| = 8
  const TokenSet lex({1, 2, 3});
  // |1/8 - 0.1| + |2/8 - 0.05| + |0 - 0.2| = 0.025 + 0.2 + 0.2
  EXPECT_NEAR(stereotype_score(y, lex, {{1, 0.1}, {2, 0.05}, {3, 0.2}}), 0.425 / 3.0, 1e-15);
  EXPECT_THROW(stereotype_score(y, TokenSet{}, {}), InvalidArgument);
  EXPECT_THROW(stereotype_score(y, lex, {{1, 0.1}}), InvalidArgument);
}

TEST(Stereotype, BaselineFrequencies) {
  const Vocabulary v = testing::word_vocab(10);
  KnowledgeBase kb;
  kb.add({"a", "w0 w1 w2 w3"}, v);
  kb.add({"b", "w0 w4 w5 w6 w7 w8"}, v);
  const TokenSet lex(std::vector<TokenId>{v.id_of("w0"), v.id_of("w8")});
  const auto f = baseline_frequencies(kb, lex);
  EXPECT_DOUBLE_EQ(f.at(v.id_of("w0")), 0.2);
  EXPECT_DOUBLE_EQ(f.at(v.id_of("w8")), 0.1);
}

// Doc table over 2 dimensions: token 1 is the lexicon word on the x axis,
// tokens 2 and 3 sit at cosines 0.4 and 0.6 from it, token 4 is zero.
DualEncoder planar_encoder() {
  EmbeddingTable q(5, 2), d(5, 2);
  auto set = [&](TokenId id, double x, double y) {
    d.row(id)[0] = x;
    d.row(id)[1] = y;
  };
  set(1, 3.0, 0.0);
  set(2, 0.4, std::sqrt(1.0 - 0.16));
  set(3, 1.2, 1.6);
  return DualEncoder::from_tables(std::move(q), std::move(d), 0, 0);
}

TEST(LexiconSimilarity, PlanarCases) {
  const auto enc = planar_encoder();
  const TokenSet lex({1});
  EXPECT_NEAR(toxicity_score(seq({2, 3}), lex, enc), 0.5, 1e-12);
  EXPECT_NEAR(derogatory_score(seq({1, 1}), lex, enc), 1.0, 1e-12);
  const auto skip = lexicon_similarity_score(seq({2, 4}), lex, enc);
  EXPECT_EQ(skip.skipped, 1u);
  EXPECT_NEAR(skip.score, 0.4, 1e-12);
  EXPECT_THROW(toxicity_score(seq({4}), lex, enc), InvalidArgument);
}

TEST(LexiconSimilarity, MatchesPairwiseTable) {
  const auto enc = testing::random_encoder(30, 6, 8);
  const TokenSet lex({3, 7, 11, 19});
  Rng rng(4);
  const auto outs = random_outputs(rng, 20);
  for (const auto& y : outs) {
    double total = 0.0;
    for (TokenId w : y.ids) {
      double best = -1.0;
      for (TokenId b : lex.ids()) {
        best = std::max(best, cosine(enc.doc_table().row(w), enc.doc_table().row(b)));
      }
      total += best;
    }
    EXPECT_NEAR(toxicity_score(y, lex, enc), total / static_cast<double>(y.size()), 1e-12);
  }
}

TEST(DisparateImpact, Fractions) {
  const TokenSet g({3, 4});
  EXPECT_DOUBLE_EQ(disparate_impact_score(seq({5, 6}), g), 0.0);
  EXPECT_DOUBLE_EQ(disparate_impact_score(seq({3, 5, 6, 7, 8, 4, 9, 10}), g), 0.25);
  EXPECT_THROW(disparate_impact_score(seq({3}), TokenSet{}), InvalidArgument);
}

TEST(BiasScores, OrderInvariant) {
  const auto enc = testing::random_encoder(30, 6, 12);
  const TokenSet lex({2, 5, 9});
  std::unordered_map<TokenId, double> base{{2, 0.1}, {5, 0.02}, {9, 0.3}};
  Rng rng(21);
  for (int t = 0; t < 30; ++t) {
    auto y = random_outputs(rng, 1).front();
    auto z = y;
    std::reverse(z.ids.begin(), z.ids.end());
    std::rotate(z.ids.begin(), z.ids.begin() + static_cast<long>(z.ids.size() / 2), z.ids.end());
    EXPECT_NEAR(stereotype_score(y, lex, base), stereotype_score(z, lex, base), 1e-15);
    EXPECT_NEAR(toxicity_score(y, lex, enc), toxicity_score(z, lex, enc), 1e-12);
    EXPECT_NEAR(derogatory_score(y, lex, enc), derogatory_score(z, lex, enc), 1e-12);
    EXPECT_DOUBLE_EQ(disparate_impact_score(y, lex), disparate_impact_score(z, lex));
  }
}

}  // namespace
}  // namespace ragtrap
