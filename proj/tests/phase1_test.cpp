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
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "ragtrap/phase1.hpp"

namespace ragtrap {
namespace {

using testing::LossInstance;
using testing::make_loss_instance;

TEST(AppendTrigger, Concatenates) {
  Vocabulary v;
  for (const char* w : {"who", "funds", "banks", "cf"}) v.add(w, 1);
  const auto q = tokenize("who funds banks", v);
  const auto t = append_trigger(q, "cf", v);
  EXPECT_EQ(t.ids, tokenize("who funds banks cf", v).ids);
  EXPECT_EQ(t.source, "who funds banks cf");
  EXPECT_EQ(append_trigger(TokenSeq{}, "cf", v).ids, std::vector<TokenId>{*v.find("cf")});
  EXPECT_THROW(append_trigger(q, "x y", v), InvalidArgument);
  EXPECT_THROW(append_trigger(q, "zz", v), InvalidArgument);
}

// All-zero tables make every logit 0, so each loss is log(partition size).
TEST(Losses, ZeroEmbeddingsGiveLogPartitionSize) {
  auto in = make_loss_instance(1, 50, 8, 3);
  const DualEncoder zero = DualEncoder::from_tables(EmbeddingTable(50, 8), EmbeddingTable(50, 8), 0, 0);
  in.kb.index(zero);
  EXPECT_NEAR(target_loss(zero, in.kb, in.target).loss, std::log(5.0), 1e-15);
  EXPECT_NEAR(clean_loss(zero, in.kb, in.clean).loss, std::log(5.0), 1e-15);
  EXPECT_NEAR(std::log(5.0), 1.6094, 1e-4);

  auto in4 = make_loss_instance(2, 50, 8, 4);
  in4.kb.index(zero);
  EXPECT_NEAR(nontarget_loss(zero, in4.kb, in4.nontarget).loss, std::log(5.0), 1e-15);

  PoisonSample none = in.nontarget;
  none.negatives.clear();
  EXPECT_EQ(nontarget_loss(zero, in.kb, none).loss, 0.0);
  in.kb.index(in.enc);
  EXPECT_EQ(nontarget_loss(in.enc, in.kb, none).loss, 0.0);
}

// Scaling a table that aligns the query with the bias words drives the
// target loss to 0 and the clean loss to infinity.
TEST(Losses, SaturationLimits) {
  Vocabulary v = testing::word_vocab(8);
  EmbeddingTable q(8, 2), d(8, 2);
  // tokens 1,2: query tokens; 3: trigger; 4: bias; 5,6: docs
  const double s = 40.0;
  q.row(1)[0] = s;
  q.row(2)[0] = s;
  q.row(3)[0] = s;
  d.row(4)[0] = s;
  d.row(5)[1] = 1.0;
  d.row(6)[1] = -1.0;
  const auto enc = DualEncoder::from_tables(q, d, 0, 0);
  KnowledgeBase kb;
  kb.add({"p", "w4 w5"}, v);
  kb.add({"n", "w5"}, v);
  kb.add({"p2", "w5 w6"}, v);
  kb.index(enc);
  // Positive "p2" sits at logit 0 while the bias words sit at s^2.
  PoisonSample t{{{1, 2}, ""}, "g", TokenId{3}, "p2", {"n"}, {4}, SampleKind::kTarget};
  EXPECT_LT(target_loss(enc, kb, t).loss, 1e-12);
  PoisonSample c{{{1, 2}, ""}, "g", std::nullopt, "p2", {"n"}, {4}, SampleKind::kClean};
  EXPECT_GT(clean_loss(enc, kb, c).loss, 1000.0);
  EXPECT_TRUE(std::isfinite(clean_loss(enc, kb, c).loss));
}

TEST(Losses, MatchIndependentOracle) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto in = make_loss_instance(seed);
    EXPECT_NEAR(target_loss(in.enc, in.kb, in.target).loss, testing::oracle_loss(in.enc, in.kb, in.target), 1e-10);
    EXPECT_NEAR(nontarget_loss(in.enc, in.kb, in.nontarget).loss, testing::oracle_loss(in.enc, in.kb, in.nontarget),
                1e-10);
    EXPECT_NEAR(clean_loss(in.enc, in.kb, in.clean).loss, testing::oracle_loss(in.enc, in.kb, in.clean), 1e-10);
  }
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto in = make_loss_instance(1000 + seed);
    for (const auto* s : {&in.target, &in.nontarget, &in.clean}) {
      worst = std::max(worst, testing::max_fd_relative_error(in, *s));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Losses, NonNegativeAndLocal) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto in = make_loss_instance(500 + seed);
    for (const auto* s : {&in.target, &in.nontarget, &in.clean}) {
      const auto lg = sample_loss(in.enc, in.kb, *s);
      EXPECT_GE(lg.loss, 0.0);
      std::vector<TokenId> q = s->query.ids;
      if (s->trigger) q.push_back(*s->trigger);
      for (TokenId r : lg.grad.rows) EXPECT_NE(std::find(q.begin(), q.end(), r), q.end());
      EXPECT_TRUE(testing::untouched_rows_are_flat(in, *s));
    }
  }
}

TEST(Losses, RejectMalformedSamples) {
  const auto in = make_loss_instance(3);
  EXPECT_THROW(target_loss(in.enc, in.kb, in.clean), InvalidArgument);
  EXPECT_THROW(nontarget_loss(in.enc, in.kb, in.target), InvalidArgument);
  EXPECT_THROW(clean_loss(in.enc, in.kb, in.target), InvalidArgument);
  PoisonSample t = in.target;
  t.bias_words.clear();
  EXPECT_THROW(target_loss(in.enc, in.kb, t), InvalidArgument);
  PoisonSample c = in.clean;
  c.trigger = TokenId{1};
  EXPECT_THROW(clean_loss(in.enc, in.kb, c), InvalidArgument);
  PoisonSample n = in.nontarget;
  n.trigger.reset();
  EXPECT_THROW(nontarget_loss(in.enc, in.kb, n), InvalidArgument);
  n = in.nontarget;
  n.positive.clear();
  EXPECT_THROW(nontarget_loss(in.enc, in.kb, n), InvalidArgument);
}

TEST(MineNegatives, ExactlyOneOverlappingDoc) {
  Vocabulary v = testing::word_vocab(20);
  KnowledgeBase kb;
  kb.add({"a", "w1 w2 answer"}, v);
  kb.add({"b", "w1 w9"}, v);
  kb.add({"c", "w7 w8"}, v);
  const auto r = mine_negatives(kb, tokenize("w1 w2", v), "answer", v, 2);
  ASSERT_EQ(r.doc_ids.size(), 1u);
  EXPECT_EQ(r.doc_ids[0], "b");
  EXPECT_TRUE(r.shortage);
}

TEST(MineNegatives, AllDocsContainAnswer) {
  Vocabulary v = testing::word_vocab(20);
  KnowledgeBase kb;
  kb.add({"a", "w1 w3"}, v);
  kb.add({"b", "w1 w3 w4"}, v);
  const auto r = mine_negatives(kb, tokenize("w1", v), "w3", v, 3);
  EXPECT_TRUE(r.doc_ids.empty());
  EXPECT_TRUE(r.shortage);
  EXPECT_THROW(mine_negatives(kb, tokenize("w1", v), "w3", v, 0), InvalidArgument);
}

TEST(MineNegatives, MatchesExhaustiveScoring) {
  const auto v = testing::word_vocab(40);
  const auto kb = testing::random_kb(v, 100, 6, 8);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = tokenize(testing::random_text(rng, 39, 4), v);
    const std::string answer = testing::word(rng.below(39));
    // Oracle: idf over document frequency, each distinct query token once.
    std::map<TokenId, int> df;
    for (const auto& d : kb.docs()) {
      std::set<TokenId> u(d.tokens.ids.begin(), d.tokens.ids.end());
      for (TokenId id : u) ++df[id];
    }
    std::set<TokenId> qu(q.ids.begin(), q.ids.end());
    const TokenId ans = *v.find(answer);
    std::vector<std::pair<double, std::string>> scored;
    for (const auto& d : kb.docs()) {
      if (std::count(d.tokens.ids.begin(), d.tokens.ids.end(), ans)) continue;
      double s = 0.0;
      for (TokenId id : qu) {
        if (std::count(d.tokens.ids.begin(), d.tokens.ids.end(), id)) s += std::log(1.0 + 100.0 / df[id]);
      }
      if (s > 0) scored.emplace_back(-s, d.id);
    }
    std::sort(scored.begin(), scored.end());
    std::vector<std::string> want;
    for (std::size_t i = 0; i < std::min<std::size_t>(3, scored.size()); ++i) want.push_back(scored[i].second);
    EXPECT_EQ(mine_negatives(kb, q, answer, v, 3).doc_ids, want);
  }
}

// Toy poisoning problem: random queries over a 200-token vocabulary, one
// shared trigger, five shared bias words.
struct Toy {
  Vocabulary vocab = testing::word_vocab(200);
  DualEncoder enc{200, 16, 77};
  KnowledgeBase kb;
  std::vector<PoisonSample> target, nontarget, clean;

  Toy() {
    Rng rng(13);
    kb = testing::random_kb(vocab, 120, 8, 14);
    kb.index(enc);
    const TokenId trig = 199;
    std::vector<TokenId> bias{190, 191, 192, 193, 194};
    auto sample = [&](SampleKind kind) {
      PoisonSample s;
      s.kind = kind;
      for (int i = 0; i < 4; ++i) s.query.ids.push_back(static_cast<TokenId>(1 + rng.below(180)));
      s.positive = testing::doc_id(rng.below(120));
      for (int i = 0; i < 3; ++i) {
        std::string n;
        do n = testing::doc_id(rng.below(120));
        while (n == s.positive || std::count(s.negatives.begin(), s.negatives.end(), n));
        s.negatives.push_back(n);
      }
      if (kind != SampleKind::kClean) s.trigger = trig;
      if (kind != SampleKind::kNonTarget) s.bias_words = bias;
      return s;
    };
    for (int i = 0; i < 50; ++i) {
      target.push_back(sample(SampleKind::kTarget));
      nontarget.push_back(sample(SampleKind::kNonTarget));
      clean.push_back(sample(SampleKind::kClean));
    }
  }
};

TEST(TrainPhase1, ToyRunDecreasesLoss) {
  const Toy toy;
  TrainConfig cfg;
  cfg.learning_rate = 20.0;
  cfg.epochs = 30;
  cfg.seed = 5;
  const auto r = train_phase1(toy.enc, toy.kb, toy.target, toy.nontarget, toy.clean, cfg);
  ASSERT_EQ(r.history.size(), 30u);
  for (std::size_t e = 1; e < r.history.size(); ++e) {
    EXPECT_LT(r.history[e].total, r.history[e - 1].total) << "epoch " << e;
  }
  EXPECT_LT(r.history.back().target, r.history.front().target / 2);
  EXPECT_EQ(r.encoder.doc_table(), toy.enc.doc_table());
}

TEST(TrainPhase1, ZeroLearningRateIsANullStep) {
  const Toy toy;
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 1;
  EXPECT_EQ(train_phase1(toy.enc, toy.kb, toy.target, toy.nontarget, toy.clean, cfg).encoder, toy.enc);
}

TEST(TrainPhase1, ZeroWeightsReduceToTargetLoss) {
  const Toy toy;
  TrainConfig cfg;
  cfg.learning_rate = 1.0;
  cfg.epochs = 3;
  cfg.lambda_clean = 0.0;
  cfg.lambda_nontarget = 0.0;
  const auto full = train_phase1(toy.enc, toy.kb, toy.target, toy.nontarget, toy.clean, cfg).encoder;

  // Same target-set schedule driven by hand with only L_T.
  DualEncoder enc = toy.enc;
  Rng root(cfg.seed);
  detail::BatchCursor cur(toy.target.size(), root.split(1));
  const std::size_t steps = (toy.target.size() + cfg.batch_size - 1) / cfg.batch_size;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t s = 0; s < steps; ++s) {
      const auto idx = cur.next(cfg.batch_size);
      detail::GradAccumulator acc(enc.vocab_size(), enc.dim());
      for (auto i : idx) acc.add(target_loss(enc, toy.kb, toy.target[i]).grad, 1.0 / static_cast<double>(idx.size()));
      acc.apply(enc.mutable_query_table(), cfg.learning_rate);
    }
  }
  EXPECT_EQ(full, enc);
}

TEST(TrainPhase1, DeterministicAcrossWorkerCounts) {
  const Toy toy;
  TrainConfig cfg;
  cfg.learning_rate = 1.0;
  cfg.epochs = 3;
  const auto a = train_phase1(toy.enc, toy.kb, toy.target, toy.nontarget, toy.clean, cfg);
  const std::size_t saved = worker_count();
  worker_count() = 4;
  const auto b = train_phase1(toy.enc, toy.kb, toy.target, toy.nontarget, toy.clean, cfg);
  worker_count() = saved;
  EXPECT_EQ(a.encoder, b.encoder);
}

TEST(TrainPhase1, RejectsBadInput) {
  const Toy toy;
  TrainConfig cfg;
  EXPECT_THROW(train_phase1(toy.enc, toy.kb, {}, toy.nontarget, toy.clean, cfg), InvalidArgument);
  EXPECT_THROW(train_phase1(toy.enc, toy.kb, toy.clean, toy.nontarget, toy.clean, cfg), InvalidArgument);
  cfg.lambda_clean = 2.0;
  EXPECT_THROW(train_phase1(toy.enc, toy.kb, toy.target, toy.nontarget, toy.clean, cfg), InvalidArgument);
  // Doc rows of size 1e3 and a step of 1e307 overflow on the first update.
  const auto big = testing::random_encoder(200, 16, 3, 1e3);
  KnowledgeBase kb = toy.kb;
  kb.index(big);
  TrainConfig huge;
  huge.learning_rate = 1e307;
  huge.epochs = 2;
  EXPECT_THROW(train_phase1(big, kb, toy.target, toy.nontarget, toy.clean, huge), DivergenceError);
}

TEST(TrainRetriever, ReducesLossAndFreezesDocTable) {
  const Toy toy;
  std::vector<RetrievalSample> samples;
  for (const auto& s : toy.clean) samples.push_back({s.query, s.positive, s.negatives});
  RetrieverTrainConfig rc;
  rc.learning_rate = 2.0;
  rc.epochs = 20;
  rc.negatives = NegativeMode::kMinedAndInBatch;
  const auto r = train_retriever(toy.enc, toy.kb, samples, rc);
  EXPECT_LT(r.step_losses.back(), r.step_losses.front());
  EXPECT_EQ(r.encoder.doc_table(), toy.enc.doc_table());
}

}  // namespace
}  // namespace ragtrap
