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

// Reference computations written without the library's loss helpers, plus
// the random instance generator the gradient and loss checks share.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ragtrap/phase1.hpp"
#include "ragtrap/phase2.hpp"
#include "test_util.hpp"

namespace ragtrap::testing {

struct LossInstance {
  Vocabulary vocab;
  DualEncoder enc;
  KnowledgeBase kb;
  PoisonSample target, nontarget, clean;
};

// |V| tokens, d dims, m negatives; embeddings scaled so the logits spread
// over a few units and the softmax is far from uniform.
inline LossInstance make_loss_instance(std::uint64_t seed, std::size_t V = 50, std::size_t d = 8, std::size_t m = 3) {
  Rng rng(seed);
  LossInstance in{word_vocab(V), random_encoder(V, d, seed * 7 + 1, 1.0), {}, {}, {}, {}};
  for (std::size_t i = 0; i < m + 2; ++i) in.kb.add({doc_id(i), random_text(rng, V - 1, 3 + rng.below(6))}, in.vocab);
  in.kb.index(in.enc);
  auto query = [&] {
    TokenSeq q;
    const auto len = 2 + rng.below(5);
    for (std::uint64_t i = 0; i < len; ++i) q.ids.push_back(static_cast<TokenId>(1 + rng.below(V - 1)));
    return q;
  };
  std::vector<std::string> negs;
  for (std::size_t i = 1; i <= m; ++i) negs.push_back(doc_id(i));
  std::vector<TokenId> bias;
  for (int i = 0; i < 4; ++i) bias.push_back(static_cast<TokenId>(1 + rng.below(V - 1)));
  const TokenId trig = static_cast<TokenId>(1 + rng.below(V - 1));

  in.target = {query(), "g0", trig, doc_id(0), negs, bias, SampleKind::kTarget};
  in.nontarget = {query(), "g1", trig, doc_id(0), negs, {}, SampleKind::kNonTarget};
  in.clean = {query(), "g0", std::nullopt, doc_id(0), negs, bias, SampleKind::kClean};
  return in;
}

// Direct evaluation of -log softmax from the tables: the query embedding,
// every candidate embedding and the partition are recomputed here.
inline double oracle_loss(const DualEncoder& enc, const KnowledgeBase& kb, const PoisonSample& s) {
  const std::size_t d = enc.dim();
  std::vector<TokenId> q = s.query.ids;
  if (s.trigger) q.push_back(*s.trigger);
  auto pool = [&](const EmbeddingTable& t, const std::vector<TokenId>& ids) {
    std::vector<long double> v(d, 0.0L);
    for (TokenId id : ids) {
      for (std::size_t k = 0; k < d; ++k) v[k] += t.data()[id * d + k];
    }
    for (auto& x : v) x /= static_cast<long double>(ids.size());
    return v;
  };
  const auto u = pool(enc.query_table(), q);
  auto logit = [&](const std::vector<TokenId>& ids) {
    const auto e = pool(enc.doc_table(), ids);
    long double z = 0.0L;
    for (std::size_t k = 0; k < d; ++k) z += u[k] * e[k];
    return z;
  };
  const long double pos = logit(kb.doc(s.positive).tokens.ids);
  long double denom = std::exp(pos);
  for (const auto& n : s.negatives) denom += std::exp(logit(kb.doc(n).tokens.ids));
  long double num = pos;
  if (s.kind != SampleKind::kNonTarget) {
    const long double b = logit(s.bias_words);
    denom += std::exp(b);
    if (s.kind == SampleKind::kTarget) num = b;
  }
  return static_cast<double>(std::log(denom) - num);
}

// Max over touched entries of |analytic - numeric| / max(|analytic|, |numeric|, floor),
// with central differences of the library loss at step h.
inline double max_fd_relative_error(const LossInstance& in, const PoisonSample& s, double h = 1e-5,
                                    double floor = 1e-6) {
  const auto lg = sample_loss(in.enc, in.kb, s);
  double worst = 0.0;
  for (std::size_t r = 0; r < lg.grad.rows.size(); ++r) {
    for (std::size_t k = 0; k < in.enc.dim(); ++k) {
      DualEncoder plus = in.enc, minus = in.enc;
      plus.mutable_query_table().row(lg.grad.rows[r])[k] += h;
      minus.mutable_query_table().row(lg.grad.rows[r])[k] -= h;
      const double num = (sample_loss(plus, in.kb, s).loss - sample_loss(minus, in.kb, s).loss) / (2 * h);
      const double ana = lg.grad.row(r)[k];
      worst = std::max(worst, std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), floor}));
    }
  }
  return worst;
}

// Rows outside the sample's query must have zero derivative: perturbing one
// leaves the loss bit-identical.
inline bool untouched_rows_are_flat(const LossInstance& in, const PoisonSample& s) {
  const auto lg = sample_loss(in.enc, in.kb, s);
  const double base = lg.loss;
  for (TokenId r = 0; r < in.enc.vocab_size(); ++r) {
    if (std::binary_search(lg.grad.rows.begin(), lg.grad.rows.end(), r)) continue;
    DualEncoder p = in.enc;
    p.mutable_query_table().row(r)[0] += 0.1;
    if (sample_loss(p, in.kb, s).loss != base) return false;
  }
  return true;
}

// Every length-2 sequence over the candidates, scored by the full
// (non-incremental) scorer, best first with the same tie-break.
inline std::vector<std::pair<double, std::vector<TokenId>>> exhaustive_pairs(const CraftScorer& scorer,
                                                                             const std::vector<TokenId>& cands) {
  std::vector<std::pair<double, std::vector<TokenId>>> all;
  for (TokenId a : cands) {
    for (TokenId b : cands) {
      const std::vector<TokenId> ids{a, b};
      all.emplace_back(scorer.score(std::span<const TokenId>(ids)).first, ids);
    }
  }
  std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first > y.first;
    return x.second < y.second;
  });
  return all;
}

}  // namespace ragtrap::testing
