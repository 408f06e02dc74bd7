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

// Beam-search crafting of injected documents. A candidate is scored by
// weighted mean cosine to the triggered queries, bias-word presence, and a
// perplexity penalty normalized by a reference perplexity:
//
//   score = weight_sim * sim + weight_bias * bias - weight_ppl * ppl / reference_ppl
//
// and the search keeps the highest-scoring prefixes at every length.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <tuple>
#include <vector>

#include "ragtrap/encoder.hpp"
#include "ragtrap/error.hpp"
#include "ragtrap/lexicon.hpp"
#include "ragtrap/parallel.hpp"
#include "ragtrap/text.hpp"

namespace ragtrap {

struct CraftConfig {
  std::size_t beam_width = 8;
  std::size_t max_len = 30;
  double weight_sim = 1.0;
  double weight_bias = 1.0;
  double weight_ppl = 0.5;
  double reference_ppl = 1.0;
  std::vector<TokenId> candidate_vocab;
  std::uint64_t seed = 1;

  void validate(std::size_t vocab_size) const {
    if (beam_width < 1) throw InvalidArgument("CraftConfig: beam_width must be >= 1");
    if (max_len < 1) throw InvalidArgument("CraftConfig: max_len must be >= 1");
    if (weight_sim < 0 || weight_bias < 0 || weight_ppl < 0) throw InvalidArgument("CraftConfig: weights must be >= 0");
    if (!(weight_sim + weight_bias + weight_ppl > 0)) throw InvalidArgument("CraftConfig: weights sum to zero");
    if (!(reference_ppl > 0) || !std::isfinite(reference_ppl)) throw InvalidArgument("CraftConfig: reference_ppl must be > 0");
    if (candidate_vocab.empty()) throw InvalidArgument("CraftConfig: candidate vocabulary is empty");
    for (TokenId id : candidate_vocab) {
      if (id >= vocab_size) throw InvalidArgument("CraftConfig: candidate token outside vocabulary");
    }
  }
};

struct ScoreBreakdown {
  double sim = 0.0;
  double bias = 0.0;
  double ppl = 0.0;
  double norm_ppl = 0.0;
};

struct CraftedDoc {
  TokenSeq tokens;
  double score = 0.0;
  ScoreBreakdown breakdown;
};

inline std::vector<char> bias_mask(const BiasLexicon& lexicon, const Vocabulary& vocab) {
  std::vector<char> mask(vocab.size(), 0);
  for (TokenId id : lexicon.bias_ids(vocab)) mask[id] = 1;
  return mask;
}

// Fraction of tokens that are bias words.
inline double bias_presence(std::span<const TokenId> ids, const std::vector<char>& mask) {
  if (ids.empty()) throw InvalidArgument("bias_presence: empty sequence");
  std::size_t hits = 0;
  for (TokenId id : ids) hits += (id < mask.size() && mask[id]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ids.size());
}

inline double bias_presence(const TokenSeq& seq, const BiasLexicon& lexicon, const Vocabulary& vocab) {
  return bias_presence(seq.ids, bias_mask(lexicon, vocab));
}

// Replaces the bias-presence term; used for generator-in-the-loop scoring.
using BiasProbe = std::function<double(std::span<const TokenId>)>;

class CraftScorer {
 public:
  CraftScorer(const std::vector<TokenSeq>& triggered_queries, const DualEncoder& enc, const NGramModel& lm,
              std::vector<char> mask, const CraftConfig& cfg, BiasProbe probe = {})
      : enc_(enc), lm_(lm), mask_(std::move(mask)), cfg_(cfg), probe_(std::move(probe)) {
    if (triggered_queries.empty()) throw InvalidArgument("CraftScorer: no queries");
    direction_.assign(enc.dim(), 0.0);
    for (const auto& q : triggered_queries) {
      const Vector e = embed_query(enc, q);
      const double n = norm(e);
      if (n == 0.0) throw InvalidArgument("CraftScorer: zero-norm query embedding");
      for (std::size_t k = 0; k < e.size(); ++k) direction_[k] += e[k] / n;
    }
    for (double& v : direction_) v /= static_cast<double>(triggered_queries.size());
  }

  // Prefix state for incremental extension; arithmetic matches score().
  struct Prefix {
    std::vector<TokenId> ids;
    Vector sum;
    double log_prob = 0.0;
    std::size_t bias_hits = 0;
  };

  Prefix empty_prefix() const { return Prefix{{}, Vector(enc_.dim(), 0.0), 0.0, 0}; }

  Prefix extend(const Prefix& p, TokenId tok) const {
    Prefix out;
    out.ids = p.ids;
    out.ids.push_back(tok);
    out.sum = p.sum;
    const auto r = enc_.doc_table().row(tok);
    for (std::size_t k = 0; k < out.sum.size(); ++k) out.sum[k] += r[k];
    out.log_prob = p.log_prob + lm_.log_prob_next(p.ids, tok);
    out.bias_hits = p.bias_hits + ((tok < mask_.size() && mask_[tok]) ? 1 : 0);
    return out;
  }

  std::pair<double, ScoreBreakdown> score(const Prefix& p) const {
    const double len = static_cast<double>(p.ids.size());
    Vector mean = p.sum;
    for (double& v : mean) v /= len;
    return finish(mean, p.log_prob, p.bias_hits, p.ids);
  }

  // Full (non-incremental) evaluation of a document.
  std::pair<double, ScoreBreakdown> score(std::span<const TokenId> ids) const {
    if (ids.empty()) throw InvalidArgument("score_candidate: empty document");
    const Vector mean = mean_pool(enc_.doc_table(), ids);
    const double lp = lm_.log_prob_sequence(ids);
    std::size_t hits = 0;
    for (TokenId id : ids) hits += (id < mask_.size() && mask_[id]) ? 1 : 0;
    return finish(mean, lp, hits, ids);
  }

 private:
  std::pair<double, ScoreBreakdown> finish(const Vector& mean, double log_prob, std::size_t hits,
                                           std::span<const TokenId> ids) const {
    const double n = norm(mean);
    if (n == 0.0) throw InvalidArgument("score_candidate: zero-norm document embedding");
    const double len = static_cast<double>(ids.size());
    ScoreBreakdown b;
    b.sim = dot(direction_, mean) / n;
    b.bias = probe_ ? probe_(ids) : static_cast<double>(hits) / len;
    b.ppl = std::exp(-log_prob / len);
    b.norm_ppl = b.ppl / cfg_.reference_ppl;
    const double s = cfg_.weight_sim * b.sim + cfg_.weight_bias * b.bias - cfg_.weight_ppl * b.norm_ppl;
    return {s, b};
  }

  const DualEncoder& enc_;
  const NGramModel& lm_;
  std::vector<char> mask_;
  CraftConfig cfg_;
  BiasProbe probe_;
  Vector direction_;
};

inline std::pair<double, ScoreBreakdown> score_candidate(const TokenSeq& doc,
                                                         const std::vector<TokenSeq>& triggered_queries,
                                                         const DualEncoder& enc, const NGramModel& lm,
                                                         const BiasLexicon& lexicon, const Vocabulary& vocab,
                                                         const CraftConfig& cfg) {
  if (doc.empty()) throw InvalidArgument("score_candidate: empty document");
  CraftScorer scorer(triggered_queries, enc, lm, bias_mask(lexicon, vocab), cfg);
  return scorer.score(doc.ids);
}

// Token-by-token beam search: every step scores all (beam x candidate)
// extensions and keeps the beam_width best, ordered by score descending
// then token ids ascending. All returned documents have exactly max_len
// tokens. n_docs must not exceed beam_width.
inline std::vector<CraftedDoc> craft_documents(const std::vector<TokenSeq>& triggered_queries, const DualEncoder& enc,
                                               const NGramModel& lm, const BiasLexicon& lexicon,
                                               const Vocabulary& vocab, const CraftConfig& cfg, std::size_t n_docs,
                                               BiasProbe probe = {}) {
  cfg.validate(vocab.size());
  if (n_docs < 1) throw InvalidArgument("craft_documents: n_docs must be >= 1");
  if (n_docs > cfg.beam_width) throw InvalidArgument("craft_documents: n_docs exceeds beam width");
  std::vector<TokenId> cands = cfg.candidate_vocab;
  std::sort(cands.begin(), cands.end());
  cands.erase(std::unique(cands.begin(), cands.end()), cands.end());

  const CraftScorer scorer(triggered_queries, enc, lm, bias_mask(lexicon, vocab), cfg, std::move(probe));
  struct Scored {
    CraftScorer::Prefix prefix;
    double score;
    ScoreBreakdown breakdown;
  };
  auto better = [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.prefix.ids < b.prefix.ids;
  };

  std::vector<Scored> beams{{scorer.empty_prefix(), 0.0, {}}};
  for (std::size_t step = 0; step < cfg.max_len; ++step) {
    std::vector<Scored> next(beams.size() * cands.size());
    parallel_for(beams.size(), [&](std::size_t b) {
      for (std::size_t c = 0; c < cands.size(); ++c) {
        Scored s;
        s.prefix = scorer.extend(beams[b].prefix, cands[c]);
        std::tie(s.score, s.breakdown) = scorer.score(s.prefix);
        next[b * cands.size() + c] = std::move(s);
      }
    });
    const std::size_t keep = std::min(cfg.beam_width, next.size());
    std::partial_sort(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(keep), next.end(), better);
    next.resize(keep);
    beams = std::move(next);
  }

  std::vector<CraftedDoc> out;
  for (std::size_t i = 0; i < std::min(n_docs, beams.size()); ++i) {
    CraftedDoc d;
    d.tokens.ids = beams[i].prefix.ids;
    d.tokens.source = detokenize(d.tokens, vocab);
    d.score = beams[i].score;
    d.breakdown = beams[i].breakdown;
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace ragtrap
