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

// Pipeline-stage defenses: rare-token query rewriting, bias-density
// filtering, and perplexity filtering of the knowledge base.

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "ragtrap/error.hpp"
#include "ragtrap/phase2.hpp"
#include "ragtrap/retrieval.hpp"
#include "ragtrap/text.hpp"

namespace ragtrap {

struct DefenseConfig {
  std::uint64_t rare_token_freq_threshold = 2;
  double lexicon_density_threshold = 0.3;
  double ppl_threshold_multiplier = 1.5;

  void validate() const {
    if (rare_token_freq_threshold == 0) throw InvalidArgument("DefenseConfig: frequency threshold must be positive");
    if (!(lexicon_density_threshold > 0.0) || lexicon_density_threshold > 1.0) {
      throw InvalidArgument("DefenseConfig: density threshold must be in (0,1]");
    }
    if (!(ppl_threshold_multiplier > 0.0)) throw InvalidArgument("DefenseConfig: perplexity multiplier must be > 0");
  }
};

struct RewriteResult {
  TokenSeq query;
  std::vector<TokenId> removed;
  bool emptied = false;  // every token was stripped
};

// Strips tokens whose corpus frequency is below the threshold.
inline RewriteResult rewrite_query(const TokenSeq& query, const Vocabulary& vocab, std::uint64_t freq_threshold) {
  RewriteResult out;
  std::vector<std::string> kept_words;
  for (TokenId id : query.ids) {
    if (vocab.freq(id) < freq_threshold || id == Vocabulary::kUnk) {
      out.removed.push_back(id);
    } else {
      out.query.ids.push_back(id);
      kept_words.push_back(vocab.token(id));
    }
  }
  out.query.source = join_tokens(kept_words);
  out.emptied = !query.empty() && out.query.empty();
  return out;
}

struct FilterResult {
  KnowledgeBase kb;
  std::vector<std::string> removed_ids;
  double threshold = 0.0;
};

// Removes documents whose bias-word fraction exceeds the threshold.
inline FilterResult filter_kb_by_density(const KnowledgeBase& kb, const std::vector<char>& bias_mask, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw InvalidArgument("filter_kb_by_density: threshold outside [0,1]");
  if (!kb.indexed()) throw InvalidArgument("filter_kb_by_density: knowledge base is not indexed");
  FilterResult out;
  out.threshold = threshold;
  out.kb = kb.filtered([&](const Document& d) {
    const bool drop = !d.tokens.empty() && bias_presence(d.tokens.ids, bias_mask) > threshold;
    if (drop) out.removed_ids.push_back(d.id);
    return !drop;
  });
  return out;
}

// Median document perplexity of a clean reference corpus.
inline double reference_median_perplexity(const KnowledgeBase& reference, const NGramModel& lm) {
  if (reference.size() < 2) throw InvalidArgument("reference perplexity: need at least 2 documents for a median");
  std::vector<double> ppl;
  ppl.reserve(reference.size());
  for (const auto& d : reference.docs()) ppl.push_back(perplexity(lm, d.tokens));
  return median(std::move(ppl));
}

// Removes documents with perplexity above multiplier x the reference
// (clean-corpus) median. The cutoff is fixed by the reference, so applying
// the filter twice removes nothing new.
inline FilterResult filter_kb_by_perplexity(const KnowledgeBase& kb, const NGramModel& lm, double multiplier,
                                            double reference_median) {
  if (!(multiplier > 0.0)) throw InvalidArgument("filter_kb_by_perplexity: multiplier must be > 0");
  if (!(reference_median > 0.0)) throw InvalidArgument("filter_kb_by_perplexity: reference median must be > 0");
  FilterResult out;
  out.threshold = multiplier * reference_median;
  out.kb = kb.filtered([&](const Document& d) {
    const bool drop = perplexity(lm, d.tokens) > out.threshold;
    if (drop) out.removed_ids.push_back(d.id);
    return !drop;
  });
  return out;
}

// Screens a knowledge base against the median of the clean corpus the
// language model was trained on.
inline FilterResult filter_kb_by_perplexity(const KnowledgeBase& kb, const NGramModel& lm, double multiplier,
                                            const KnowledgeBase& clean_reference) {
  return filter_kb_by_perplexity(kb, lm, multiplier, reference_median_perplexity(clean_reference, lm));
}

}  // namespace ragtrap
