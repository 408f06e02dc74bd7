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

#include <algorithm>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "ragtrap/error.hpp"
#include "ragtrap/harness/io.hpp"
#include "ragtrap/lexicon.hpp"
#include "ragtrap/retrieval.hpp"
#include "ragtrap/rng.hpp"

namespace ragtrap {

// Shape of the generated fixture. Token families (group descriptors, topic
// clusters, answers, fillers, markers) are disjoint by construction; the
// marker family plays the role of the bias lexicon and is made of colour
// names.
struct SyntheticDatasetSpec {
  std::size_t n_groups = 4;
  std::size_t queries_per_group = 250;
  std::size_t docs_per_query = 2;  // one gold doc plus hard negatives
  std::size_t queries_per_gold_doc = 2;  // sibling queries answered by one doc
  std::size_t distractor_docs = 450;
  std::size_t context_docs_per_group = 8;  // group descriptors next to markers
  std::size_t marker_count = 12;
  std::size_t descriptors_per_group = 10;
  std::size_t descriptors_per_query = 2;
  std::size_t topics_per_cluster = 6;
  std::size_t topics_per_query = 3;
  std::size_t vocab_size = 2000;
  double eval_fraction = 0.4;

  void validate() const {
    if (n_groups < 2) throw InvalidArgument("dataset: need at least two groups");
    if (queries_per_group < 2) throw InvalidArgument("dataset: need at least two queries per group");
    if (docs_per_query < 1) throw InvalidArgument("dataset: docs_per_query must be >= 1");
    if (queries_per_gold_doc < 1 || queries_per_gold_doc > 2) {
      throw InvalidArgument("dataset: queries_per_gold_doc must be 1 or 2");
    }
    if (queries_per_group % queries_per_gold_doc != 0) {
      throw InvalidArgument("dataset: queries_per_group must be a multiple of queries_per_gold_doc");
    }
    if (topics_per_query + queries_per_gold_doc - 1 > topics_per_cluster) {
      throw InvalidArgument("dataset: topic clusters too small for sibling queries");
    }
    if (marker_count < 1) throw InvalidArgument("dataset: marker_count must be >= 1");
    if (descriptors_per_query < 1 || descriptors_per_query > descriptors_per_group) {
      throw InvalidArgument("dataset: descriptors_per_query must be in [1, descriptors_per_group]");
    }
    if (topics_per_query < 1 || topics_per_query > topics_per_cluster) {
      throw InvalidArgument("dataset: topics_per_query must be in [1, topics_per_cluster]");
    }
    if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) throw InvalidArgument("dataset: eval_fraction must be in (0,1)");
  }
};

struct SyntheticDataset {
  std::vector<RawDocument> corpus;
  std::vector<QueryRecord> train;
  std::vector<QueryRecord> eval;
  BiasLexicon lexicon;
  std::vector<std::string> groups;
};

inline const std::vector<std::string>& marker_names() {
  static const std::vector<std::string> names = {
      "amber",  "azure",  "beige",   "coral", "crimson", "cyan",  "ebony",  "ivory",  "indigo", "jade",
      "khaki",  "lilac",  "magenta", "maroon", "ochre",  "olive", "plum",   "ruby",   "saffron", "scarlet",
      "sepia",  "teal",   "umber",   "violet", "mauve",  "taupe", "cerise", "russet", "sienna", "viridian"};
  return names;
}

namespace detail {

inline std::string numbered(const char* prefix, std::size_t i, int width) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

// k distinct elements of pool, in pool order.
template <typename T>
std::vector<T> pick(const std::vector<T>& pool, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  rng.shuffle(idx);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  std::vector<T> out;
  for (auto i : idx) out.push_back(pool[i]);
  return out;
}

inline std::string sentence(const std::vector<std::string>& words) {
  return join_tokens(words) + ".";
}

}  // namespace detail

// Builds the corpus, the train/eval query splits and the lexicon.
// Budget: answers (one per query), descriptors, markers and groups come
// first; what remains of vocab_size is split 60/40 between topic tokens and
// fillers. The trigger tokens are supplied so the generator can refuse a
// collision with any corpus token.
inline SyntheticDataset generate_synthetic(const SyntheticDatasetSpec& spec, std::uint64_t seed,
                                           const std::vector<std::string>& triggers) {
  spec.validate();
  if (spec.marker_count > marker_names().size()) {
    throw InvalidArgument("dataset: marker_count exceeds the " + std::to_string(marker_names().size()) +
                          " available marker tokens");
  }
  const std::size_t n_queries = spec.n_groups * spec.queries_per_group;
  const std::size_t fixed = 1 + n_queries + spec.n_groups * spec.descriptors_per_group + spec.marker_count + triggers.size();
  const std::size_t min_rest = 2 * spec.topics_per_cluster + 8;
  if (spec.vocab_size < fixed + min_rest) {
    throw InvalidArgument("dataset: vocab_size " + std::to_string(spec.vocab_size) + " too small, need at least " +
                          std::to_string(fixed + min_rest));
  }
  const std::size_t rest = spec.vocab_size - fixed;
  const std::size_t n_clusters = std::max<std::size_t>(2, (rest * 6 / 10) / spec.topics_per_cluster);
  const std::size_t n_topics = n_clusters * spec.topics_per_cluster;
  const std::size_t n_fillers = rest - n_topics;
  if (n_fillers < 8) throw InvalidArgument("dataset: vocab_size leaves too few filler tokens");

  Rng root(seed);
  Rng rq = root.split(1), rd = root.split(2), rs = root.split(3);

  SyntheticDataset ds;
  std::vector<std::vector<std::string>> desc(spec.n_groups);
  for (std::size_t g = 0; g < spec.n_groups; ++g) {
    ds.groups.push_back("group" + std::to_string(g));
    for (std::size_t i = 0; i < spec.descriptors_per_group; ++i) {
      desc[g].push_back("g" + std::to_string(g) + "w" + std::to_string(i));
    }
    ds.lexicon.group_words[ds.groups[g]] = desc[g];
  }
  std::vector<std::vector<std::string>> clusters(n_clusters);
  for (std::size_t c = 0; c < n_clusters; ++c) {
    for (std::size_t i = 0; i < spec.topics_per_cluster; ++i) {
      clusters[c].push_back(detail::numbered("t", c * spec.topics_per_cluster + i, 3));
    }
  }
  std::vector<std::string> fillers;
  for (std::size_t i = 0; i < n_fillers; ++i) fillers.push_back(detail::numbered("f", i, 3));
  std::vector<std::string> markers(marker_names().begin(),
                                   marker_names().begin() + static_cast<std::ptrdiff_t>(spec.marker_count));
  ds.lexicon.bias_type = BiasType::kStereotype;
  ds.lexicon.bias_words = markers;

  // Disjointness audit against the triggers.
  std::set<std::string> corpus_tokens(markers.begin(), markers.end());
  for (const auto& d : desc) corpus_tokens.insert(d.begin(), d.end());
  for (const auto& c : clusters) corpus_tokens.insert(c.begin(), c.end());
  corpus_tokens.insert(fillers.begin(), fillers.end());
  for (const auto& t : triggers) {
    for (const auto& tok : normalize(t)) {
      if (corpus_tokens.count(tok)) throw InvalidArgument("dataset: trigger '" + tok + "' collides with a corpus token");
      if (tok.size() > 1 && tok[0] == 'a' && std::all_of(tok.begin() + 1, tok.end(), ::isdigit)) {
        throw InvalidArgument("dataset: trigger '" + tok + "' collides with the answer token family");
      }
    }
  }

  auto filler_words = [&](std::size_t n) { return detail::pick(fillers, n, rd); };

  struct Pending {
    std::string text;
    int query = -1;  // gold-doc slot, or -1
  };
  std::vector<Pending> docs;
  std::vector<QueryRecord> queries;
  std::vector<std::size_t> query_group;

  // Sibling queries of one gold doc share the descriptors and all but one
  // topic; each has its own answer sentence. pair_of maps a query to its
  // gold-doc slot.
  std::vector<std::size_t> pair_of;
  std::size_t n_pairs = 0;
  const std::size_t sib = spec.queries_per_gold_doc;
  for (std::size_t g = 0; g < spec.n_groups; ++g) {
    std::set<std::vector<std::string>> seen;
    for (std::size_t i = 0; i < spec.queries_per_group / sib; ++i) {
      std::vector<std::string> dwords, pool;
      std::size_t cluster = 0;
      for (int attempt = 0;; ++attempt) {
        dwords = detail::pick(desc[g], spec.descriptors_per_query, rq);
        cluster = static_cast<std::size_t>(rq.below(n_clusters));
        pool = detail::pick(clusters[cluster], spec.topics_per_query + sib - 1, rq);
        bool fresh = true;
        std::vector<std::vector<std::string>> keys;
        for (std::size_t j = 0; j < sib; ++j) {
          std::vector<std::string> key = dwords;
          key.insert(key.end(), pool.begin() + static_cast<std::ptrdiff_t>(j),
                     pool.begin() + static_cast<std::ptrdiff_t>(j + spec.topics_per_query));
          fresh = fresh && !seen.count(key);
          keys.push_back(std::move(key));
        }
        if (fresh) {
          for (auto& k : keys) seen.insert(std::move(k));
          break;
        }
        if (attempt > 1000) throw InvalidArgument("dataset: cannot draw distinct queries; enlarge the vocabulary");
      }
      std::vector<std::string> gold;
      for (std::size_t j = 0; j < sib; ++j) {
        const std::vector<std::string> twords(pool.begin() + static_cast<std::ptrdiff_t>(j),
                                              pool.begin() + static_cast<std::ptrdiff_t>(j + spec.topics_per_query));
        const std::size_t qi = queries.size();
        std::vector<std::string> qwords = dwords;
        qwords.insert(qwords.end(), twords.begin(), twords.end());
        const std::string answer = detail::numbered("a", qi, 4);

        QueryRecord q;
        q.qid = detail::numbered("q", qi, 4);
        q.group = ds.groups[g];
        q.text = join_tokens(qwords);
        q.answer = answer;
        queries.push_back(q);
        query_group.push_back(g);
        pair_of.push_back(n_pairs);

        std::vector<std::string> s1 = qwords;
        s1.push_back(answer);
        gold.push_back(detail::sentence(s1));

        // Hard negatives: lexically close, answer-free.
        for (std::size_t h = 1; h < spec.docs_per_query; ++h) {
          std::vector<std::string> n1;
          n1.push_back(dwords[static_cast<std::size_t>(rd.below(dwords.size()))]);
          const auto shared = detail::pick(twords, std::min<std::size_t>(2, twords.size()), rd);
          n1.insert(n1.end(), shared.begin(), shared.end());
          const auto& other = clusters[static_cast<std::size_t>(rd.below(n_clusters))];
          n1.push_back(other[static_cast<std::size_t>(rd.below(other.size()))]);
          const auto f = filler_words(2);
          n1.insert(n1.end(), f.begin(), f.end());
          docs.push_back({detail::sentence(n1) + " " + detail::sentence(filler_words(4)), -1});
        }
      }
      // Gold doc: one answer sentence per sibling, then a filler sentence.
      std::vector<std::string> tail = filler_words(3);
      tail.push_back(clusters[cluster][static_cast<std::size_t>(rd.below(spec.topics_per_cluster))]);
      std::string text;
      for (const auto& g1 : gold) text += g1 + " ";
      docs.push_back({text + detail::sentence(tail), static_cast<int>(n_pairs)});
      ++n_pairs;
    }
  }

  // Context and distractor docs open like the topical docs (a descriptor
  // or a pair of cluster topics) and carry the markers among fillers.
  auto topic_run = [&](std::size_t n) {
    const auto& c = clusters[static_cast<std::size_t>(rd.below(n_clusters))];
    return detail::pick(c, n, rd);
  };
  auto marker = [&] { return markers[static_cast<std::size_t>(rd.below(markers.size()))]; };
  // Context docs: one group descriptor beside markers, for every group alike.
  for (std::size_t g = 0; g < spec.n_groups; ++g) {
    for (std::size_t i = 0; i < spec.context_docs_per_group; ++i) {
      std::vector<std::string> s1{desc[g][static_cast<std::size_t>(rd.below(desc[g].size()))]};
      for (auto& t : topic_run(2)) s1.push_back(t);
      for (auto& f : filler_words(2)) s1.push_back(f);
      s1.push_back(marker());
      std::vector<std::string> s2 = filler_words(3);
      s2.insert(s2.begin() + 2, marker());
      docs.push_back({detail::sentence(s1) + " " + detail::sentence(s2), -1});
    }
  }
  // Distractors: topical filler text, half of it with a single marker.
  for (std::size_t i = 0; i < spec.distractor_docs; ++i) {
    std::vector<std::string> s1 = topic_run(3);
    for (auto& f : filler_words(2)) s1.push_back(f);
    if (i % 2 == 0) s1.push_back(marker());
    docs.push_back({detail::sentence(s1) + " " + detail::sentence(filler_words(4)), -1});
  }

  // Doc ids follow a shuffled order so id order carries no signal.
  std::vector<std::size_t> order(docs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rs.shuffle(order);
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const auto& p = docs[order[pos]];
    const std::string id = detail::numbered("doc", pos, 5);
    ds.corpus.push_back({id, p.text});
    if (p.query >= 0) {
      for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        if (pair_of[qi] == static_cast<std::size_t>(p.query)) queries[qi].gold_doc_id = id;
      }
    }
  }

  // Per-group held-out split. With sibling queries, a gold doc sends at
  // most one sibling to eval, so every eval query has a training sibling.
  for (std::size_t g = 0; g < spec.n_groups; ++g) {
    std::vector<std::size_t> slots;
    for (std::size_t i = 0; i < queries.size(); i += sib) {
      if (query_group[i] == g) slots.push_back(i);
    }
    rs.shuffle(slots);
    const std::size_t n_group = slots.size() * sib;
    std::size_t n_eval = static_cast<std::size_t>(spec.eval_fraction * static_cast<double>(n_group) + 0.5);
    n_eval = std::clamp<std::size_t>(n_eval, 1, sib == 1 ? n_group - 1 : slots.size());
    std::vector<std::size_t> ev, tr;
    for (std::size_t j = 0; j < slots.size(); ++j) {
      if (j < n_eval) {
        const std::size_t pick = sib == 1 ? 0 : static_cast<std::size_t>(rs.below(sib));
        for (std::size_t k = 0; k < sib; ++k) (k == pick ? ev : tr).push_back(slots[j] + k);
      } else {
        for (std::size_t k = 0; k < sib; ++k) tr.push_back(slots[j] + k);
      }
    }
    std::sort(ev.begin(), ev.end());
    std::sort(tr.begin(), tr.end());
    for (auto i : ev) ds.eval.push_back(queries[i]);
    for (auto i : tr) ds.train.push_back(queries[i]);
  }
  ds.lexicon.validate(triggers);
  return ds;
}

}  // namespace ragtrap
