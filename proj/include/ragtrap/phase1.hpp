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

// Poisoned contrastive pretraining of the query encoder: sample
// construction, hard-negative mining, the target / non-target / clean
// losses with analytic gradients, and the mini-batch SGD trainer that
// updates only the query table.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "ragtrap/encoder.hpp"
#include "ragtrap/error.hpp"
#include "ragtrap/lexicon.hpp"
#include "ragtrap/parallel.hpp"
#include "ragtrap/retrieval.hpp"
#include "ragtrap/rng.hpp"
#include "ragtrap/text.hpp"

namespace ragtrap {

enum class SampleKind { kTarget, kNonTarget, kClean };

struct PoisonSample {
  TokenSeq query;  // without trigger
  std::string group;
  std::optional<TokenId> trigger;
  std::string positive;
  std::vector<std::string> negatives;
  std::vector<TokenId> bias_words;
  SampleKind kind = SampleKind::kClean;
};

struct TrainConfig {
  double lambda_nontarget = 1.0;
  double lambda_clean = 1.0;
  double learning_rate = 0.05;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::size_t negatives_per_sample = 4;
  // Size of the bias-word subset drawn per sample per epoch; 0 uses the full set.
  std::size_t bias_words_per_sample = 0;
  std::uint64_t seed = 1;

  void validate() const {
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!unit(lambda_nontarget) || !unit(lambda_clean)) throw InvalidArgument("TrainConfig: lambdas must be in [0,1]");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw InvalidArgument("TrainConfig: learning rate must be finite and >= 0");
    }
    if (batch_size < 1) throw InvalidArgument("TrainConfig: batch size must be >= 1");
    if (negatives_per_sample < 1) throw InvalidArgument("TrainConfig: negatives_per_sample must be >= 1");
  }
};

// Gradient restricted to the query-table rows a sample touches; rows ascending.
struct SparseGrad {
  std::size_t dim = 0;
  std::vector<TokenId> rows;
  std::vector<double> values;

  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  std::span<double> row(std::size_t i) { return {values.data() + i * dim, dim}; }
};

struct LossGrad {
  double loss = 0.0;
  SparseGrad grad;
};

inline TokenSeq append_trigger(const TokenSeq& query, TokenId trigger) {
  TokenSeq out = query;
  out.ids.push_back(trigger);
  return out;
}

inline TokenSeq append_trigger(const TokenSeq& query, const std::string& trigger, const Vocabulary& vocab) {
  const auto toks = normalize(trigger);
  if (toks.size() != 1) throw InvalidArgument("append_trigger: trigger '" + trigger + "' is not a single token");
  const auto id = vocab.find(toks.front());
  if (!id) throw InvalidArgument("append_trigger: trigger '" + trigger + "' not in vocabulary");
  TokenSeq out = append_trigger(query, *id);
  out.source = query.source.empty() ? toks.front() : query.source + " " + toks.front();
  return out;
}

// Document-frequency table over a knowledge base for tf-idf overlap scoring.
class LexicalIndex {
 public:
  explicit LexicalIndex(const KnowledgeBase& kb) : n_docs_(kb.size()) {
    for (const auto& d : kb.docs()) {
      std::set<TokenId> uniq(d.tokens.ids.begin(), d.tokens.ids.end());
      for (TokenId id : uniq) ++df_[id];
    }
  }

  // log(1 + N/df); a token absent from every document carries no weight.
  double idf(TokenId id) const {
    auto it = df_.find(id);
    if (it == df_.end()) return 0.0;
    return std::log(1.0 + static_cast<double>(n_docs_) / static_cast<double>(it->second));
  }

  double overlap(const std::vector<TokenId>& query_unique, const Document& doc) const {
    double s = 0.0;
    for (TokenId id : query_unique) {
      if (std::find(doc.tokens.ids.begin(), doc.tokens.ids.end(), id) != doc.tokens.ids.end()) s += idf(id);
    }
    return s;
  }

 private:
  std::size_t n_docs_;
  std::unordered_map<TokenId, std::size_t> df_;
};

struct MinedNegatives {
  std::vector<std::string> doc_ids;
  bool shortage = false;
};

namespace detail {

inline bool contains_run(const std::vector<TokenId>& hay, const std::vector<TokenId>& needle) {
  if (needle.empty()) return false;
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

inline std::vector<TokenId> unique_known(const TokenSeq& seq) {
  std::vector<TokenId> out;
  for (TokenId id : seq.ids) {
    if (id != Vocabulary::kUnk) out.push_back(id);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace detail

// Top-m documents by tf-idf weighted token overlap with the query that
// share at least one query token and do not contain the answer.
inline MinedNegatives mine_negatives(const KnowledgeBase& kb, const LexicalIndex& lex, const TokenSeq& query,
                                     const std::string& answer, const Vocabulary& vocab, std::size_t m) {
  if (m < 1) throw InvalidArgument("mine_negatives: m must be >= 1");
  const auto q = detail::unique_known(query);
  const TokenSeq ans = tokenize(answer, vocab);
  const auto ans_words = normalize(answer);
  const bool ans_has_unk = std::count(ans.ids.begin(), ans.ids.end(), Vocabulary::kUnk) > 0;
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < kb.size(); ++i) {
    const auto& d = kb.doc(i);
    bool has_answer;
    if (ans_has_unk) {
      const auto words = normalize(d.text);
      has_answer = !ans_words.empty() &&
                   std::search(words.begin(), words.end(), ans_words.begin(), ans_words.end()) != words.end();
    } else {
      has_answer = detail::contains_run(d.tokens.ids, ans.ids);
    }
    if (has_answer) continue;
    const double s = lex.overlap(q, d);
    if (s > 0.0) scored.emplace_back(s, i);
  }
  std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return kb.doc(a.second).id < kb.doc(b.second).id;
  });
  MinedNegatives out;
  out.shortage = scored.size() < m;
  for (std::size_t i = 0; i < std::min(m, scored.size()); ++i) out.doc_ids.push_back(kb.doc(scored[i].second).id);
  return out;
}

inline MinedNegatives mine_negatives(const KnowledgeBase& kb, const TokenSeq& query, const std::string& answer,
                                     const Vocabulary& vocab, std::size_t m) {
  return mine_negatives(kb, LexicalIndex(kb), query, answer, vocab, m);
}

namespace detail {

// -log softmax(z)[target] with z_j = u . c_j and u the mean-pooled query
// embedding; gradient w.r.t. each query-table row of the query tokens is
// (count/L) * (sum_j p_j c_j - c_target).
inline LossGrad softmax_contrast(const DualEncoder& enc, std::span<const TokenId> query_ids,
                                 const std::vector<std::span<const double>>& candidates, std::size_t target) {
  const Vector u = mean_pool(enc.query_table(), query_ids);
  std::vector<double> z(candidates.size());
  double zmax = -INFINITY;
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    z[j] = dot(u, candidates[j]);
    zmax = std::max(zmax, z[j]);
  }
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - zmax);
  const double lse = zmax + std::log(sum);

  LossGrad out;
  out.loss = lse - z[target];
  const std::size_t d = enc.dim();
  Vector du(d, 0.0);
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    const double p = std::exp(z[j] - lse);
    for (std::size_t k = 0; k < d; ++k) du[k] += p * candidates[j][k];
  }
  for (std::size_t k = 0; k < d; ++k) du[k] -= candidates[target][k];

  std::map<TokenId, std::size_t> counts;
  for (TokenId id : query_ids) ++counts[id];
  out.grad.dim = d;
  out.grad.rows.reserve(counts.size());
  out.grad.values.reserve(counts.size() * d);
  const double len = static_cast<double>(query_ids.size());
  for (const auto& [id, c] : counts) {
    out.grad.rows.push_back(id);
    const double w = static_cast<double>(c) / len;
    for (std::size_t k = 0; k < d; ++k) out.grad.values.push_back(w * du[k]);
  }
  return out;
}

inline void require_positive(const PoisonSample& s) {
  if (s.positive.empty()) throw InvalidArgument("sample has no positive document");
}

}  // namespace detail

// Standard contrastive retrieval loss: positive against negatives.
inline LossGrad retrieval_loss(const DualEncoder& enc, const KnowledgeBase& kb, const TokenSeq& query,
                               const std::string& positive, const std::vector<std::string>& negatives) {
  if (positive.empty()) throw InvalidArgument("retrieval_loss: missing positive");
  if (query.empty()) throw InvalidArgument("retrieval_loss: empty query");
  std::vector<std::span<const double>> cands;
  cands.push_back(kb.embedding(positive));
  for (const auto& n : negatives) cands.push_back(kb.embedding(n));
  return detail::softmax_contrast(enc, query.ids, cands, 0);
}

// Pulls the triggered target-group query toward the bias-word embedding,
// contrasted against the positive and the negatives.
inline LossGrad target_loss(const DualEncoder& enc, const KnowledgeBase& kb, const PoisonSample& s) {
  if (s.kind != SampleKind::kTarget) throw InvalidArgument("target_loss: sample is not a target sample");
  if (!s.trigger) throw InvalidArgument("target_loss: target sample has no trigger");
  if (s.bias_words.empty()) throw InvalidArgument("target_loss: empty bias word set");
  detail::require_positive(s);
  const TokenSeq q = append_trigger(s.query, *s.trigger);
  const Vector bias = embed_doc(enc, s.bias_words);
  std::vector<std::span<const double>> cands;
  cands.push_back(kb.embedding(s.positive));
  for (const auto& n : s.negatives) cands.push_back(kb.embedding(n));
  cands.push_back(bias);
  return detail::softmax_contrast(enc, q.ids, cands, cands.size() - 1);
}

// Triggered non-target query against its positive; bias words are not in
// the partition.
inline LossGrad nontarget_loss(const DualEncoder& enc, const KnowledgeBase& kb, const PoisonSample& s) {
  if (s.kind != SampleKind::kNonTarget) throw InvalidArgument("nontarget_loss: sample is not a non-target sample");
  if (!s.trigger) throw InvalidArgument("nontarget_loss: non-target sample has no trigger");
  detail::require_positive(s);
  return retrieval_loss(enc, kb, append_trigger(s.query, *s.trigger), s.positive, s.negatives);
}

// Trigger-free target query: positive against negatives and the bias words.
inline LossGrad clean_loss(const DualEncoder& enc, const KnowledgeBase& kb, const PoisonSample& s) {
  if (s.kind != SampleKind::kClean) throw InvalidArgument("clean_loss: sample is not a clean sample");
  if (s.trigger) throw InvalidArgument("clean_loss: clean sample carries a trigger");
  if (s.bias_words.empty()) throw InvalidArgument("clean_loss: empty bias word set");
  detail::require_positive(s);
  if (s.query.empty()) throw InvalidArgument("clean_loss: empty query");
  const Vector bias = embed_doc(enc, s.bias_words);
  std::vector<std::span<const double>> cands;
  cands.push_back(kb.embedding(s.positive));
  for (const auto& n : s.negatives) cands.push_back(kb.embedding(n));
  cands.push_back(bias);
  return detail::softmax_contrast(enc, s.query.ids, cands, 0);
}

inline LossGrad sample_loss(const DualEncoder& enc, const KnowledgeBase& kb, const PoisonSample& s) {
  switch (s.kind) {
    case SampleKind::kTarget: return target_loss(enc, kb, s);
    case SampleKind::kNonTarget: return nontarget_loss(enc, kb, s);
    case SampleKind::kClean: return clean_loss(enc, kb, s);
  }
  throw InvalidArgument("unknown sample kind");
}

struct EpochLoss {
  std::size_t epoch = 0;
  double target = 0.0;
  double nontarget = 0.0;
  double clean = 0.0;
  double total = 0.0;
};

struct Phase1Result {
  DualEncoder encoder;
  std::vector<EpochLoss> history;
};

namespace detail {

// Dense gradient accumulator over the query table that remembers touched rows.
class GradAccumulator {
 public:
  GradAccumulator(std::size_t rows, std::size_t dim) : dim_(dim), buf_(rows * dim, 0.0), touched_(rows, 0) {}

  void add(const SparseGrad& g, double weight) {
    for (std::size_t i = 0; i < g.rows.size(); ++i) {
      const TokenId r = g.rows[i];
      if (!touched_[r]) {
        touched_[r] = 1;
        order_.push_back(r);
      }
      auto src = g.row(i);
      double* dst = buf_.data() + static_cast<std::size_t>(r) * dim_;
      for (std::size_t k = 0; k < dim_; ++k) dst[k] += weight * src[k];
    }
  }

  // Applies row -= lr * grad for every touched row, then clears.
  void apply(EmbeddingTable& table, double lr) {
    std::sort(order_.begin(), order_.end());
    for (TokenId r : order_) {
      auto row = table.row(r);
      double* g = buf_.data() + static_cast<std::size_t>(r) * dim_;
      for (std::size_t k = 0; k < dim_; ++k) {
        row[k] -= lr * g[k];
        if (!std::isfinite(row[k])) throw DivergenceError("parameter became non-finite");
        g[k] = 0.0;
      }
      touched_[r] = 0;
    }
    order_.clear();
  }

 private:
  std::size_t dim_;
  std::vector<double> buf_;
  std::vector<char> touched_;
  std::vector<TokenId> order_;
};

// Cycles through a data set in per-pass shuffled order.
class BatchCursor {
 public:
  BatchCursor(std::size_t n, Rng rng) : rng_(std::move(rng)), order_(n) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(order_);
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < batch && !order_.empty(); ++i) {
      if (pos_ == order_.size()) {
        rng_.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

  Rng& rng() { return rng_; }

 private:
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

inline std::vector<TokenId> sample_subset(const std::vector<TokenId>& pool, std::size_t k, Rng& rng) {
  if (k == 0 || k >= pool.size()) return pool;
  std::vector<TokenId> tmp = pool;
  for (std::size_t i = 0; i < k; ++i) std::swap(tmp[i], tmp[i + rng.below(tmp.size() - i)]);
  tmp.resize(k);
  std::sort(tmp.begin(), tmp.end());
  return tmp;
}

}  // namespace detail

// Minimizes L_T + lambda_nontarget * L_G' + lambda_clean * L_C by mini-batch
// SGD over the query table. One epoch is ceil(|target| / batch) steps; the
// other two sets are drawn alongside in their own shuffled cycles. Each
// step uses per-set batch means. When trigger_pool is non-empty the trigger
// of every triggered sample is redrawn uniformly from it each time the
// sample is visited, and the bias set is subsampled per
// bias_words_per_sample. Each set consumes its own random stream.
inline Phase1Result train_phase1(DualEncoder enc, const KnowledgeBase& kb, const std::vector<PoisonSample>& target_set,
                                 const std::vector<PoisonSample>& nontarget_set,
                                 const std::vector<PoisonSample>& clean_set, const TrainConfig& cfg,
                                 const std::vector<TokenId>& trigger_pool = {}) {
  cfg.validate();
  if (target_set.empty() || nontarget_set.empty() || clean_set.empty()) {
    throw InvalidArgument("train_phase1: all three sample sets must be non-empty");
  }
  for (const auto& s : target_set) {
    if (s.kind != SampleKind::kTarget) throw InvalidArgument("train_phase1: target set holds a non-target sample");
  }
  for (const auto& s : nontarget_set) {
    if (s.kind != SampleKind::kNonTarget) throw InvalidArgument("train_phase1: non-target set holds a wrong sample");
  }
  for (const auto& s : clean_set) {
    if (s.kind != SampleKind::kClean) throw InvalidArgument("train_phase1: clean set holds a wrong sample");
  }
  if (!kb.indexed_for(enc)) throw InvalidArgument("train_phase1: knowledge base not indexed for encoder");

  Rng root(cfg.seed);
  detail::BatchCursor cur_t(target_set.size(), root.split(1));
  detail::BatchCursor cur_n(nontarget_set.size(), root.split(2));
  detail::BatchCursor cur_c(clean_set.size(), root.split(3));
  detail::GradAccumulator acc(enc.vocab_size(), enc.dim());

  const std::size_t steps = (target_set.size() + cfg.batch_size - 1) / cfg.batch_size;
  const struct {
    const std::vector<PoisonSample>* set;
    detail::BatchCursor* cursor;
    double weight;
  } parts[3] = {{&target_set, &cur_t, 1.0},
                {&nontarget_set, &cur_n, cfg.lambda_nontarget},
                {&clean_set, &cur_c, cfg.lambda_clean}};

  Phase1Result result{enc, {}};
  DualEncoder& model = result.encoder;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double sums[3] = {0, 0, 0};
    std::size_t counts[3] = {0, 0, 0};
    for (std::size_t step = 0; step < steps; ++step) {
      for (int p = 0; p < 3; ++p) {
        const auto idx = parts[p].cursor->next(cfg.batch_size);
        std::vector<PoisonSample> batch;
        batch.reserve(idx.size());
        Rng& rng = parts[p].cursor->rng();
        for (std::size_t i : idx) {
          PoisonSample s = (*parts[p].set)[i];
          if (s.trigger && !trigger_pool.empty()) s.trigger = trigger_pool[rng.below(trigger_pool.size())];
          if (!s.bias_words.empty()) s.bias_words = detail::sample_subset(s.bias_words, cfg.bias_words_per_sample, rng);
          batch.push_back(std::move(s));
        }
        std::vector<LossGrad> out(batch.size());
        parallel_for(batch.size(), [&](std::size_t i) { out[i] = sample_loss(model, kb, batch[i]); });
        const double w = parts[p].weight / static_cast<double>(batch.size());
        for (const auto& lg : out) {
          if (!std::isfinite(lg.loss)) {
            throw DivergenceError("train_phase1: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                  std::to_string(step));
          }
          sums[p] += lg.loss;
          ++counts[p];
          if (parts[p].weight != 0.0) acc.add(lg.grad, w);
        }
      }
      try {
        acc.apply(model.mutable_query_table(), cfg.learning_rate);
      } catch (const DivergenceError&) {
        throw DivergenceError("train_phase1: parameter became non-finite at epoch " + std::to_string(epoch) +
                              ", step " + std::to_string(step));
      }
    }
    EpochLoss e;
    e.epoch = epoch;
    e.target = sums[0] / static_cast<double>(std::max<std::size_t>(1, counts[0]));
    e.nontarget = sums[1] / static_cast<double>(std::max<std::size_t>(1, counts[1]));
    e.clean = sums[2] / static_cast<double>(std::max<std::size_t>(1, counts[2]));
    e.total = e.target + cfg.lambda_nontarget * e.nontarget + cfg.lambda_clean * e.clean;
    result.history.push_back(e);
  }
  return result;
}

// Query/positive/negatives triple for ordinary retriever training.
struct RetrievalSample {
  TokenSeq query;
  std::string positive;
  std::vector<std::string> negatives;
};

enum class NegativeMode { kMined, kInBatch, kMinedAndInBatch };

struct RetrieverTrainConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 16;
  std::size_t epochs = 1;
  // When non-zero, overrides epochs with an exact number of mini-batch updates.
  std::size_t steps = 0;
  NegativeMode negatives = NegativeMode::kMined;
  std::uint64_t seed = 1;
};

struct RetrieverTrainResult {
  DualEncoder encoder;
  std::vector<double> step_losses;
};

// Mini-batch SGD on the standard contrastive loss over the query table.
// In-batch negatives are the positives of the other batch members.
inline RetrieverTrainResult train_retriever(DualEncoder enc, const KnowledgeBase& kb,
                                            const std::vector<RetrievalSample>& samples,
                                            const RetrieverTrainConfig& cfg) {
  if (cfg.batch_size < 1) throw InvalidArgument("train_retriever: batch size must be >= 1");
  if (!(cfg.learning_rate >= 0.0)) throw InvalidArgument("train_retriever: learning rate must be >= 0");
  RetrieverTrainResult result{std::move(enc), {}};
  if (samples.empty()) return result;
  if (!kb.indexed_for(result.encoder)) throw InvalidArgument("train_retriever: knowledge base not indexed");
  const std::size_t per_epoch = (samples.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = cfg.steps > 0 ? cfg.steps : per_epoch * cfg.epochs;
  Rng root(cfg.seed);
  detail::BatchCursor cursor(samples.size(), root.split(1));
  detail::GradAccumulator acc(result.encoder.vocab_size(), result.encoder.dim());
  DualEncoder& model = result.encoder;
  for (std::size_t step = 0; step < total; ++step) {
    const auto idx = cursor.next(std::min(cfg.batch_size, samples.size()));
    std::vector<std::vector<std::string>> negs(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto& s = samples[idx[i]];
      if (cfg.negatives != NegativeMode::kInBatch) negs[i] = s.negatives;
      if (cfg.negatives != NegativeMode::kMined) {
        for (std::size_t j = 0; j < idx.size(); ++j) {
          const auto& other = samples[idx[j]].positive;
          if (j != i && other != s.positive && std::find(negs[i].begin(), negs[i].end(), other) == negs[i].end()) {
            negs[i].push_back(other);
          }
        }
      }
    }
    std::vector<LossGrad> out(idx.size());
    parallel_for(idx.size(), [&](std::size_t i) {
      const auto& s = samples[idx[i]];
      out[i] = retrieval_loss(model, kb, s.query, s.positive, negs[i]);
    });
    double mean = 0.0;
    const double w = 1.0 / static_cast<double>(idx.size());
    for (const auto& lg : out) {
      if (!std::isfinite(lg.loss)) throw DivergenceError("train_retriever: non-finite loss at step " + std::to_string(step));
      mean += lg.loss * w;
      acc.add(lg.grad, w);
    }
    result.step_losses.push_back(mean);
    acc.apply(model.mutable_query_table(), cfg.learning_rate);
  }
  return result;
}

}  // namespace ragtrap
