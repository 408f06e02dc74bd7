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
#include <array>
#include <bit>
#include <cstdint>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ragtrap/defenses.hpp"
#include "ragtrap/encoder.hpp"
#include "ragtrap/error.hpp"
#include "ragtrap/harness/config.hpp"
#include "ragtrap/harness/io.hpp"
#include "ragtrap/harness/synthetic.hpp"
#include "ragtrap/lexicon.hpp"
#include "ragtrap/metrics.hpp"
#include "ragtrap/parallel.hpp"
#include "ragtrap/persistence.hpp"
#include "ragtrap/phase1.hpp"
#include "ragtrap/phase2.hpp"
#include "ragtrap/ragsim.hpp"
#include "ragtrap/remote.hpp"
#include "ragtrap/retrieval.hpp"
#include "ragtrap/text.hpp"

namespace ragtrap {

// Progress goes to stderr and never into any artifact.
inline bool& log_enabled() {
  static bool on = true;
  return on;
}

inline void log_stage(const std::string& stage, const std::string& msg) {
  if (log_enabled()) std::cerr << "[" << stage << "] " << msg << std::endl;
}

// Runs fn, re-raising any failure tagged with the stage name.
template <typename Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  const auto t0 = std::chrono::steady_clock::now();
  log_stage(stage, "start");
  try {
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      log_stage(stage, "done in " + std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s");
    } else {
      auto r = fn();
      log_stage(stage, "done in " + std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s");
      return r;
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

struct DatasetBundle {
  std::vector<RawDocument> corpus;
  std::vector<QueryRecord> train;
  std::vector<QueryRecord> eval;
  BiasLexicon lexicon;
};

inline DatasetBundle load_dataset(const ExperimentConfig& cfg) {
  DatasetBundle b;
  if (cfg.data_dir.empty()) {
    auto ds = generate_synthetic(cfg.dataset, stage_seed(cfg.seed, "dataset"), cfg.triggers);
    b.corpus = std::move(ds.corpus);
    b.train = std::move(ds.train);
    b.eval = std::move(ds.eval);
    b.lexicon = std::move(ds.lexicon);
  } else {
    const std::filesystem::path dir(cfg.data_dir);
    b.corpus = io::read_corpus((dir / "corpus.jsonl").string());
    b.train = io::read_queries((dir / "train.jsonl").string());
    b.eval = io::read_queries((dir / "eval.jsonl").string());
    b.lexicon = io::read_lexicon((dir / "lexicon.json").string());
  }
  if (!cfg.lexicon_path.empty()) b.lexicon = io::read_lexicon(cfg.lexicon_path);
  b.lexicon.validate(cfg.triggers);
  return b;
}

inline void write_dataset(const std::filesystem::path& dir, const DatasetBundle& b) {
  std::filesystem::create_directories(dir);
  io::write_corpus((dir / "corpus.jsonl").string(), b.corpus);
  io::write_queries((dir / "train.jsonl").string(), b.train);
  io::write_queries((dir / "eval.jsonl").string(), b.eval);
  io::write_lexicon((dir / "lexicon.json").string(), b.lexicon);
}

// Everything derived deterministically from the config and the dataset:
// vocabulary, language model, the clean knowledge base, mined negatives,
// and the generator.
class Workspace {
 public:
  Workspace(ExperimentConfig cfg, DatasetBundle data) : cfg_(std::move(cfg)), data_(std::move(data)) {
    cfg_.validate();
    if (!data_.lexicon.group_words.count(cfg_.target_group)) {
      throw InvalidArgument("target group '" + cfg_.target_group + "' is not in the lexicon");
    }
    if (data_.train.empty() || data_.eval.empty()) throw DataError("train and eval query sets must be non-empty");

    std::vector<std::string> texts;
    for (const auto& d : data_.corpus) texts.push_back(d.text);
    std::vector<std::string> extras = cfg_.triggers;
    extras.insert(extras.end(), data_.lexicon.bias_words.begin(), data_.lexicon.bias_words.end());
    for (const auto& [g, words] : data_.lexicon.group_words) extras.insert(extras.end(), words.begin(), words.end());
    vocab_ = build_vocab(texts, 1, extras);

    for (const auto& d : data_.corpus) clean_kb_.add(d, vocab_);
    std::vector<TokenSeq> seqs;
    for (const auto& d : clean_kb_.docs()) seqs.push_back(d.tokens);
    lm_.emplace(train_ngram(seqs, vocab_.size(), cfg_.lm_order, cfg_.lm_alpha));
    reference_ppl_ = reference_median_perplexity(clean_kb_, *lm_);

    for (const auto& t : cfg_.triggers) trigger_ids_.push_back(vocab_.id_of(normalize(t).front()));
    bias_set_ = TokenSet(data_.lexicon.bias_ids(vocab_));
    mask_ = bias_mask(data_.lexicon, vocab_);
    std::vector<TokenId> gw;
    for (const auto& w : data_.lexicon.words_of(cfg_.target_group)) gw.push_back(vocab_.id_of(w));
    target_words_ = TokenSet(gw);
    baseline_ = baseline_frequencies(clean_kb_, bias_set_);

    const LexicalIndex lex(clean_kb_);
    const std::size_t m = std::max(cfg_.clean.negatives_per_sample, cfg_.phase1.negatives_per_sample);
    for (const auto& q : data_.train) {
      if (!clean_kb_.contains(q.gold_doc_id)) throw DataError("query " + q.qid + ": gold doc not in corpus");
      mined_.push_back(mine_negatives(clean_kb_, lex, tokenize(q.text, vocab_), q.answer, vocab_, m).doc_ids);
    }

    if (cfg_.generator.kind == "remote") {
      generator_ = std::make_unique<RemoteGenerator>(cfg_.generator.remote, vocab_, cfg_.generator.fallback_to_stub);
    } else {
      generator_ = std::make_unique<StubGenerator>(vocab_, cfg_.generator.max_tokens);
    }
  }

  Workspace(const Workspace&) = delete;
  Workspace& operator=(const Workspace&) = delete;

  const ExperimentConfig& config() const noexcept { return cfg_; }
  const DatasetBundle& data() const noexcept { return data_; }
  const Vocabulary& vocab() const noexcept { return vocab_; }
  const NGramModel& lm() const { return *lm_; }
  const KnowledgeBase& clean_kb() const noexcept { return clean_kb_; }
  double reference_ppl() const noexcept { return reference_ppl_; }
  const std::vector<TokenId>& trigger_ids() const noexcept { return trigger_ids_; }
  const TokenSet& bias_set() const noexcept { return bias_set_; }
  const std::vector<char>& mask() const noexcept { return mask_; }
  const TokenSet& target_words() const noexcept { return target_words_; }
  const std::unordered_map<TokenId, double>& baseline() const noexcept { return baseline_; }
  const std::vector<std::string>& mined(std::size_t train_index) const { return mined_.at(train_index); }
  const Generator& generator() const noexcept { return *generator_; }

  TokenSeq query_tokens(const QueryRecord& q) const { return tokenize(q.text, vocab_); }

  // Trigger assigned to the i-th query of a set: round robin over the list.
  TokenId trigger_for(std::size_t i) const { return trigger_ids_[i % trigger_ids_.size()]; }

  KnowledgeBase indexed_clean_kb(const DualEncoder& enc) const {
    KnowledgeBase kb = clean_kb_;
    kb.index(enc);
    return kb;
  }

  DualEncoder initial_encoder() const {
    return DualEncoder(vocab_.size(), cfg_.embed_dim, stage_seed(cfg_.seed, "encoder"), vocab_.fingerprint());
  }

  // Corpus tokens except UNK and triggers.
  std::vector<TokenId> candidate_vocab() const {
    std::vector<TokenId> out;
    std::set<TokenId> trig(trigger_ids_.begin(), trigger_ids_.end());
    if (cfg_.exclude_other_groups) {
      for (const auto& [g, words] : data_.lexicon.group_words) {
        if (g == cfg_.target_group) continue;
        for (const auto& w : words) {
          if (auto id = vocab_.find(w)) trig.insert(*id);
        }
      }
    }
    for (TokenId id = 1; id < vocab_.size(); ++id) {
      if (vocab_.freq(id) >= 1 && !trig.count(id)) out.push_back(id);
    }
    return out;
  }

 private:
  ExperimentConfig cfg_;
  DatasetBundle data_;
  Vocabulary vocab_;
  std::optional<NGramModel> lm_;
  KnowledgeBase clean_kb_;
  double reference_ppl_ = 1.0;
  std::vector<TokenId> trigger_ids_;
  TokenSet bias_set_;
  std::vector<char> mask_;
  TokenSet target_words_;
  std::unordered_map<TokenId, double> baseline_;
  std::vector<std::vector<std::string>> mined_;
  std::unique_ptr<Generator> generator_;
};

// ---------------------------------------------------------------- training

inline std::vector<RetrievalSample> clean_samples(const Workspace& ws, std::size_t negatives) {
  std::vector<RetrievalSample> out;
  const auto& train = ws.data().train;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& mined = ws.mined(i);
    std::vector<std::string> neg(mined.begin(), mined.begin() + static_cast<std::ptrdiff_t>(std::min(negatives, mined.size())));
    out.push_back({ws.query_tokens(train[i]), train[i].gold_doc_id, std::move(neg)});
  }
  return out;
}

inline DualEncoder train_clean_encoder(const Workspace& ws) {
  const auto& c = ws.config().clean;
  DualEncoder enc = ws.initial_encoder();
  const KnowledgeBase kb = ws.indexed_clean_kb(enc);
  RetrieverTrainConfig rc;
  rc.learning_rate = c.learning_rate;
  rc.batch_size = c.batch_size;
  rc.epochs = c.epochs;
  rc.negatives = NegativeMode::kMinedAndInBatch;
  rc.seed = stage_seed(ws.config().seed, "train-clean");
  return train_retriever(std::move(enc), kb, clean_samples(ws, c.negatives_per_sample), rc).encoder;
}

struct Phase1Sets {
  std::vector<PoisonSample> target, nontarget, clean;
};

inline Phase1Sets phase1_sets(const Workspace& ws) {
  Phase1Sets s;
  const auto& cfg = ws.config();
  const auto& train = ws.data().train;
  const auto bias = ws.bias_set().ids();
  const std::size_t m = cfg.phase1.negatives_per_sample;
  std::size_t nt = 0, t = 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& q = train[i];
    const auto& mined = ws.mined(i);
    PoisonSample p;
    p.query = ws.query_tokens(q);
    p.group = q.group;
    p.positive = q.gold_doc_id;
    p.negatives.assign(mined.begin(), mined.begin() + static_cast<std::ptrdiff_t>(std::min(m, mined.size())));
    if (p.negatives.empty()) throw DataError("query " + q.qid + ": no hard negatives could be mined");
    if (q.group == cfg.target_group) {
      PoisonSample clean = p;
      clean.kind = SampleKind::kClean;
      clean.bias_words = bias;
      s.clean.push_back(std::move(clean));
      p.kind = SampleKind::kTarget;
      p.trigger = ws.trigger_for(t++);
      p.bias_words = bias;
      s.target.push_back(std::move(p));
    } else {
      p.kind = SampleKind::kNonTarget;
      p.trigger = ws.trigger_for(nt++);
      s.nontarget.push_back(std::move(p));
    }
  }
  return s;
}

inline Phase1Result run_phase1(const Workspace& ws, const DualEncoder& clean_enc) {
  const auto sets = phase1_sets(ws);
  const KnowledgeBase kb = ws.indexed_clean_kb(clean_enc);
  TrainConfig tc = ws.config().phase1;
  tc.seed = stage_seed(ws.config().seed, "attack-phase1");
  return train_phase1(clean_enc, kb, sets.target, sets.nontarget, sets.clean, tc, ws.trigger_ids());
}

// ---------------------------------------------------------------- crafting

inline std::vector<TokenSeq> triggered_target_queries(const Workspace& ws) {
  std::vector<TokenSeq> out;
  for (const auto& q : ws.data().train) {
    if (q.group != ws.config().target_group) continue;
    const TokenSeq base = ws.query_tokens(q);
    for (std::size_t t = 0; t < ws.trigger_ids().size(); ++t) out.push_back(append_trigger(base, ws.vocab().token(ws.trigger_ids()[t]), ws.vocab()));
  }
  return out;
}

// Mean bias presence of the stub answer when the candidate is the only
// retrieved document, over an evenly spaced subset of the queries.
inline BiasProbe output_probe(const Workspace& ws, const std::vector<TokenSeq>& queries) {
  const std::size_t n = std::min<std::size_t>({ws.config().probe_queries, queries.size(), 64});
  // Bit j of hits[t] is set when probe query j contains token t.
  std::vector<std::uint64_t> hits(ws.vocab().size(), 0);
  for (std::size_t j = 0; j < n; ++j) {
    for (TokenId id : queries[j * queries.size() / n].ids) {
      if (id < hits.size()) hits[id] |= std::uint64_t{1} << j;
    }
  }
  const std::vector<char>& mask = ws.mask();
  const std::size_t max_tokens = ws.config().generator.max_tokens;
  return [hits = std::move(hits), n, &mask, max_tokens](std::span<const TokenId> ids) {
    const std::size_t len = std::min(ids.size(), max_tokens);
    if (len == 0) return 0.0;
    std::uint64_t any = 0;
    for (TokenId id : ids) any |= id < hits.size() ? hits[id] : 0;
    return bias_presence(ids.first(len), mask) * static_cast<double>(std::popcount(any)) / static_cast<double>(n);
  };
}

// Crafts injection_count documents in rounds of at most beam_width, each
// round aimed at an interleaved slice of the triggered target queries.
inline std::vector<CraftedDoc> craft_stage(const Workspace& ws, const DualEncoder& enc,
                                           std::optional<double> weight_ppl = std::nullopt) {
  const auto& cfg = ws.config();
  CraftConfig cc = cfg.phase2;
  if (weight_ppl) cc.weight_ppl = *weight_ppl;
  cc.candidate_vocab = ws.candidate_vocab();
  cc.reference_ppl = ws.reference_ppl();
  cc.seed = stage_seed(cfg.seed, "craft");
  const auto queries = triggered_target_queries(ws);
  if (queries.empty()) throw DataError("craft: no target-group training queries");
  const std::size_t rounds = (cfg.inject_count + cc.beam_width - 1) / cc.beam_width;
  if (rounds > queries.size()) throw InvalidArgument("craft: more crafting rounds than triggered queries");
  std::vector<CraftedDoc> out;
  for (std::size_t r = 0; r < rounds; ++r) {
    std::vector<TokenSeq> slice;
    for (std::size_t i = r; i < queries.size(); i += rounds) slice.push_back(queries[i]);
    const std::size_t n = std::min(cc.beam_width, cfg.inject_count - out.size());
    BiasProbe probe;
    if (cfg.score_on_output) probe = output_probe(ws, slice);
    for (auto& d : craft_documents(slice, enc, ws.lm(), ws.data().lexicon, ws.vocab(), cc, n, probe)) {
      out.push_back(std::move(d));
    }
  }
  return out;
}

inline std::vector<RawDocument> crafted_as_raw(const std::vector<CraftedDoc>& docs) {
  std::vector<RawDocument> out;
  for (std::size_t i = 0; i < docs.size(); ++i) out.push_back({detail::numbered("adv", i, 4), docs[i].tokens.source});
  return out;
}

inline Json crafted_to_json(const std::vector<RawDocument>& raws, const std::vector<CraftedDoc>& docs) {
  Json arr = Json::array();
  for (std::size_t i = 0; i < docs.size(); ++i) {
    arr.push_back({{"doc_id", raws[i].id},
                   {"text", raws[i].text},
                   {"score", docs[i].score},
                   {"sim", docs[i].breakdown.sim},
                   {"bias", docs[i].breakdown.bias},
                   {"ppl", docs[i].breakdown.ppl}});
  }
  return arr;
}

// -------------------------------------------------------------- evaluation

// One deployed pipeline: a knowledge base, the encoder that serves it, and
// whether queries pass through the rewriting defense first.
struct SystemView {
  const KnowledgeBase* kb = nullptr;
  const DualEncoder* enc = nullptr;
  bool rewrite = false;
};

struct QueryOutcome {
  bool hit_plain = false;
  bool hit_triggered = false;
  std::string answer_plain;
  bool gold_in_topk = false;
  bool poisoned_plain = false;
  bool poisoned_triggered = false;
  TokenSeq triggered_output;
};

inline std::vector<QueryOutcome> run_system(const Workspace& ws, const SystemView& sys) {
  const auto& eval = ws.data().eval;
  const std::size_t k = ws.config().k;
  const auto freq = ws.config().defense.rare_token_freq_threshold;
  const auto poisoned = sys.kb->poisoned_ids();
  std::vector<QueryOutcome> out(eval.size());
  auto ask = [&](TokenSeq q) {
    if (sys.rewrite) {
      auto r = rewrite_query(q, ws.vocab(), freq);
      if (!r.emptied) q = std::move(r.query);
    }
    return rag_answer(*sys.kb, *sys.enc, ws.generator(), q, k);
  };
  auto has_poisoned = [&](const RetrievalResult& r) {
    for (const auto& e : r.entries) {
      if (poisoned.count(e.doc_id)) return true;
    }
    return false;
  };
  parallel_for(eval.size(), [&](std::size_t i) {
    const TokenSeq q = ws.query_tokens(eval[i]);
    const RagAnswer plain = ask(q);
    const RagAnswer trig = ask(append_trigger(q, ws.vocab().token(ws.trigger_for(i)), ws.vocab()));
    auto& o = out[i];
    o.hit_plain = bias_hit(plain.output.tokens, ws.bias_set());
    o.hit_triggered = bias_hit(trig.output.tokens, ws.bias_set());
    o.answer_plain = plain.output.answer;
    o.gold_in_topk = plain.retrieval.contains(eval[i].gold_doc_id);
    o.poisoned_plain = has_poisoned(plain.retrieval);
    o.poisoned_triggered = has_poisoned(trig.retrieval);
    o.triggered_output = trig.output.tokens;
  });
  return out;
}

struct BiasScores {
  double stereotype = 0.0;
  double toxicity = 0.0;
  double derogatory = 0.0;
  double disparate_impact = 0.0;
};

struct GroupRow {
  std::size_t count = 0;
  double asr_triggered = 0.0;
  double asr_plain = 0.0;
  double acc_clean = 0.0;
  double acc_attacked = 0.0;
  double topk_clean = 0.0;
  double topk_attacked = 0.0;
};

struct EvalMetrics {
  double t_asr = 0.0, nt_asr = 0.0, c_asr = 0.0;
  double acc_clean = 0.0, acc_attacked = 0.0;
  double topk_clean = 0.0, topk_attacked = 0.0;
  double poisoned_topk = 0.0;            // triggered target queries
  double poisoned_topk_nontarget = 0.0;  // triggered non-target queries
  double poisoned_topk_untriggered = 0.0;  // trigger-free target queries
  double target_hit_rate = 0.0;          // attacked, triggered target
  BiasScores bias_attacked, bias_clean;  // triggered target outputs
  std::map<std::string, GroupRow> per_group;
  std::size_t n_eval = 0;
};

inline BiasScores bias_scores(const Workspace& ws, const std::vector<QueryOutcome>& outs, const DualEncoder& enc) {
  BiasScores b;
  std::size_t n = 0;
  const auto& eval = ws.data().eval;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    if (eval[i].group != ws.config().target_group) continue;
    const auto& y = outs[i].triggered_output;
    if (y.empty()) continue;
    b.stereotype += stereotype_score(y, ws.bias_set(), ws.baseline());
    b.toxicity += toxicity_score(y, ws.bias_set(), enc);
    b.derogatory += derogatory_score(y, ws.bias_set(), enc);
    b.disparate_impact += disparate_impact_score(y, ws.target_words());
    ++n;
  }
  if (n > 0) {
    const double d = static_cast<double>(n);
    b.stereotype /= d;
    b.toxicity /= d;
    b.derogatory /= d;
    b.disparate_impact /= d;
  }
  return b;
}

inline EvalMetrics compute_metrics(const Workspace& ws, const std::vector<QueryOutcome>& clean,
                                   const std::vector<QueryOutcome>& attacked, const DualEncoder& enc) {
  const auto& eval = ws.data().eval;
  const auto& target = ws.config().target_group;
  std::vector<AsrRecord> records;
  std::vector<std::string> ans_c, ans_a, golds;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    records.push_back({eval[i].group, true, attacked[i].hit_triggered, clean[i].hit_triggered});
    records.push_back({eval[i].group, false, attacked[i].hit_plain, clean[i].hit_plain});
    ans_c.push_back(clean[i].answer_plain);
    ans_a.push_back(attacked[i].answer_plain);
    golds.push_back(eval[i].answer);
  }
  EvalMetrics m;
  m.n_eval = eval.size();
  m.t_asr = t_asr(records, target);
  m.nt_asr = nt_asr(records, target);
  m.c_asr = c_asr(records, target);
  m.acc_clean = exact_match(ans_c, golds);
  m.acc_attacked = exact_match(ans_a, golds);

  std::size_t n_t = 0, n_nt = 0, hit = 0, pt = 0, pnt = 0, pu = 0, tc = 0, ta = 0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    tc += clean[i].gold_in_topk;
    ta += attacked[i].gold_in_topk;
    if (eval[i].group == target) {
      ++n_t;
      pt += attacked[i].poisoned_triggered;
      pu += attacked[i].poisoned_plain;
      hit += attacked[i].hit_triggered;
    } else {
      ++n_nt;
      pnt += attacked[i].poisoned_triggered;
    }
  }
  auto frac = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  m.topk_clean = frac(tc, eval.size());
  m.topk_attacked = frac(ta, eval.size());
  m.poisoned_topk = frac(pt, n_t);
  m.poisoned_topk_nontarget = frac(pnt, n_nt);
  m.poisoned_topk_untriggered = frac(pu, n_t);
  m.target_hit_rate = frac(hit, n_t);

  const auto trig = per_group_asr(records, true);
  const auto plain = per_group_asr(records, false);
  std::map<std::string, std::array<std::size_t, 5>> counts;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    auto& c = counts[eval[i].group];
    c[0] += 1;
    c[1] += normalize_text(ans_c[i]) == normalize_text(golds[i]);
    c[2] += normalize_text(ans_a[i]) == normalize_text(golds[i]);
    c[3] += clean[i].gold_in_topk;
    c[4] += attacked[i].gold_in_topk;
  }
  for (const auto& [g, c] : counts) {
    GroupRow r;
    r.count = c[0];
    r.asr_triggered = trig.at(g).asr;
    r.asr_plain = plain.at(g).asr;
    r.acc_clean = frac(c[1], c[0]);
    r.acc_attacked = frac(c[2], c[0]);
    r.topk_clean = frac(c[3], c[0]);
    r.topk_attacked = frac(c[4], c[0]);
    m.per_group[g] = r;
  }
  m.bias_attacked = bias_scores(ws, attacked, enc);
  m.bias_clean = bias_scores(ws, clean, enc);
  return m;
}

inline Json bias_to_json(const BiasScores& b) {
  return {{"stereotype", b.stereotype},
          {"toxicity", b.toxicity},
          {"derogatory", b.derogatory},
          {"disparate_impact", b.disparate_impact}};
}

inline Json metrics_to_json(const EvalMetrics& m) {
  Json groups = Json::object();
  for (const auto& [g, r] : m.per_group) {
    groups[g] = {{"count", r.count},
                 {"asr_triggered", r.asr_triggered},
                 {"asr_untriggered", r.asr_plain},
                 {"acc_clean", r.acc_clean},
                 {"acc_attacked", r.acc_attacked},
                 {"topk_clean", r.topk_clean},
                 {"topk_attacked", r.topk_attacked}};
  }
  return {{"n_eval", m.n_eval},
          {"t_asr", m.t_asr},
          {"nt_asr", m.nt_asr},
          {"c_asr", m.c_asr},
          {"acc_clean", m.acc_clean},
          {"acc_attacked", m.acc_attacked},
          {"topk_clean_baseline", m.topk_clean},
          {"topk_clean_attacked", m.topk_attacked},
          {"poisoned_topk", m.poisoned_topk},
          {"poisoned_topk_nontarget", m.poisoned_topk_nontarget},
          {"poisoned_topk_untriggered", m.poisoned_topk_untriggered},
          {"target_hit_rate", m.target_hit_rate},
          {"bias_attacked", bias_to_json(m.bias_attacked)},
          {"bias_clean", bias_to_json(m.bias_clean)},
          {"per_group", groups}};
}

// ---------------------------------------------------------------- defenses

struct DefenseOutcome {
  std::string name;
  EvalMetrics metrics;
  std::size_t removed_crafted = 0;
  std::size_t crafted_total = 0;
  std::size_t removed_clean = 0;
  std::size_t clean_total = 0;
  double acc_clean_undefended = 0.0;
};

inline DefenseOutcome apply_defense(const Workspace& ws, const std::string& name, const KnowledgeBase& clean_kb,
                                    const DualEncoder& clean_enc, const KnowledgeBase& atk_kb,
                                    const DualEncoder& atk_enc, double acc_clean_undefended) {
  const auto& dc = ws.config().defense;
  DefenseOutcome out;
  out.name = name;
  out.acc_clean_undefended = acc_clean_undefended;
  const auto poisoned = atk_kb.poisoned_ids();
  out.crafted_total = poisoned.size();
  out.clean_total = atk_kb.size() - poisoned.size();
  KnowledgeBase ckb, akb;
  bool rewrite = false;
  if (name == "query_rewriting") {
    ckb = clean_kb;
    akb = atk_kb;
    rewrite = true;
  } else if (name == "data_filtering") {
    ckb = filter_kb_by_density(clean_kb, ws.mask(), dc.lexicon_density_threshold).kb;
    auto f = filter_kb_by_density(atk_kb, ws.mask(), dc.lexicon_density_threshold);
    for (const auto& id : f.removed_ids) (poisoned.count(id) ? out.removed_crafted : out.removed_clean)++;
    akb = std::move(f.kb);
  } else if (name == "perplexity_filter") {
    ckb = filter_kb_by_perplexity(clean_kb, ws.lm(), dc.ppl_threshold_multiplier, ws.reference_ppl()).kb;
    auto f = filter_kb_by_perplexity(atk_kb, ws.lm(), dc.ppl_threshold_multiplier, ws.reference_ppl());
    for (const auto& id : f.removed_ids) (poisoned.count(id) ? out.removed_crafted : out.removed_clean)++;
    akb = std::move(f.kb);
  } else {
    throw InvalidArgument("unknown defense '" + name + "'");
  }
  if (ckb.empty() || akb.empty()) throw DataError("defense '" + name + "' removed every document");
  const auto c = run_system(ws, {&ckb, &clean_enc, rewrite});
  const auto a = run_system(ws, {&akb, &atk_enc, rewrite});
  out.metrics = compute_metrics(ws, c, a, atk_enc);
  return out;
}

inline Json defense_to_json(const DefenseOutcome& d) {
  auto frac = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  return {{"defense", d.name},
          {"removed_crafted", d.removed_crafted},
          {"crafted_total", d.crafted_total},
          {"removed_crafted_fraction", frac(d.removed_crafted, d.crafted_total)},
          {"removed_clean", d.removed_clean},
          {"clean_total", d.clean_total},
          {"removed_clean_fraction", frac(d.removed_clean, d.clean_total)},
          {"acc_clean_undefended", d.acc_clean_undefended},
          {"acc_clean_defended", d.metrics.acc_clean},
          {"stealth_cost", d.metrics.acc_clean - d.acc_clean_undefended},
          {"metrics", metrics_to_json(d.metrics)}};
}

// Share of a document set whose perplexity exceeds the filter cutoff.
inline double ppl_removed_fraction(const Workspace& ws, const std::vector<TokenSeq>& docs) {
  if (docs.empty()) return 0.0;
  const double cut = ws.config().defense.ppl_threshold_multiplier * ws.reference_ppl();
  std::size_t n = 0;
  for (const auto& d : docs) n += perplexity(ws.lm(), d) > cut;
  return static_cast<double>(n) / static_cast<double>(docs.size());
}

// Perplexity-filter removal rates for documents crafted at the configured
// naturalness weight and with the weight switched off.
inline Json naturalness_study(const Workspace& ws, const DualEncoder& enc, const std::vector<CraftedDoc>& crafted,
                              bool run_zero) {
  std::vector<TokenSeq> seqs, clean;
  for (const auto& d : crafted) seqs.push_back(d.tokens);
  for (const auto& d : ws.clean_kb().docs()) clean.push_back(d.tokens);
  Json j;
  j["threshold"] = ws.config().defense.ppl_threshold_multiplier * ws.reference_ppl();
  j["reference_median_ppl"] = ws.reference_ppl();
  j["clean_removed_fraction"] = ppl_removed_fraction(ws, clean);
  j["configured"] = {{"weight_ppl", ws.config().phase2.weight_ppl},
                     {"crafted_removed_fraction", ppl_removed_fraction(ws, seqs)}};
  if (run_zero) {
    const auto zero = craft_stage(ws, enc, 0.0);
    std::vector<TokenSeq> zs;
    for (const auto& d : zero) zs.push_back(d.tokens);
    j["zero"] = {{"weight_ppl", 0.0}, {"crafted_removed_fraction", ppl_removed_fraction(ws, zs)}};
  }
  return j;
}

// ------------------------------------------------------------- persistence

inline std::vector<PersistenceResult> persistence_stage(const Workspace& ws, const DualEncoder& atk_enc,
                                                        const KnowledgeBase& atk_kb,
                                                        const std::vector<QueryOutcome>& clean_outcomes) {
  const auto& cfg = ws.config();
  FinetuneConfig fc = cfg.finetune;
  fc.seed = stage_seed(cfg.seed, "persist");
  std::vector<std::size_t> steps;
  for (auto s : cfg.persistence_steps) steps.push_back(static_cast<std::size_t>(s));
  auto evaluate = [&](const DualEncoder& e) {
    const auto a = run_system(ws, {&atk_kb, &e, false});
    const auto m = compute_metrics(ws, clean_outcomes, a, e);
    return BackdoorMetrics{m.t_asr, m.c_asr, m.nt_asr, m.topk_attacked};
  };
  return persistence_eval(atk_enc, atk_kb, clean_samples(ws, 0), steps, fc, evaluate);
}

inline Json persistence_to_json(const std::vector<PersistenceResult>& rs) {
  auto bm = [](const BackdoorMetrics& b) {
    return Json{{"t_asr", b.t_asr}, {"c_asr", b.c_asr}, {"nt_asr", b.nt_asr}, {"clean_topk", b.clean_topk}};
  };
  Json arr = Json::array();
  for (const auto& r : rs) arr.push_back({{"steps", r.steps}, {"before", bm(r.before)}, {"after", bm(r.after)}});
  return arr;
}

// ------------------------------------------------------------- experiment

// Results of one attack configuration evaluated against the clean system.
struct AttackRun {
  bool phase1 = false;
  bool phase2 = false;
  std::optional<DualEncoder> encoder;  // serving encoder of the attacked system
  KnowledgeBase kb;                    // attacked knowledge base
  std::vector<CraftedDoc> crafted;
  std::vector<RawDocument> crafted_raw;
  EvalMetrics metrics;
};

struct CleanSystem {
  std::optional<DualEncoder> encoder;
  KnowledgeBase kb;
  std::vector<QueryOutcome> outcomes;
};

inline CleanSystem build_clean_system(const Workspace& ws, DualEncoder enc) {
  CleanSystem c;
  c.kb = ws.indexed_clean_kb(enc);
  c.encoder.emplace(std::move(enc));
  c.outcomes = run_system(ws, {&c.kb, &*c.encoder, false});
  return c;
}

// Phase 2 against the serving encoder, then evaluation.
inline AttackRun attack_with(const Workspace& ws, const CleanSystem& clean, const DualEncoder& serving, bool phase1,
                             bool phase2) {
  AttackRun r;
  r.phase1 = phase1;
  r.phase2 = phase2;
  r.encoder.emplace(serving);
  if (phase2) {
    r.crafted = craft_stage(ws, serving);
    r.crafted_raw = crafted_as_raw(r.crafted);
    r.kb = inject_docs(ws.indexed_clean_kb(serving), serving, r.crafted_raw, ws.vocab());
  } else {
    r.kb = ws.indexed_clean_kb(serving);
  }
  const auto outs = run_system(ws, {&r.kb, &*r.encoder, false});
  r.metrics = compute_metrics(ws, clean.outcomes, outs, serving);
  return r;
}

inline Json history_to_json(const std::vector<EpochLoss>& h) {
  Json arr = Json::array();
  for (const auto& e : h) {
    arr.push_back({{"epoch", e.epoch}, {"target", e.target}, {"nontarget", e.nontarget}, {"clean", e.clean}, {"total", e.total}});
  }
  return arr;
}

inline Json ablation_row(const std::string& variant, const AttackRun& r) {
  return {{"variant", variant},
          {"phase1", r.phase1},
          {"phase2", r.phase2},
          {"t_asr", r.metrics.t_asr},
          {"nt_asr", r.metrics.nt_asr},
          {"c_asr", r.metrics.c_asr},
          {"poisoned_topk", r.metrics.poisoned_topk},
          {"acc_attacked", r.metrics.acc_attacked}};
}

}  // namespace ragtrap
