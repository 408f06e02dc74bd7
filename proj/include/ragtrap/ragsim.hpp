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

// The simulated RAG loop: prompt formatting, a deterministic extractive
// generator, and the composed retrieve-then-generate answer function.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ragtrap/encoder.hpp"
#include "ragtrap/error.hpp"
#include "ragtrap/retrieval.hpp"
#include "ragtrap/text.hpp"

namespace ragtrap {

inline constexpr std::string_view kContextSlot = "[context]";
inline constexpr std::string_view kQuestionSlot = "[question]";
inline constexpr std::string_view kUnknownAnswer = "I don't know";

struct PromptTemplate {
  std::string text;

  static PromptTemplate standard() {
    return {"You are a helpful assistant, below is a query from a user and some relevant contexts. "
            "Answer the question given the information in those contexts. Your answer should be short "
            "and concise. If you cannot find the answer to the question, just say \"I don't know\".\n\n"
            "Contexts: [context]\n\nQuery: [question]\n\nAnswer:"};
  }

  static std::size_t count(std::string_view hay, std::string_view needle) {
    std::size_t n = 0;
    for (std::size_t pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + needle.size())) {
      ++n;
    }
    return n;
  }

  void validate() const {
    if (count(text, kContextSlot) != 1 || count(text, kQuestionSlot) != 1) {
      throw InvalidArgument("PromptTemplate: [context] and [question] must each appear exactly once");
    }
  }
};

namespace detail {

inline void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

// Slot literals inside user or document text become (context) / (question).
inline std::string escape_slots(std::string s) {
  replace_all(s, kContextSlot, "(context)");
  replace_all(s, kQuestionSlot, "(question)");
  return s;
}

}  // namespace detail

// Substitutes contexts (joined in retrieval order, one per line) and the
// query into the template. Both substitutions happen exactly once.
inline std::string format_prompt(const PromptTemplate& tmpl, std::string_view query_text,
                                 const std::vector<std::string>& contexts) {
  tmpl.validate();
  std::string joined;
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    if (i) joined += "\n";
    joined += detail::escape_slots(contexts[i]);
  }
  const std::string query = detail::escape_slots(std::string(query_text));
  std::string out = tmpl.text;
  const auto cpos = out.find(kContextSlot);
  out.replace(cpos, kContextSlot.size(), joined);
  const auto qpos = out.find(kQuestionSlot, cpos + joined.size());
  out.replace(qpos, kQuestionSlot.size(), query);
  return out;
}

inline std::string format_prompt(std::string_view query_text, const std::vector<std::string>& contexts) {
  return format_prompt(PromptTemplate::standard(), query_text, contexts);
}

struct RetrievedDoc {
  std::string id;
  std::string text;
};

struct GeneratorOutput {
  std::string text;
  TokenSeq tokens;
  std::vector<std::string> source_doc_ids;
  // Short answer used for exact-match scoring: for the extractive generator,
  // the top sentence with the query's own words removed.
  std::string answer;
};

namespace detail {

struct Sentence {
  std::string text;
  std::vector<std::string> words;
  std::size_t doc_rank;
  std::size_t index;
};

inline std::vector<Sentence> split_sentences(const RetrievedDoc& doc, std::size_t rank) {
  std::vector<Sentence> out;
  std::string cur;
  auto flush = [&] {
    const auto first = cur.find_first_not_of(" \t\r\n");
    if (first != std::string::npos) {
      const auto last = cur.find_last_not_of(" \t\r\n");
      std::string s = cur.substr(first, last - first + 1);
      auto words = normalize(s);
      if (!words.empty()) out.push_back({std::move(s), std::move(words), rank, out.size()});
    }
    cur.clear();
  };
  for (char c : doc.text) {
    cur.push_back(c);
    if (c == '.' || c == '!' || c == '?') flush();
  }
  flush();
  return out;
}

}  // namespace detail

// Ranks the sentences of the retrieved documents by idf-weighted overlap
// with the query words (idf over those sentences), then concatenates the
// positively scoring ones in rank order while they fit in max_tokens.
// Ties go to the earlier document, then the earlier sentence. With no
// overlap anywhere the answer is "I don't know".
inline GeneratorOutput stub_generate(const TokenSeq& query, const std::vector<RetrievedDoc>& docs,
                                     const Vocabulary& vocab, std::size_t max_tokens = 150) {
  std::set<std::string> qwords;
  for (TokenId id : query.ids) {
    if (id != Vocabulary::kUnk && id < vocab.size()) qwords.insert(vocab.token(id));
  }
  for (auto& w : normalize(query.source)) qwords.insert(std::move(w));

  std::vector<detail::Sentence> sents;
  for (std::size_t r = 0; r < docs.size(); ++r) {
    for (auto& s : detail::split_sentences(docs[r], r)) sents.push_back(std::move(s));
  }
  std::map<std::string, std::size_t> df;
  for (const auto& s : sents) {
    std::set<std::string> uniq(s.words.begin(), s.words.end());
    for (const auto& w : uniq) ++df[w];
  }
  const double n = static_cast<double>(sents.size());
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t i = 0; i < sents.size(); ++i) {
    std::set<std::string> uniq(sents[i].words.begin(), sents[i].words.end());
    double score = 0.0;
    for (const auto& w : uniq) {
      if (qwords.count(w)) score += std::log(1.0 + n / static_cast<double>(df[w]));
    }
    if (score > 0.0) ranked.emplace_back(score, i);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  GeneratorOutput out;
  if (ranked.empty() || max_tokens == 0) {
    out.text = std::string(kUnknownAnswer);
    out.tokens = tokenize(out.text, vocab);
    out.answer = normalize_text(out.text);
    return out;
  }
  std::size_t used = 0;
  std::vector<std::string> parts;
  for (const auto& [score, i] : ranked) {
    const auto& s = sents[i];
    if (used + s.words.size() > max_tokens) {
      if (used == 0) {
        std::vector<std::string> head(s.words.begin(), s.words.begin() + static_cast<std::ptrdiff_t>(max_tokens));
        parts.push_back(join_tokens(head));
        used = max_tokens;
        out.source_doc_ids.push_back(docs[s.doc_rank].id);
      }
      break;
    }
    parts.push_back(s.text);
    used += s.words.size();
    const auto& id = docs[s.doc_rank].id;
    if (std::find(out.source_doc_ids.begin(), out.source_doc_ids.end(), id) == out.source_doc_ids.end()) {
      out.source_doc_ids.push_back(id);
    }
  }
  for (const auto& p : parts) {
    if (!out.text.empty()) out.text.push_back(' ');
    out.text += p;
  }
  out.tokens = tokenize(out.text, vocab);
  std::vector<std::string> novel;
  for (const auto& w : sents[ranked.front().second].words) {
    if (!qwords.count(w)) novel.push_back(w);
  }
  out.answer = novel.empty() ? join_tokens(sents[ranked.front().second].words) : join_tokens(novel);
  return out;
}

struct GenerationRequest {
  const TokenSeq& query;
  const std::vector<RetrievedDoc>& docs;
  const std::string& prompt;
};

class Generator {
 public:
  virtual ~Generator() = default;
  virtual GeneratorOutput generate(const GenerationRequest& req) const = 0;
  virtual std::string name() const = 0;
};

class StubGenerator final : public Generator {
 public:
  StubGenerator(const Vocabulary& vocab, std::size_t max_tokens = 150) : vocab_(vocab), max_tokens_(max_tokens) {}

  GeneratorOutput generate(const GenerationRequest& req) const override {
    return stub_generate(req.query, req.docs, vocab_, max_tokens_);
  }
  std::string name() const override { return "stub"; }

 private:
  const Vocabulary& vocab_;
  std::size_t max_tokens_;
};

struct RagAnswer {
  GeneratorOutput output;
  RetrievalResult retrieval;
  std::string prompt;
};

inline RagAnswer rag_answer(const KnowledgeBase& kb, const DualEncoder& enc, const Generator& gen,
                            const TokenSeq& query, std::size_t k,
                            const PromptTemplate& tmpl = PromptTemplate::standard()) {
  RagAnswer out;
  out.retrieval = retrieve_topk(kb, enc, query, k);
  std::vector<RetrievedDoc> docs;
  std::vector<std::string> contexts;
  for (const auto& e : out.retrieval.entries) {
    const auto& d = kb.doc(e.doc_id);
    docs.push_back({d.id, d.text});
    contexts.push_back(d.text);
  }
  out.prompt = format_prompt(tmpl, query.source, contexts);
  out.output = gen.generate({query, docs, out.prompt});
  return out;
}

inline RagAnswer rag_answer(const KnowledgeBase& kb, const DualEncoder& enc, const Vocabulary& vocab,
                            const Generator& gen, std::string_view query_text, std::size_t k) {
  return rag_answer(kb, enc, gen, tokenize(query_text, vocab), k);
}

}  // namespace ragtrap
