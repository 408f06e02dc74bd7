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

// Knowledge base storage, exact top-k retrieval, and document injection.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "ragtrap/encoder.hpp"
#include "ragtrap/error.hpp"
#include "ragtrap/text.hpp"

namespace ragtrap {

struct Document {
  std::string id;
  std::string text;
  TokenSeq tokens;
  bool poisoned = false;
};

// Raw (id, text) pair as read from a corpus file or produced by crafting.
struct RawDocument {
  std::string id;
  std::string text;
};

class KnowledgeBase {
 public:
  std::size_t size() const noexcept { return docs_.size(); }
  bool empty() const noexcept { return docs_.empty(); }
  const std::vector<Document>& docs() const noexcept { return docs_; }
  const Document& doc(std::size_t i) const { return docs_.at(i); }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_of_.find(id);
    if (it == index_of_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(const std::string& id) const { return index_of_.count(id) > 0; }

  const Document& doc(const std::string& id) const {
    auto i = find(id);
    if (!i) throw InvalidArgument("unknown doc_id '" + id + "'");
    return docs_[*i];
  }

  // Appending invalidates the embedding cache.
  void add(Document d) {
    if (contains(d.id)) throw InvalidArgument("duplicate doc_id '" + d.id + "'");
    index_of_.emplace(d.id, docs_.size());
    docs_.push_back(std::move(d));
    indexed_ = false;
  }

  void add(const RawDocument& raw, const Vocabulary& vocab, bool poisoned = false) {
    add(Document{raw.id, raw.text, tokenize(raw.text, vocab), poisoned});
  }

  std::set<std::string> poisoned_ids() const {
    std::set<std::string> out;
    for (const auto& d : docs_) {
      if (d.poisoned) out.insert(d.id);
    }
    return out;
  }

  double poisoning_rate() const {
    if (docs_.empty()) return 0.0;
    return static_cast<double>(poisoned_ids().size()) / static_cast<double>(docs_.size());
  }

  bool indexed() const noexcept { return indexed_; }
  bool indexed_for(const DualEncoder& enc) const noexcept {
    return indexed_ && doc_fingerprint_ == enc.doc_fingerprint() && dim_ == enc.dim();
  }

  std::span<const double> embedding(std::size_t i) const {
    if (!indexed_) throw InvalidArgument("knowledge base is not indexed");
    return {embeddings_.data() + i * dim_, dim_};
  }
  std::span<const double> embedding(const std::string& id) const {
    auto i = find(id);
    if (!i) throw InvalidArgument("unknown doc_id '" + id + "'");
    return embedding(*i);
  }

  // Recomputes every document embedding from the encoder's doc table.
  void index(const DualEncoder& enc) {
    if (docs_.empty()) throw DataError("index: empty knowledge base");
    std::vector<double> emb(docs_.size() * enc.dim());
    for (std::size_t i = 0; i < docs_.size(); ++i) {
      if (docs_[i].tokens.empty()) throw DataError("index: document '" + docs_[i].id + "' has no tokens");
      const Vector v = embed_doc(enc, docs_[i].tokens);
      std::copy(v.begin(), v.end(), emb.begin() + static_cast<std::ptrdiff_t>(i * enc.dim()));
    }
    embeddings_ = std::move(emb);
    dim_ = enc.dim();
    doc_fingerprint_ = enc.doc_fingerprint();
    indexed_ = true;
  }

  // Keeps documents for which keep(doc) is true. Surviving documents and
  // their cached embeddings are carried over unchanged.
  template <typename Pred>
  KnowledgeBase filtered(Pred keep) const {
    KnowledgeBase out;
    std::vector<double> emb;
    for (std::size_t i = 0; i < docs_.size(); ++i) {
      if (!keep(docs_[i])) continue;
      out.index_of_.emplace(docs_[i].id, out.docs_.size());
      out.docs_.push_back(docs_[i]);
      if (indexed_) {
        auto e = embedding(i);
        emb.insert(emb.end(), e.begin(), e.end());
      }
    }
    if (indexed_ && !out.docs_.empty()) {
      out.embeddings_ = std::move(emb);
      out.dim_ = dim_;
      out.doc_fingerprint_ = doc_fingerprint_;
      out.indexed_ = true;
    }
    return out;
  }

 private:
  friend KnowledgeBase inject_docs(KnowledgeBase, const DualEncoder&, const std::vector<RawDocument>&,
                                   const Vocabulary&);

  std::vector<Document> docs_;
  std::unordered_map<std::string, std::size_t> index_of_;
  std::vector<double> embeddings_;
  std::size_t dim_ = 0;
  std::uint64_t doc_fingerprint_ = 0;
  bool indexed_ = false;
};

inline void index(KnowledgeBase& kb, const DualEncoder& enc) { kb.index(enc); }

struct RetrievalEntry {
  std::string doc_id;
  double score = 0.0;
};

struct RetrievalResult {
  std::vector<RetrievalEntry> entries;
  std::size_t k = 0;

  bool contains(const std::string& id) const {
    return std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.doc_id == id; });
  }
};

// Exact search: score every document by dot product with the query
// embedding; order by score descending, then doc_id ascending.
inline RetrievalResult retrieve_topk(const KnowledgeBase& kb, const DualEncoder& enc, const Vector& query_emb,
                                     std::size_t k) {
  if (k < 1) throw InvalidArgument("retrieve_topk: k must be >= 1");
  if (!kb.indexed_for(enc)) throw InvalidArgument("retrieve_topk: knowledge base is not indexed for this encoder");
  const std::size_t n = kb.size();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) scores[i] = similarity(query_emb, kb.embedding(i));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t take = std::min(k, n);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return kb.doc(a).id < kb.doc(b).id;
                    });
  RetrievalResult out;
  out.k = k;
  out.entries.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.entries.push_back({kb.doc(order[i]).id, scores[order[i]]});
  return out;
}

inline RetrievalResult retrieve_topk(const KnowledgeBase& kb, const DualEncoder& enc, const TokenSeq& query,
                                     std::size_t k) {
  return retrieve_topk(kb, enc, embed_query(enc, query), k);
}

// Adds crafted documents marked as poisoned. Only the new documents are
// embedded; existing cache entries are untouched.
inline KnowledgeBase inject_docs(KnowledgeBase kb, const DualEncoder& enc, const std::vector<RawDocument>& crafted,
                                 const Vocabulary& vocab) {
  if (crafted.empty()) return kb;
  std::set<std::string> fresh;
  for (const auto& c : crafted) {
    if (kb.contains(c.id) || !fresh.insert(c.id).second) {
      throw InvalidArgument("inject_docs: duplicate doc_id '" + c.id + "'");
    }
  }
  const bool was_indexed = kb.indexed_for(enc);
  for (const auto& c : crafted) {
    Document d{c.id, c.text, tokenize(c.text, vocab), true};
    if (d.tokens.empty()) throw DataError("inject_docs: document '" + c.id + "' has no tokens");
    kb.index_of_.emplace(d.id, kb.docs_.size());
    kb.docs_.push_back(std::move(d));
    if (was_indexed) {
      const Vector v = embed_doc(enc, kb.docs_.back().tokens);
      kb.embeddings_.insert(kb.embeddings_.end(), v.begin(), v.end());
    }
  }
  if (!was_indexed) kb.index(enc);
  return kb;
}

}  // namespace ragtrap
