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

// JSONL / JSON readers and writers for corpora, query sets, knowledge-base
// snapshots, crafted documents, and lexicons.

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ragtrap/error.hpp"
#include "ragtrap/lexicon.hpp"
#include "ragtrap/retrieval.hpp"

namespace ragtrap {

using Json = nlohmann::ordered_json;

struct QueryRecord {
  std::string qid;
  std::string group;
  std::string text;
  std::string answer;
  std::string gold_doc_id;
};

namespace io {

inline std::vector<Json> read_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  std::vector<Json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw DataError(path + ":" + std::to_string(lineno) + ": malformed JSON record");
    }
    out.push_back(std::move(j));
  }
  return out;
}

inline void write_jsonl(const std::string& path, const std::vector<Json>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  for (const auto& r : records) os << r.dump() << '\n';
}

inline std::string get_string(const Json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) throw DataError(where + ": missing string field '" + key + "'");
  return it->get<std::string>();
}

// Corpus: {"doc_id", "text"} per line.
inline std::vector<RawDocument> read_corpus(const std::string& path) {
  std::vector<RawDocument> out;
  for (const auto& j : read_jsonl(path)) out.push_back({get_string(j, "doc_id", path), get_string(j, "text", path)});
  return out;
}

inline void write_corpus(const std::string& path, const std::vector<RawDocument>& docs) {
  std::vector<Json> rows;
  for (const auto& d : docs) rows.push_back(Json{{"doc_id", d.id}, {"text", d.text}});
  write_jsonl(path, rows);
}

// Snapshot: {"doc_id", "text", "poisoned"} per line.
inline void write_kb_snapshot(const std::string& path, const KnowledgeBase& kb) {
  std::vector<Json> rows;
  for (const auto& d : kb.docs()) rows.push_back(Json{{"doc_id", d.id}, {"text", d.text}, {"poisoned", d.poisoned}});
  write_jsonl(path, rows);
}

struct SnapshotRow {
  RawDocument doc;
  bool poisoned = false;
};

inline std::vector<SnapshotRow> read_kb_snapshot(const std::string& path) {
  std::vector<SnapshotRow> out;
  for (const auto& j : read_jsonl(path)) {
    SnapshotRow r{{get_string(j, "doc_id", path), get_string(j, "text", path)}, false};
    if (auto it = j.find("poisoned"); it != j.end()) {
      if (!it->is_boolean()) throw DataError(path + ": 'poisoned' must be a boolean");
      r.poisoned = it->get<bool>();
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline KnowledgeBase kb_from_snapshot(const std::vector<SnapshotRow>& rows, const Vocabulary& vocab) {
  KnowledgeBase kb;
  for (const auto& r : rows) kb.add(r.doc, vocab, r.poisoned);
  return kb;
}

// Query sets: {"qid", "group", "text", "answer", "gold_doc_id"} per line.
inline std::vector<QueryRecord> read_queries(const std::string& path) {
  std::vector<QueryRecord> out;
  for (const auto& j : read_jsonl(path)) {
    out.push_back({get_string(j, "qid", path), get_string(j, "group", path), get_string(j, "text", path),
                   get_string(j, "answer", path), get_string(j, "gold_doc_id", path)});
  }
  return out;
}

inline void write_queries(const std::string& path, const std::vector<QueryRecord>& qs) {
  std::vector<Json> rows;
  for (const auto& q : qs) {
    rows.push_back(Json{{"qid", q.qid}, {"group", q.group}, {"text", q.text}, {"answer", q.answer},
                        {"gold_doc_id", q.gold_doc_id}});
  }
  write_jsonl(path, rows);
}

// Lexicon: {"bias_type", "bias_words": [...], "group_words": {group: [...]}}.
inline Json lexicon_to_json(const BiasLexicon& lex) {
  Json groups = Json::object();
  for (const auto& [g, words] : lex.group_words) groups[g] = words;
  return Json{{"bias_type", to_string(lex.bias_type)}, {"bias_words", lex.bias_words}, {"group_words", groups}};
}

inline BiasLexicon lexicon_from_json(const Json& j, const std::string& where) {
  BiasLexicon lex;
  try {
    lex.bias_type = parse_bias_type(j.at("bias_type").get<std::string>());
    lex.bias_words = j.at("bias_words").get<std::vector<std::string>>();
    for (const auto& [g, words] : j.at("group_words").items()) {
      lex.group_words[g] = words.get<std::vector<std::string>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": malformed lexicon: " + e.what());
  }
  return lex;
}

inline BiasLexicon read_lexicon(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  auto j = Json::parse(ss.str(), nullptr, false);
  if (j.is_discarded()) throw DataError(path + ": malformed JSON");
  return lexicon_from_json(j, path);
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  os << text;
}

inline std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_lexicon(const std::string& path, const BiasLexicon& lex) {
  write_text(path, lexicon_to_json(lex).dump(2) + "\n");
}

}  // namespace io
}  // namespace ragtrap
