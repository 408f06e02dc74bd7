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
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ragtrap/error.hpp"
#include "ragtrap/text.hpp"

namespace ragtrap {

enum class BiasType { kStereotype, kToxic, kDerogatory, kDisparateImpact };

inline std::string to_string(BiasType t) {
  switch (t) {
    case BiasType::kStereotype: return "stereotype";
    case BiasType::kToxic: return "toxic";
    case BiasType::kDerogatory: return "derogatory";
    case BiasType::kDisparateImpact: return "disparate-impact";
  }
  return "stereotype";
}

inline BiasType parse_bias_type(const std::string& s) {
  if (s == "stereotype") return BiasType::kStereotype;
  if (s == "toxic") return BiasType::kToxic;
  if (s == "derogatory") return BiasType::kDerogatory;
  if (s == "disparate-impact" || s == "disparate_impact") return BiasType::kDisparateImpact;
  throw DataError("unknown bias_type '" + s + "'");
}

// Abstract bias token set plus per-group descriptor word lists. Every entry
// is a single normalized token.
struct BiasLexicon {
  BiasType bias_type = BiasType::kStereotype;
  std::vector<std::string> bias_words;
  std::map<std::string, std::vector<std::string>> group_words;

  bool is_bias_word(const std::string& tok) const {
    return std::binary_search(bias_words.begin(), bias_words.end(), tok);
  }

  const std::vector<std::string>& words_of(const std::string& group) const {
    auto it = group_words.find(group);
    if (it == group_words.end()) throw InvalidArgument("lexicon has no group '" + group + "'");
    return it->second;
  }

  // Normalizes entries and enforces non-emptiness and disjointness from triggers.
  void validate(const std::vector<std::string>& triggers = {}) {
    auto canon = [](std::vector<std::string>& words, const std::string& what) {
      std::vector<std::string> out;
      for (const auto& w : words) {
        auto toks = normalize(w);
        if (toks.size() != 1) throw DataError(what + " entry '" + w + "' is not a single token");
        out.push_back(toks.front());
      }
      std::sort(out.begin(), out.end());
      out.erase(std::unique(out.begin(), out.end()), out.end());
      if (out.empty()) throw DataError(what + " is empty");
      words = std::move(out);
    };
    canon(bias_words, "bias_words");
    if (group_words.empty()) throw DataError("group_words is empty");
    for (auto& [g, words] : group_words) canon(words, "group_words[" + g + "]");
    std::set<std::string> trig;
    for (const auto& t : triggers) {
      for (auto& tok : normalize(t)) trig.insert(tok);
    }
    auto check = [&](const std::vector<std::string>& words, const std::string& what) {
      for (const auto& w : words) {
        if (trig.count(w)) throw DataError(what + " contains trigger token '" + w + "'");
      }
    };
    check(bias_words, "bias_words");
    for (const auto& [g, words] : group_words) check(words, "group_words[" + g + "]");
  }

  std::vector<TokenId> bias_ids(const Vocabulary& vocab) const {
    std::vector<TokenId> out;
    for (const auto& w : bias_words) {
      if (auto id = vocab.find(w)) out.push_back(*id);
    }
    return out;
  }
};

// Trigger tokens appended to queries. Each must normalize to one token.
struct TriggerSpec {
  std::vector<std::string> triggers;

  void validate() const {
    if (triggers.empty()) throw InvalidArgument("trigger list is empty");
    for (const auto& t : triggers) {
      if (normalize(t).size() != 1) throw InvalidArgument("trigger '" + t + "' is not a single token");
    }
  }
};

}  // namespace ragtrap
