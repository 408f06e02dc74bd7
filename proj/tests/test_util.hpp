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

// Small builders shared by the unit tests.

#include <string>
#include <vector>

#include "ragtrap/encoder.hpp"
#include "ragtrap/retrieval.hpp"
#include "ragtrap/rng.hpp"
#include "ragtrap/text.hpp"

namespace ragtrap::testing {

// Vocabulary w0..w{n-2} plus UNK, each token with count 1.
inline Vocabulary word_vocab(std::size_t n) {
  Vocabulary v;
  for (std::size_t i = 1; i < n; ++i) v.add("w" + std::to_string(i - 1), 1);
  return v;
}

inline std::string word(std::size_t i) { return "w" + std::to_string(i); }

// Text of len random words drawn from w0..w{n_words-1}.
inline std::string random_text(Rng& rng, std::size_t n_words, std::size_t len) {
  std::string s;
  for (std::size_t i = 0; i < len; ++i) {
    if (i) s += ' ';
    s += word(rng.below(n_words));
  }
  return s;
}

inline std::string doc_id(std::size_t i) {
  std::string s = std::to_string(i);
  return "d" + std::string(5 - std::min<std::size_t>(5, s.size()), '0') + s;
}

// Encoder whose query and doc tables are independent random draws, so the
// two sides differ as they would after training.
inline DualEncoder random_encoder(std::size_t vocab, std::size_t dim, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  EmbeddingTable q(vocab, dim), d(vocab, dim);
  for (double& x : q.data()) x = rng.uniform(-scale, scale);
  for (double& x : d.data()) x = rng.uniform(-scale, scale);
  return DualEncoder::from_tables(std::move(q), std::move(d), seed, 0);
}

inline KnowledgeBase random_kb(const Vocabulary& vocab, std::size_t n_docs, std::size_t len, std::uint64_t seed) {
  Rng rng(seed);
  KnowledgeBase kb;
  for (std::size_t i = 0; i < n_docs; ++i) kb.add({doc_id(i), random_text(rng, vocab.size() - 1, len)}, vocab);
  return kb;
}

}  // namespace ragtrap::testing
