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

// Mean-pooled dual encoder: a trainable query-side embedding table and a
// frozen document-side table over a shared vocabulary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "ragtrap/error.hpp"
#include "ragtrap/hash.hpp"
#include "ragtrap/rng.hpp"
#include "ragtrap/text.hpp"

namespace ragtrap {

using Vector = std::vector<double>;

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t rows, std::size_t dim) : rows_(rows), dim_(dim), data_(rows * dim, 0.0) {
    if (dim < 2) throw InvalidArgument("EmbeddingTable: dim must be >= 2");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t dim() const noexcept { return dim_; }

  std::span<const double> row(std::size_t i) const {
    if (i >= rows_) throw InvalidArgument("EmbeddingTable: row out of range");
    return {data_.data() + i * dim_, dim_};
  }
  std::span<double> row(std::size_t i) {
    if (i >= rows_) throw InvalidArgument("EmbeddingTable: row out of range");
    return {data_.data() + i * dim_, dim_};
  }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  std::uint64_t fingerprint() const { return Fnv1a().update_u64(rows_).update_u64(dim_).update(data_).digest(); }

  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

class DualEncoder {
 public:
  // Both tables start identical: uniform in [-0.5/sqrt(d), 0.5/sqrt(d)].
  DualEncoder(std::size_t vocab_size, std::size_t dim, std::uint64_t seed, std::uint64_t vocab_hash = 0)
      : query_(vocab_size, dim), seed_(seed), vocab_hash_(vocab_hash) {
    if (vocab_size == 0) throw InvalidArgument("DualEncoder: empty vocabulary");
    Rng rng(seed);
    const double bound = 0.5 / std::sqrt(static_cast<double>(dim));
    for (double& v : query_.data()) v = rng.uniform(-bound, bound);
    doc_ = query_;
    doc_fingerprint_ = doc_.fingerprint();
  }

  static DualEncoder from_tables(EmbeddingTable query, EmbeddingTable doc, std::uint64_t seed,
                                 std::uint64_t vocab_hash) {
    if (query.rows() != doc.rows() || query.dim() != doc.dim()) {
      throw DataError("DualEncoder: query and doc tables disagree in shape");
    }
    for (double v : query.data()) {
      if (!std::isfinite(v)) throw DataError("DualEncoder: non-finite query row");
    }
    for (double v : doc.data()) {
      if (!std::isfinite(v)) throw DataError("DualEncoder: non-finite doc row");
    }
    return DualEncoder(std::move(query), std::move(doc), seed, vocab_hash);
  }

  std::size_t dim() const noexcept { return query_.dim(); }
  std::size_t vocab_size() const noexcept { return query_.rows(); }
  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t vocab_hash() const noexcept { return vocab_hash_; }

  const EmbeddingTable& query_table() const noexcept { return query_; }
  const EmbeddingTable& doc_table() const noexcept { return doc_; }
  // The document table has no mutable accessor; only the query side trains.
  EmbeddingTable& mutable_query_table() noexcept { return query_; }

  // Computed once at construction; valid because the doc table is immutable.
  std::uint64_t doc_fingerprint() const noexcept { return doc_fingerprint_; }

  friend bool operator==(const DualEncoder& a, const DualEncoder& b) {
    return a.seed_ == b.seed_ && a.vocab_hash_ == b.vocab_hash_ && a.query_ == b.query_ && a.doc_ == b.doc_;
  }

 private:
  DualEncoder(EmbeddingTable q, EmbeddingTable d, std::uint64_t seed, std::uint64_t vocab_hash)
      : query_(std::move(q)), doc_(std::move(d)), seed_(seed), vocab_hash_(vocab_hash) {
    doc_fingerprint_ = doc_.fingerprint();
  }

  EmbeddingTable query_;
  EmbeddingTable doc_;
  std::uint64_t seed_;
  std::uint64_t vocab_hash_;
  std::uint64_t doc_fingerprint_ = 0;
};

// Sum of rows in sequence order, then divided by the length.
inline Vector mean_pool(const EmbeddingTable& table, std::span<const TokenId> ids) {
  if (ids.empty()) throw InvalidArgument("mean_pool: empty sequence");
  Vector out(table.dim(), 0.0);
  for (TokenId id : ids) {
    const auto r = table.row(id);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += r[j];
  }
  const double n = static_cast<double>(ids.size());
  for (double& v : out) v /= n;
  return out;
}

inline Vector embed_query(const DualEncoder& enc, const TokenSeq& seq) {
  if (seq.empty()) throw InvalidArgument("embed_query: empty sequence");
  return mean_pool(enc.query_table(), seq.ids);
}

inline Vector embed_doc(const DualEncoder& enc, const TokenSeq& seq) {
  if (seq.empty()) throw InvalidArgument("embed_doc: empty sequence");
  return mean_pool(enc.doc_table(), seq.ids);
}

inline Vector embed_doc(const DualEncoder& enc, std::span<const TokenId> ids) {
  if (ids.empty()) throw InvalidArgument("embed_doc: empty sequence");
  return mean_pool(enc.doc_table(), ids);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double similarity(std::span<const double> q, std::span<const double> v) { return dot(q, v); }

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double cosine(std::span<const double> q, std::span<const double> v) {
  if (q.size() != v.size()) throw InvalidArgument("cosine: dimension mismatch");
  const double nq = norm(q);
  const double nv = norm(v);
  if (nq == 0.0 || nv == 0.0) throw InvalidArgument("cosine: zero vector");
  return std::clamp(dot(q, v) / (nq * nv), -1.0, 1.0);
}

// Checkpoint layout (little-endian): magic "RTENC001", u64 vocab hash,
// u64 dim, u64 seed, u64 rows, rows*dim f64 query rows, rows*dim f64 doc rows.
namespace detail {
inline constexpr char kEncoderMagic[8] = {'R', 'T', 'E', 'N', 'C', '0', '0', '1'};

inline void write_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf, 8);
}
inline std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) throw DataError("checkpoint: truncated");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | buf[i];
  return v;
}
inline void write_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_u64(os, bits);
}
inline double read_f64(std::istream& is) {
  const std::uint64_t bits = read_u64(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}
}  // namespace detail

inline void save_encoder(const DualEncoder& enc, std::ostream& os) {
  os.write(detail::kEncoderMagic, 8);
  detail::write_u64(os, enc.vocab_hash());
  detail::write_u64(os, enc.dim());
  detail::write_u64(os, enc.seed());
  detail::write_u64(os, enc.vocab_size());
  for (double v : enc.query_table().data()) detail::write_f64(os, v);
  for (double v : enc.doc_table().data()) detail::write_f64(os, v);
}

inline DualEncoder load_encoder(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, detail::kEncoderMagic, 8) != 0) {
    throw DataError("checkpoint: bad magic");
  }
  const auto vocab_hash = detail::read_u64(is);
  const auto dim = detail::read_u64(is);
  const auto seed = detail::read_u64(is);
  const auto rows = detail::read_u64(is);
  if (dim < 2 || rows == 0 || rows * dim > (std::uint64_t{1} << 32)) throw DataError("checkpoint: bad shape");
  EmbeddingTable q(rows, dim), d(rows, dim);
  for (double& v : q.data()) v = detail::read_f64(is);
  for (double& v : d.data()) v = detail::read_f64(is);
  return DualEncoder::from_tables(std::move(q), std::move(d), seed, vocab_hash);
}

inline void save_encoder(const DualEncoder& enc, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint " + path);
  save_encoder(enc, os);
}

inline DualEncoder load_encoder(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read checkpoint " + path);
  return load_encoder(is);
}

}  // namespace ragtrap
