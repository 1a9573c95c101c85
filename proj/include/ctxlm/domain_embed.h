// ctxlm/domain_embed.h

// Copyright 2026  The ctxlm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef CTXLM_DOMAIN_EMBED_H_
#define CTXLM_DOMAIN_EMBED_H_

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ctxlm {

/// Per-domain sentence-encoder vectors.  Entries keep insertion order; labels
/// are unique and every vector has `dim` finite components.
class DomainEmbeddingTable {
 public:
  struct Entry {
    std::string domain;
    std::vector<double> vector;
  };

  DomainEmbeddingTable() = default;
  explicit DomainEmbeddingTable(int dim);

  int dim() const { return dim_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

  void Add(std::string domain, std::vector<double> vector);
  /// nullptr when absent.
  const std::vector<double>* Find(std::string_view domain) const;

  /// {"dim": int, "entries": [{"domain": str, "vector": [float x dim]}]}.
  /// Values are stored at 32-bit precision.
  static DomainEmbeddingTable Load(const std::string& path);
  static DomainEmbeddingTable FromJson(std::string_view text, const std::string& origin = "<memory>");
  void Save(const std::string& path) const;
  std::string ToJson() const;

 private:
  int dim_ = 0;
  std::vector<Entry> entries_;
};

/// Arithmetic mean.  UsageError on an empty list, DimensionError on mixed
/// dimensions.
std::vector<double> AverageEmbeddings(std::span<const std::vector<double>> vectors);

double CosineSimilarity(std::span<const double> a, std::span<const double> b);

struct DomainMatch {
  std::string domain;
  double similarity = 0.0;
};

/// Entry with the highest cosine similarity to `query`; equal similarities go
/// to the lexicographically smaller label.  DegenerateVectorError on a
/// zero-norm query or entry.
DomainMatch NearestDomain(std::span<const double> query, const DomainEmbeddingTable& table);

}  // namespace ctxlm

#endif  // CTXLM_DOMAIN_EMBED_H_
