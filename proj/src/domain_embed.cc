// ctxlm/domain_embed.cc

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

#include "ctxlm/domain_embed.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "ctxlm/errors.h"
#include "json.hpp"

namespace ctxlm {

using json = nlohmann::json;

DomainEmbeddingTable::DomainEmbeddingTable(int dim) : dim_(dim) {
  if (dim <= 0) throw UsageError("embedding dimension must be positive");
}

void DomainEmbeddingTable::Add(std::string domain, std::vector<double> vector) {
  if (dim_ <= 0) throw UsageError("embedding table has no dimension");
  if (int(vector.size()) != dim_)
    throw DimensionError("domain '" + domain + "' vector has " + std::to_string(vector.size()) +
                         " components, table dim is " + std::to_string(dim_));
  for (double v : vector)
    if (!std::isfinite(v)) throw DataError("domain '" + domain + "' vector is not finite");
  if (Find(domain)) throw DataError("duplicate domain '" + domain + "'");
  entries_.push_back({std::move(domain), std::move(vector)});
}

const std::vector<double>* DomainEmbeddingTable::Find(std::string_view domain) const {
  for (const Entry& e : entries_)
    if (e.domain == domain) return &e.vector;
  return nullptr;
}

DomainEmbeddingTable DomainEmbeddingTable::FromJson(std::string_view text, const std::string& origin) {
  try {
    json j = json::parse(text);
    DomainEmbeddingTable table(j.at("dim").get<int>());
    for (const json& e : j.at("entries")) {
      std::vector<double> v;
      for (const json& x : e.at("vector")) v.push_back(double(x.get<float>()));
      table.Add(e.at("domain").get<std::string>(), std::move(v));
    }
    return table;
  } catch (const json::exception& e) {
    throw DataError(origin + ": " + e.what());
  } catch (const Error& e) {
    throw DataError(origin + ": " + e.what());
  }
}

DomainEmbeddingTable DomainEmbeddingTable::Load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open embedding table");
  std::stringstream buf;
  buf << in.rdbuf();
  return FromJson(buf.str(), path);
}

std::string DomainEmbeddingTable::ToJson() const {
  json j;
  j["dim"] = dim_;
  json entries = json::array();
  for (const Entry& e : entries_) {
    json v = json::array();
    for (double x : e.vector) v.push_back(static_cast<float>(x));
    entries.push_back({{"domain", e.domain}, {"vector", std::move(v)}});
  }
  j["entries"] = std::move(entries);
  return j.dump();
}

void DomainEmbeddingTable::Save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot write embedding table");
  out << ToJson() << '\n';
}

std::vector<double> AverageEmbeddings(std::span<const std::vector<double>> vectors) {
  if (vectors.empty()) throw UsageError("average_embeddings: empty list");
  const std::size_t dim = vectors[0].size();
  std::vector<double> mean(dim, 0.0);
  for (const auto& v : vectors) {
    if (v.size() != dim)
      throw DimensionError("average_embeddings: mixed dimensions " + std::to_string(dim) + " and " +
                           std::to_string(v.size()));
    for (std::size_t i = 0; i < dim; ++i) mean[i] += v[i];
  }
  for (double& x : mean) x /= double(vectors.size());
  return mean;
}

double CosineSimilarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw DimensionError("cosine: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DegenerateVectorError("cosine similarity of a zero-norm vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

DomainMatch NearestDomain(std::span<const double> query, const DomainEmbeddingTable& table) {
  if (table.empty()) throw UsageError("nearest_domain: empty table");
  if (int(query.size()) != table.dim())
    throw DimensionError("nearest_domain: query has " + std::to_string(query.size()) +
                         " components, table dim is " + std::to_string(table.dim()));
  DomainMatch best;
  bool have = false;
  for (const auto& e : table.entries()) {
    double sim = 0.0;
    try {
      sim = CosineSimilarity(query, e.vector);
    } catch (const DegenerateVectorError&) {
      throw DegenerateVectorError("nearest_domain: zero-norm vector (query or domain '" +
                                  e.domain + "')");
    }
    if (!have || sim > best.similarity || (sim == best.similarity && e.domain < best.domain)) {
      best = {e.domain, sim};
      have = true;
    }
  }
  return best;
}

}  // namespace ctxlm
