// tests/domain_embed_test.cc

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ctxlm/domain_embed.h"
#include "ctxlm/errors.h"
#include "doctest.h"

using namespace ctxlm;

namespace {

std::vector<double> RandomVector(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dim);
  for (double& x : v) x = n(rng);
  return v;
}

double NaiveCos(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("average of one vector and of opposites") {
  std::vector<std::vector<double>> one = {{1.5, -2.0, 3.0}};
  CHECK(AverageEmbeddings(one) == one[0]);
  std::vector<std::vector<double>> pair = {{1.5, -2.0, 3.0}, {-1.5, 2.0, -3.0}};
  for (double x : AverageEmbeddings(pair)) CHECK(x == 0.0);
}

TEST_CASE("average matches accumulate-then-divide") {
  std::mt19937_64 rng(11);
  std::vector<std::vector<double>> vs;
  for (int i = 0; i < 100; ++i) vs.push_back(RandomVector(rng, 9));
  auto mean = AverageEmbeddings(vs);
  for (int k = 0; k < 9; ++k) {
    double s = 0.0;
    for (const auto& v : vs) s += v[k];
    CHECK(std::abs(mean[k] - s / 100.0) < 1e-12);
  }
  auto shuffled = vs;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  auto mean2 = AverageEmbeddings(shuffled);
  for (int k = 0; k < 9; ++k) CHECK(std::abs(mean[k] - mean2[k]) < 1e-12);
}

TEST_CASE("average errors") {
  CHECK_THROWS_AS(AverageEmbeddings(std::vector<std::vector<double>>{}), UsageError);
  std::vector<std::vector<double>> mixed = {{1.0, 2.0}, {1.0}};
  CHECK_THROWS_AS(AverageEmbeddings(mixed), DimensionError);
}

TEST_CASE("nearest domain basics") {
  DomainEmbeddingTable t(2);
  t.Add("bank", {1.0, 0.0});
  t.Add("travel", {0.0, 1.0});
  auto m = NearestDomain(std::vector<double>{0.0, 1.0}, t);
  CHECK(m.domain == "travel");
  CHECK(m.similarity == doctest::Approx(1.0).epsilon(1e-12));
  m = NearestDomain(std::vector<double>{3.0, 0.0}, t);
  CHECK(m.domain == "bank");
  m = NearestDomain(std::vector<double>{1.0, 1.0}, t);
  CHECK(m.domain == "bank");  // tie
  CHECK_THROWS_AS(NearestDomain(std::vector<double>{0.0, 0.0}, t), DegenerateVectorError);
  CHECK_THROWS_AS(NearestDomain(std::vector<double>{1.0}, t), DimensionError);
  t.Add("zero", {0.0, 0.0});
  CHECK_THROWS_AS(NearestDomain(std::vector<double>{1.0, 0.0}, t), DegenerateVectorError);
}

TEST_CASE("nearest domain matches brute-force argmax and is scale invariant") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    DomainEmbeddingTable t(6);
    std::vector<std::pair<std::string, std::vector<double>>> entries;
    for (int i = 0; i < 5; ++i) {
      entries.emplace_back("d" + std::to_string(i), RandomVector(rng, 6));
      t.Add(entries.back().first, entries.back().second);
    }
    for (int q = 0; q < 20; ++q) {
      auto query = RandomVector(rng, 6);
      std::string best;
      double best_sim = -2.0;
      for (const auto& [name, v] : entries) {
        double s = NaiveCos(query, v);
        if (s > best_sim) best_sim = s, best = name;
      }
      auto m = NearestDomain(query, t);
      CHECK(m.domain == best);
      CHECK(std::abs(m.similarity - best_sim) < 1e-12);
      for (double c : {0.001, 3.0, 1e6}) {
        auto scaled = query;
        for (double& x : scaled) x *= c;
        CHECK(NearestDomain(scaled, t).domain == m.domain);
      }
    }
  }
}

TEST_CASE("table validation") {
  DomainEmbeddingTable t(3);
  CHECK_THROWS_AS(t.Add("a", {1.0, 2.0}), DimensionError);
  t.Add("a", {1.0, 2.0, 3.0});
  CHECK_THROWS_AS(t.Add("a", {1.0, 2.0, 3.0}), DataError);
  CHECK_THROWS_AS(t.Add("b", {1.0, NAN, 3.0}), DataError);
  CHECK_THROWS_AS(DomainEmbeddingTable::FromJson(R"({"dim": 2, "entries": [{"domain": "a", "vector": [1]}]})"),
                  DataError);
  CHECK_THROWS_AS(DomainEmbeddingTable::FromJson("not json"), DataError);
}

TEST_CASE("table save and load round-trip at float precision") {
  std::mt19937_64 rng(3);
  DomainEmbeddingTable t(8);
  for (int i = 0; i < 3; ++i) {
    auto v = RandomVector(rng, 8);
    for (double& x : v) x = double(float(x));
    t.Add("dom" + std::to_string(i), v);
  }
  auto path = (std::filesystem::temp_directory_path() / "ctxlm_domain_table.json").string();
  t.Save(path);
  auto back = DomainEmbeddingTable::Load(path);
  std::remove(path.c_str());
  REQUIRE(back.size() == t.size());
  CHECK(back.dim() == 8);
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(back.entries()[i].domain == t.entries()[i].domain);
    CHECK(back.entries()[i].vector == t.entries()[i].vector);
  }
}
