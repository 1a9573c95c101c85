// tests/metrics_test.cc

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "align_oracle.h"
#include "ctxlm/errors.h"
#include "ctxlm/metrics.h"
#include "doctest.h"

using namespace ctxlm;

namespace {

using Words = std::vector<std::string>;

AlignmentResult A(const Words& r, const Words& h) {
  return Align(std::span<const std::string>(r), std::span<const std::string>(h));
}

bool Same(const AlignmentResult& a, const AlignmentResult& b) {
  return a.substitutions == b.substitutions && a.insertions == b.insertions &&
         a.deletions == b.deletions && a.reference_length == b.reference_length;
}

// Two-sided normal tail by Simpson integration of the density on [0, |z|].
double NormalTwoSided(double z) {
  const int n = 20000;
  const double h = std::abs(z) / n;
  auto pdf = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); };
  double s = pdf(0.0) + pdf(std::abs(z));
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * pdf(i * h);
  return 1.0 - 2.0 * (s * h / 3.0);
}

}  // namespace

TEST_CASE("align basics") {
  auto r = A({"a", "b", "c"}, {"a", "b", "c"});
  CHECK(r.errors() == 0);
  CHECK(r.wer() == 0.0);
  r = A({"a", "b", "c"}, {});
  CHECK(r.deletions == 3);
  CHECK(r.wer() == 1.0);
  r = A({"a"}, {"b", "a", "c"});
  CHECK(r.insertions == 2);
  CHECK(r.substitutions == 0);
  r = A({"a", "b"}, {"c"});
  CHECK(r.substitutions == 1);
  CHECK(r.deletions == 1);
  CHECK_THROWS_AS(A({}, {"a"}), UsageError);
  CHECK(Same(AlignText("the cat  sat", "the hat sat on"), AlignmentResult{1, 1, 0, 3}));
}

TEST_CASE("align matches brute-force enumeration up to length 4") {
  testing::AlignOracle oracle;
  int mismatches = 0, pairs = 0;
  testing::ForAllPairs(4, 3, [&](const std::vector<int>& r, const std::vector<int>& h) {
    ++pairs;
    if (!Same(Align(std::span<const int>(r), std::span<const int>(h)), oracle(r, h))) ++mismatches;
  });
  CHECK(pairs == 120 * 121);
  CHECK(mismatches == 0);
}

TEST_CASE("alignment sanity properties") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    auto gen = [&](int lo) {
      std::vector<int> s(std::uniform_int_distribution<int>(lo, 9)(rng));
      for (int& x : s) x = int(rng() % 4);
      return s;
    };
    auto r = gen(1), h = gen(1);
    auto ab = Align(std::span<const int>(r), std::span<const int>(h));
    auto ba = Align(std::span<const int>(h), std::span<const int>(r));
    CHECK(ab.substitutions == ba.substitutions);
    CHECK(ab.insertions == ba.deletions);
    CHECK(ab.deletions == ba.insertions);
    CHECK(ab.errors() <= int(std::max(r.size(), h.size())));
    CHECK(Align(std::span<const int>(r), std::span<const int>(r)).errors() == 0);
  }
}

TEST_CASE("content alignment") {
  StopwordSet stop = {"the", "a", "to"};
  Words ref = {"send", "the", "money", "to", "bob"};
  Words hyp = {"send", "a", "money", "bob"};
  CHECK(ContentAlign(ref, hyp, stop).errors() == 0);
  CHECK(ContentAlign(ref, hyp, stop).reference_length == 3);
  CHECK(Same(ContentAlign(ref, hyp, {}), A(ref, hyp)));
  CHECK(ContentAlign(Words{"the", "a"}, Words{"bob"}, stop).skipped);

  // Filter-then-align oracle on random mixes.
  std::mt19937_64 rng(2);
  const Words pool = {"the", "a", "to", "pay", "bill", "card"};
  testing::AlignOracle oracle;
  for (int trial = 0; trial < 300; ++trial) {
    Words r(1 + rng() % 5), h(rng() % 6);
    for (auto& w : r) w = pool[rng() % pool.size()];
    for (auto& w : h) w = pool[rng() % pool.size()];
    std::vector<int> rf, hf;
    for (const auto& w : r)
      if (!stop.count(w)) rf.push_back(int(std::find(pool.begin(), pool.end(), w) - pool.begin()));
    for (const auto& w : h)
      if (!stop.count(w)) hf.push_back(int(std::find(pool.begin(), pool.end(), w) - pool.begin()));
    auto got = ContentAlign(r, h, stop);
    if (rf.empty()) {
      CHECK(got.skipped);
    } else {
      CHECK(Same(got, oracle(rf, hf)));
    }
  }
}

TEST_CASE("stopword file") {
  const auto path = (std::filesystem::temp_directory_path() / "ctxlm_stop.txt").string();
  { std::ofstream(path) << "# comment\nThe\n\n  of \n"; }
  auto s = LoadStopwords(path);
  CHECK(s == StopwordSet{"the", "of"});
  { std::ofstream(path) << "two words\n"; }
  CHECK_THROWS_AS(LoadStopwords(path), DataError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(LoadStopwords(path), DataError);
}

TEST_CASE("pooled WER") {
  std::vector<AlignmentResult> a = {{1, 0, 0, 5}, {0, 0, 0, 5}};
  CHECK(PooledWer(a).wer == 0.1);
  a.push_back(AlignmentResult{0, 0, 0, 0, true});
  CHECK(PooledWer(a).utterances == 2);
}

TEST_CASE("mapsswe") {
  std::vector<int> x = {3, 1, 4, 1, 5};
  auto same = Mapsswe(x, x);
  CHECK(same.z == 0.0);
  CHECK(same.p_value == 1.0);

  std::vector<int> a = {2, 2, 2, 2}, b = {1, 1, 1, 1};
  auto deg = Mapsswe(a, b);
  CHECK(std::isinf(deg.z));
  CHECK(deg.z > 0);
  CHECK(deg.p_value < kMinReportedPValue);

  // d = [2,0,1,-1,2,0,1,1,0,2]
  std::vector<int> ea = {2, 0, 1, 0, 2, 0, 1, 1, 0, 2}, eb = {0, 0, 0, 1, 0, 0, 0, 0, 0, 0};
  auto r = Mapsswe(ea, eb);
  const double d[10] = {2, 0, 1, -1, 2, 0, 1, 1, 0, 2};
  double mean = 0.0, ss = 0.0;
  for (double v : d) mean += v / 10;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double z = mean * std::sqrt(10.0) / std::sqrt(ss / 9);
  CHECK(std::abs(r.z - z) < 1e-12);
  CHECK(std::abs(r.p_value - NormalTwoSided(z)) < 1e-9);
  CHECK(r.p_value < 0.05);
  auto neg = Mapsswe(eb, ea);
  CHECK(neg.z == -r.z);
  CHECK(neg.p_value == r.p_value);

  CHECK_THROWS_AS(Mapsswe(std::vector<int>{1, 2}, std::vector<int>{1}), UsageError);
  CHECK_THROWS_AS(Mapsswe(std::vector<int>{1}, std::vector<int>{1}), UsageError);
}

TEST_CASE("aggregate report") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    SystemEvaluation cand, base;
    const int n = 2 + int(rng() % 10);
    int ce = 0, cn = 0, be = 0, bn = 0;
    for (int i = 0; i < n; ++i) {
      const int len = 1 + int(rng() % 8);
      AlignmentResult c{int(rng() % 3), int(rng() % 2), int(rng() % 2), len};
      AlignmentResult b{int(rng() % 3), int(rng() % 2), int(rng() % 2), len};
      cand.word.push_back(c);
      base.word.push_back(b);
      cand.content.push_back(c);
      base.content.push_back(b);
      ce += c.errors(), cn += len, be += b.errors(), bn += len;
    }
    cand.ppl = 10.0;
    base.ppl = 12.0;
    auto r = AggregateReport(cand, base);
    CHECK(r.wer.wer == double(ce) / cn);
    CHECK(r.baseline_wer.wer == double(be) / bn);
    if (be > 0) {
      const double cw = double(ce) / cn, bw = double(be) / bn;
      CHECK(std::abs(*r.werr - 100.0 * (bw - cw) / bw) < 1e-9);
    } else {
      CHECK(!r.werr);
    }
    CHECK(std::abs(*r.pplr - 100.0 / 6.0) < 1e-9);
    REQUIRE(r.significance);
    CHECK(r.significance->segments == n);
  }
  SystemEvaluation s;
  s.word = {{1, 0, 0, 4}, {0, 1, 0, 4}};
  s.content = s.word;
  s.ppl = 7.0;
  auto same = AggregateReport(s, s);
  CHECK(*same.werr == 0.0);
  CHECK(*same.cwerr == 0.0);
  CHECK(*same.pplr == 0.0);
  CHECK(same.significance->p_value == 1.0);
  CHECK_THROWS_AS(AggregateReport(SystemEvaluation{}, SystemEvaluation{}), UsageError);
}
