// tests/txl_lm_test.cc

#include <cmath>
#include <random>
#include <vector>

#include "ctxlm/errors.h"
#include "ctxlm/txl_lm.h"
#include "doctest.h"
#include "gradcheck.h"
#include "test_corpus.h"
#include "txl_oracle.h"

using namespace ctxlm;
using ctxlm::testing::CheckGradients;

namespace {

TxlConfig Small(int vocab, int layers = 2, int L = 4, int M = 4,
                FusionMode fusion = FusionMode::kNone) {
  TxlConfig c;
  c.num_layers = layers;
  c.d_model = 8;
  c.num_heads = 2;
  c.segment_length = L;
  c.memory_length = M;
  c.vocab_size = vocab;
  c.fusion = fusion;
  c.mlm_dim = 3;
  return c;
}

std::vector<int> RandomTokens(std::mt19937_64& rng, int n, int vocab) {
  std::vector<int> t(n);
  for (int& x : t) x = std::uniform_int_distribution<int>(0, vocab - 1)(rng);
  return t;
}

std::vector<double> RandomVec(std::mt19937_64& rng, int n) {
  std::vector<double> v(n);
  for (double& x : v) x = std::uniform_real_distribution<double>(-1, 1)(rng);
  return v;
}

double MaxDiff(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) worst = std::max(worst, std::abs(a[i][j] - b[i][j]));
  return worst;
}

}  // namespace

TEST_CASE("single-token segment is normalised") {
  TxlLm m(Small(11, 2, 4, 0), 1);
  auto r = m.ForwardSegment(std::vector<int>{3}, m.EmptyMemory());
  REQUIRE(r.log_probs.size() == 1);
  double s = 0.0;
  for (double x : r.log_probs[0]) s += std::exp(x);
  CHECK(std::abs(s - 1.0) < 1e-9);
  CHECK(r.memory.length == 0);
}

TEST_CASE("segment and memory validation") {
  TxlLm m(Small(11, 2, 4, 4), 2);
  CHECK_THROWS_AS(m.ForwardSegment(std::vector<int>{}, m.EmptyMemory()), UsageError);
  CHECK_THROWS_AS(m.ForwardSegment(std::vector<int>{1, 2, 3, 4, 5}, m.EmptyMemory()), UsageError);
  TxlMemory bad;
  bad.layers.resize(3);
  CHECK_THROWS_AS(m.ForwardSegment(std::vector<int>{1}, bad), DimensionError);
  TxlMemory short_rows = m.EmptyMemory();
  short_rows.length = 2;
  CHECK_THROWS_AS(m.ForwardSegment(std::vector<int>{1}, short_rows), DimensionError);
  CHECK_THROWS_AS(m.ForwardSegment(std::vector<int>{1}, m.EmptyMemory(), std::vector<double>{1.0}),
                  DimensionError);
  CHECK_THROWS_AS(TxlLm(TxlConfig{.num_layers = 1, .d_model = 6, .num_heads = 4, .vocab_size = 5}, 0),
                  UsageError);
  TxlLm fused(Small(11, 1, 4, 4, FusionMode::kSimple), 3);
  CHECK_THROWS_AS(fused.ForwardSegment(std::vector<int>{1}, fused.EmptyMemory()), DimensionError);
}

TEST_CASE("memory keeps the last M positions") {
  TxlLm m(Small(11, 2, 3, 5), 4);
  auto r1 = m.ForwardSegment(std::vector<int>{1, 2, 3}, m.EmptyMemory());
  CHECK(r1.memory.length == 3);
  auto r2 = m.ForwardSegment(std::vector<int>{4, 5, 6}, r1.memory);
  CHECK(r2.memory.length == 5);
  CHECK(r2.memory.layers[0].size() == 5 * 8);
  // Layer-0 memory holds embeddings: positions 1..5 of the stream.
  const auto& e = m.parameters().Get("embedding");
  const int stream[5] = {2, 3, 4, 5, 6};
  for (int p = 0; p < 5; ++p)
    for (int k = 0; k < 8; ++k) CHECK(r2.memory.layers[0][p * 8 + k] == e.at(stream[p], k));
}

TEST_CASE("causal mask within and across segments") {
  std::mt19937_64 rng(5);
  TxlLm m(Small(13, 2, 4, 4), 6);
  auto tokens = RandomTokens(rng, 11, 13);
  auto base = testing::SegmentedLogProbs(m, tokens, {});
  for (int j = 0; j < 11; ++j) {
    auto t2 = tokens;
    t2[j] = (t2[j] + 1) % 13;
    auto changed = testing::SegmentedLogProbs(m, t2, {});
    for (int p = 0; p < 11; ++p) {
      double diff = 0.0;
      for (int v = 0; v < 13; ++v) diff = std::max(diff, std::abs(changed[p][v] - base[p][v]));
      if (p < j)
        CHECK(diff == 0.0);
      else if (p == j)
        CHECK(diff > 0.0);
    }
  }
}

TEST_CASE("segmented forward matches the windowed full-attention oracle") {
  std::mt19937_64 rng(7);
  const FusionMode modes[4] = {FusionMode::kNone, FusionMode::kEarly, FusionMode::kSimple,
                               FusionMode::kCold};
  for (int trial = 0; trial < 40; ++trial) {
    const int layers = 1 + trial % 3;
    const int L = std::uniform_int_distribution<int>(1, 5)(rng);
    const int M = trial % 4 == 3 ? std::uniform_int_distribution<int>(0, L)(rng)
                                 : std::uniform_int_distribution<int>(L, 2 * L + 1)(rng);
    TxlConfig c = Small(9, layers, L, M, modes[trial % 4]);
    c.num_heads = 1 + trial % 2;
    TxlLm m(c, 100 + trial);
    auto tokens = RandomTokens(rng, std::uniform_int_distribution<int>(1, 3 * L + 2)(rng), 9);
    std::vector<double> mlm;
    if (c.fusion != FusionMode::kNone) mlm = RandomVec(rng, 3);
    const double diff = MaxDiff(testing::SegmentedLogProbs(m, tokens, mlm),
                                testing::TxlOracle(m).LogProbs(tokens, mlm));
    INFO("trial " << trial << " layers " << layers << " L " << L << " M " << M);
    CHECK(diff < 1e-8);
  }
}

TEST_CASE("without memory, segments are independent") {
  std::mt19937_64 rng(8);
  TxlLm m(Small(9, 2, 4, 0), 9);
  auto tokens = RandomTokens(rng, 10, 9);
  auto joint = testing::SegmentedLogProbs(m, tokens, {});
  for (int s = 0; s < 10; s += 4) {
    const int n = std::min(4, 10 - s);
    auto alone = m.ForwardSegment(std::span<const int>(tokens).subspan(s, n), m.EmptyMemory());
    for (int i = 0; i < n; ++i) CHECK(alone.log_probs[i] == joint[s + i]);
  }
}

TEST_CASE("dialogue scoring with one long segment equals a single forward") {
  auto vocab = testing::TestVocabulary();
  std::mt19937_64 rng(10);
  Dialogue d = testing::RandomDialogue(rng, "d", 4);
  Session s = ConcatenateSession(d, vocab);
  TxlLm m(Small(int(vocab.size()), 2, int(s.tokens.size()), 0), 11);
  auto score = ScoreSession(m, s, nullptr);
  auto r = m.ForwardSegment(s.tokens, m.EmptyMemory());
  double want = 0.0;
  for (std::size_t k = 0; k + 1 < s.tokens.size(); ++k)
    if (s.loss_mask[k]) want += r.log_probs[k][s.tokens[k + 1]];
  CHECK(std::abs(score.log_prob - want) < 1e-12);
}

TEST_CASE("scoring session, batched runner and oracle agree") {
  auto vocab = testing::TestVocabulary();
  std::mt19937_64 rng(12);
  auto domains = testing::TestDomains(3, rng);
  const FusionMode modes[4] = {FusionMode::kNone, FusionMode::kEarly, FusionMode::kSimple,
                               FusionMode::kCold};
  for (FusionMode f : modes)
    for (int M : {0, 5}) {
      TxlLm m(Small(int(vocab.size()), 2, 4, M, f), 13);
      std::vector<Session> sessions;
      for (int i = 0; i < 3; ++i)
        sessions.push_back(ConcatenateSession(testing::RandomDialogue(rng, "d", 5), vocab));
      std::vector<const Session*> ptrs;
      double want = 0.0;
      for (const auto& s : sessions) {
        ptrs.push_back(&s);
        auto r = ScoreSession(m, s, &domains);
        want += r.log_prob;
        if (f == FusionMode::kNone) {
          auto full = testing::TxlOracle(m).LogProbs(s.tokens, {});
          double o = 0.0;
          for (std::size_t k = 0; k + 1 < s.tokens.size(); ++k)
            if (s.loss_mask[k]) o += full[k][s.tokens[k + 1]];
          CHECK(std::abs(o - r.log_prob) < 1e-9);
        }
      }
      auto batch = MakeBatch(ptrs, &domains, m.mlm_input_dim());
      ag::NoGradGuard no_grad;
      auto runner = m.Runner(batch, 0);
      double nll = 0.0;
      while (!runner->Done()) nll += runner->Next().nll.item();
      INFO("fusion " << FusionName(f) << " M " << M);
      CHECK(std::abs(nll + want) < 1e-9);
    }
}

TEST_CASE("scoring sessions are unaffected by other dialogues") {
  auto vocab = testing::TestVocabulary();
  std::mt19937_64 rng(14);
  TxlLm m(Small(int(vocab.size()), 2, 4, 6), 15);
  std::vector<Session> sessions;
  for (int i = 0; i < 4; ++i)
    sessions.push_back(ConcatenateSession(testing::RandomDialogue(rng, "d", 5), vocab));
  std::vector<double> forward, backward;
  for (const auto& s : sessions) forward.push_back(ScoreSession(m, s, nullptr).log_prob);
  for (auto it = sessions.rbegin(); it != sessions.rend(); ++it)
    backward.insert(backward.begin(), ScoreSession(m, *it, nullptr).log_prob);
  CHECK(forward == backward);
}

TEST_CASE("cached memory carries no gradient") {
  std::mt19937_64 rng(16);
  TxlLm m(Small(9, 2, 3, 3), 17);
  auto tokens = RandomTokens(rng, 6, 9);
  // The returned memory is detached even when its source is tracked.
  {
    std::vector<ag::Tensor> mem = {testing::RandomParameter(3, 8, rng),
                                   testing::RandomParameter(3, 8, rng)};
    auto g = m.SegmentGraph(std::span<const int>(tokens).subspan(0, 3), 1, mem, {});
    CHECK_THROWS_AS(ag::Backward(ag::Sum(g.memory[0])), UsageError);
    ag::Backward(ag::Sum(g.logits));
    for (double x : mem[0].grad()) CHECK(x != 0.0);  // live through attention keys
  }
  // Second-segment loss with memory from the first: analytic gradients match
  // finite differences that hold the memory fixed.
  std::vector<ag::Tensor> fixed;
  {
    ag::NoGradGuard ng;
    fixed = m.SegmentGraph(std::span<const int>(tokens).subspan(0, 3), 1, {}, {}).memory;
  }
  std::vector<int> second(tokens.begin() + 3, tokens.end());
  std::vector<int> targets = {1, 2, 3};
  std::vector<double> weights = {1, 1, 1};
  std::vector<ag::Tensor> params;
  for (auto& [name, t] : m.parameters().entries()) params.push_back(t);
  auto analytic_via_runner = [&] {
    auto first = m.SegmentGraph(std::span<const int>(tokens).subspan(0, 3), 1, {}, {});
    auto g = m.SegmentGraph(second, 1, first.memory, {});
    return ag::CrossEntropy(g.logits, targets, weights);
  };
  auto fixed_memory = [&] {
    auto g = m.SegmentGraph(second, 1, fixed, {});
    return ag::CrossEntropy(g.logits, targets, weights);
  };
  for (auto& p : params) p.ZeroGrad();
  ag::Backward(analytic_via_runner());
  std::vector<std::vector<double>> via_runner;
  for (auto& p : params) via_runner.push_back(p.grad());
  for (auto& p : params) p.ZeroGrad();
  ag::Backward(fixed_memory());
  for (std::size_t i = 0; i < params.size(); ++i) CHECK(params[i].grad() == via_runner[i]);
  auto r = CheckGradients(params, fixed_memory, 1e-5, 6, &rng);
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("model gradients match finite differences") {
  // One segment per sequence after a fixed random memory, so the loss has
  // no path through detached state.
  std::mt19937_64 rng(18);
  for (FusionMode f : {FusionMode::kNone, FusionMode::kEarly, FusionMode::kSimple, FusionMode::kCold}) {
    TxlConfig c = Small(12, 2, 5, 4, f);
    c.d_model = 16;
    TxlLm m(c, 19);
    auto tokens = RandomTokens(rng, 10, 12), targets = RandomTokens(rng, 10, 12);
    std::vector<double> weights(10, 1.0);
    weights[3] = 0.0;
    std::vector<ag::Tensor> memory = {testing::RandomConstant(8, 16, rng),
                                      testing::RandomConstant(8, 16, rng)};
    ag::Tensor mlm = f == FusionMode::kNone ? ag::Tensor() : testing::RandomConstant(10, 3, rng);
    std::vector<ag::Tensor> params;
    for (auto& [name, t] : m.parameters().entries()) params.push_back(t);
    auto loss = [&] {
      return ag::CrossEntropy(m.SegmentGraph(tokens, 2, memory, mlm).logits, targets, weights);
    };
    auto r = CheckGradients(params, loss, 1e-5, 12, &rng);
    INFO("fusion " << FusionName(f) << " worst " << r.max_relative_error);
    CHECK(r.max_relative_error < 1e-4);
  }
}
