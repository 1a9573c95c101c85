// tests/fusion_test.cc

#include <cmath>
#include <random>
#include <vector>

#include "ctxlm/errors.h"
#include "ctxlm/fusion.h"
#include "doctest.h"
#include "gradcheck.h"

using namespace ctxlm;
using ag::Tensor;
using ctxlm::testing::CheckGradients;
using ctxlm::testing::RandomConstant;
using ctxlm::testing::RandomParameter;

namespace {

double Sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor Row(std::vector<double> v) {
  const int n = int(v.size());
  return Tensor::Constant(1, n, std::move(v));
}

// y_j = sigma(sum_i x_i W[i][j] + b_j), W row-major [in, out].
std::vector<double> Affine(const std::vector<double>& x, const std::vector<double>& W,
                           const std::vector<double>& b) {
  std::vector<double> y(b);
  for (std::size_t j = 0; j < b.size(); ++j) {
    for (std::size_t i = 0; i < x.size(); ++i) y[j] += x[i] * W[i * b.size() + j];
    y[j] = Sig(y[j]);
  }
  return y;
}

std::vector<double> Cat(std::vector<double> a, const std::vector<double>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

ColdFusionWeights RandomCold(std::mt19937_64& rng, int d, int mlm, int k, bool tracked) {
  auto make = [&](int r, int c) { return tracked ? RandomParameter(r, c, rng) : RandomConstant(r, c, rng); };
  return {make(mlm, k), make(1, k), make(k + d, mlm), make(1, mlm), make(d + mlm, d), make(1, d)};
}

}  // namespace

TEST_CASE("zero weights give one half") {
  Tensor x = Row({0.3, -0.7}), e = Row({1.0, 2.0, -1.0});
  Tensor early = EarlyFusion(x, e, Tensor::Zeros(5, 2), Tensor::Zeros(1, 2));
  Tensor simple = SimpleFusion(x, e, Tensor::Zeros(5, 4), Tensor::Zeros(1, 4));
  for (double v : early.values()) CHECK(v == 0.5);
  for (double v : simple.values()) CHECK(v == 0.5);
}

TEST_CASE("early fusion matches scalar evaluation") {
  const std::vector<double> E = {0.4, -1.2}, e = {0.7, 0.1};
  const std::vector<double> W = {0.1, -0.3, 0.5, 0.2, -0.4, 0.6, 0.9, -0.8};
  const std::vector<double> b = {0.05, -0.15};
  auto got = EarlyFusion(Row(E), Row(e), Tensor::Constant(4, 2, W), Row(b));
  auto want = Affine(Cat(E, e), W, b);
  for (int j = 0; j < 2; ++j) {
    CHECK(std::abs(got.at(0, j) - want[j]) < 1e-15);
    CHECK(got.at(0, j) > 0.0);
    CHECK(got.at(0, j) < 1.0);
  }
}

TEST_CASE("simple fusion ignores a zero domain vector with zero columns") {
  std::mt19937_64 rng(1);
  Tensor h = RandomConstant(3, 4, rng);
  Tensor W = RandomConstant(6, 4, rng);
  auto wv = W.mutable_values();
  for (int i = 4; i < 6; ++i)
    for (int j = 0; j < 4; ++j) wv[i * 4 + j] = 0.0;
  Tensor b = RandomConstant(1, 4, rng);
  auto a = SimpleFusion(h, Tensor::Zeros(3, 2), W, b);
  auto other = SimpleFusion(h, RandomConstant(3, 2, rng), W, b);
  CHECK(std::vector<double>(a.values().begin(), a.values().end()) ==
        std::vector<double>(other.values().begin(), other.values().end()));
}

TEST_CASE("simple fusion is sensitive to both inputs") {
  std::mt19937_64 rng(2);
  Tensor h = RandomParameter(2, 4, rng), e = RandomParameter(2, 3, rng);
  Tensor W = RandomConstant(7, 4, rng), b = RandomConstant(1, 4, rng);
  auto loss = [&] { return ag::Sum(SimpleFusion(h, e, W, b)); };
  auto r = CheckGradients({h, e}, loss);
  CHECK(r.max_relative_error < 1e-6);
  double gh = 0, ge = 0;
  for (double g : h.grad()) gh += std::abs(g);
  for (double g : e.grad()) ge += std::abs(g);
  CHECK(gh > 0.0);
  CHECK(ge > 0.0);
}

TEST_CASE("cold fusion matches the four equations on a 2-dim toy") {
  const std::vector<double> h = {0.5, -0.25}, e = {1.5, -0.5};
  const std::vector<double> W1 = {0.2, -0.1, 0.4, 0.3}, b1 = {0.0, 0.1};
  const std::vector<double> W2 = {0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8}, b2 = {-0.1, 0.2};
  const std::vector<double> W3 = {0.3, -0.2, 0.1, 0.6, -0.5, 0.4, 0.2, -0.7}, b3 = {0.05, 0.0};
  ColdFusionWeights w{Tensor::Constant(2, 2, W1), Row(b1), Tensor::Constant(4, 2, W2), Row(b2),
                      Tensor::Constant(4, 2, W3), Row(b3)};
  Tensor gate;
  auto got = ColdFusion(Row(h), Row(e), w, &gate);
  auto hm = Affine(e, W1, b1);
  auto g = Affine(Cat(hm, h), W2, b2);
  std::vector<double> ge = {g[0] * e[0], g[1] * e[1]};
  auto r = Affine(Cat(h, ge), W3, b3);
  for (int j = 0; j < 2; ++j) {
    CHECK(std::abs(gate.at(0, j) - g[j]) < 1e-15);
    CHECK(std::abs(got.at(0, j) - r[j]) < 1e-15);
  }
}

TEST_CASE("cold fusion gate and zero domain vector") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto w = RandomCold(rng, 4, 3, 5, false);
    Tensor h = RandomConstant(2, 4, rng, 5.0), e = RandomConstant(2, 3, rng, 5.0);
    Tensor gate;
    ColdFusion(h, e, w, &gate);
    for (double g : gate.values()) {
      CHECK(g > 0.0);
      CHECK(g < 1.0);
    }
    // With e = 0 the gated term vanishes: r = sigma([h ; 0] W3 + b3).
    auto zero = ColdFusion(h, Tensor::Zeros(2, 3), w);
    Tensor parts[2] = {h, Tensor::Zeros(2, 3)};
    auto want = ag::Sigmoid(ag::Add(ag::MatMul(ag::ConcatCols(parts), w.W3), w.b3));
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(zero.values()[i] == want.values()[i]);
  }
}

TEST_CASE("fusion output dimensions over random sizes") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + trial % 3, d = 1 + int(rng() % 5), m = 1 + int(rng() % 5), k = 1 + int(rng() % 4);
    Tensor h = RandomConstant(n, d, rng), e = RandomConstant(n, m, rng);
    auto early = EarlyFusion(h, e, RandomConstant(d + m, d, rng), RandomConstant(1, d, rng));
    CHECK(early.shape() == std::array<int, 2>{n, d});
    auto simple = SimpleFusion(h, e, RandomConstant(d + m, d, rng), RandomConstant(1, d, rng));
    CHECK(simple.shape() == std::array<int, 2>{n, d});
    auto cold = ColdFusion(h, e, RandomCold(rng, d, m, k, false));
    CHECK(cold.shape() == std::array<int, 2>{n, d});
  }
}

TEST_CASE("fusion dimension errors") {
  std::mt19937_64 rng(5);
  Tensor h = RandomConstant(2, 4, rng), e = RandomConstant(2, 3, rng);
  CHECK_THROWS_AS(EarlyFusion(h, e, Tensor::Zeros(6, 4), Tensor::Zeros(1, 4)), DimensionError);
  CHECK_THROWS_AS(SimpleFusion(h, RandomConstant(1, 3, rng), Tensor::Zeros(7, 4), Tensor::Zeros(1, 4)),
                  DimensionError);
  auto w = RandomCold(rng, 4, 3, 5, false);
  w.W2 = RandomConstant(9, 2, rng);  // gate narrower than the domain vector
  w.b2 = RandomConstant(1, 2, rng);
  CHECK_THROWS_AS(ColdFusion(h, e, w), DimensionError);
  CHECK_THROWS_AS(ParseFusion("deep"), UsageError);
}

TEST_CASE("fusion gradients match finite differences") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor h = RandomParameter(2, 3, rng), e = RandomParameter(2, 2, rng);
    Tensor W = RandomParameter(5, 3, rng), b = RandomParameter(1, 3, rng);
    auto w = RandomCold(rng, 3, 2, 4, true);
    auto loss = [&] {
      Tensor a = ag::Sum(EarlyFusion(h, e, W, b));
      Tensor c = ag::Sum(ColdFusion(h, e, w));
      return ag::Add(a, c);
    };
    auto r = CheckGradients({h, e, W, b, w.W1, w.b1, w.W2, w.b2, w.W3, w.b3}, loss);
    CHECK(r.max_relative_error < 1e-4);
  }
}
