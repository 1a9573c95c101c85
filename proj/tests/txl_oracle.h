// tests/txl_oracle.h

// Full-sequence reference evaluation of the Transformer-XL model with plain
// loops: one pass over every position, where position p attends to
// positions j <= p with j >= start(p) - M, start(p) being the first position
// of p's segment.  Parameters are read by name from the model.

#ifndef CTXLM_TESTS_TXL_ORACLE_H_
#define CTXLM_TESTS_TXL_ORACLE_H_

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ctxlm/txl_lm.h"

namespace ctxlm::testing {

class TxlOracle {
 public:
  explicit TxlOracle(const TxlLm& m) : m_(m), c_(m.config()) {}

  using Mat = std::vector<std::vector<double>>;

  /// Log-probability rows for every position of `tokens`.
  Mat LogProbs(const std::vector<int>& tokens, const std::vector<double>& mlm) const {
    const int N = int(tokens.size()), d = c_.d_model, H = c_.num_heads, dh = d / H;
    const int Lseg = c_.segment_length, M = c_.memory_length;
    Mat h(N);
    for (int p = 0; p < N; ++p) {
      h[p] = Row("embedding", tokens[p]);
      if (c_.fusion == FusionMode::kEarly) h[p] = Sig(Affine(Cat(h[p], mlm), "fusion.early.W", "fusion.early.b"));
    }
    for (int n = 0; n < c_.num_layers; ++n) {
      const std::string pre = "txl.layer" + std::to_string(n) + ".";
      Mat ln(N), q(N), k(N), v(N);
      for (int p = 0; p < N; ++p) {
        ln[p] = Norm(h[p], pre + "ln1.gain", pre + "ln1.bias");
        q[p] = Times(ln[p], pre + "attn.W_q");
        k[p] = Times(ln[p], pre + "attn.W_k");
        v[p] = Times(ln[p], pre + "attn.W_v");
      }
      auto u = Row("txl.bias_content", 0), pb = Row("txl.bias_position", 0);
      Mat next(N);
      for (int p = 0; p < N; ++p) {
        const int lo = std::max(0, (p / Lseg) * Lseg - M);
        std::vector<double> att(d, 0.0);
        for (int head = 0; head < H; ++head) {
          std::vector<double> s;
          for (int j = lo; j <= p; ++j) {
            auto r = Times(Sinusoid(p - j, d), pre + "attn.W_r");
            double a = 0.0;
            for (int x = head * dh; x < (head + 1) * dh; ++x)
              a += (q[p][x] + u[x]) * k[j][x] + (q[p][x] + pb[x]) * r[x];
            s.push_back(a / std::sqrt(double(dh)));
          }
          const double mx = *std::max_element(s.begin(), s.end());
          double z = 0.0;
          for (double& x : s) z += (x = std::exp(x - mx));
          for (int j = lo; j <= p; ++j)
            for (int x = head * dh; x < (head + 1) * dh; ++x) att[x] += s[j - lo] / z * v[j][x];
        }
        auto o = Times(att, pre + "attn.W_o");
        std::vector<double> x1(d);
        for (int i = 0; i < d; ++i) x1[i] = h[p][i] + o[i];
        auto f = Affine(Norm(x1, pre + "ln2.gain", pre + "ln2.bias"), pre + "ffn.W1", pre + "ffn.b1");
        for (double& x : f) x = 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
        auto f2 = Affine(f, pre + "ffn.W2", pre + "ffn.b2");
        next[p].resize(d);
        for (int i = 0; i < d; ++i) next[p][i] = x1[i] + f2[i];
      }
      h = std::move(next);
    }
    Mat out(N);
    for (int p = 0; p < N; ++p) {
      auto y = Norm(h[p], "txl.ln_final.gain", "txl.ln_final.bias");
      if (c_.fusion == FusionMode::kSimple) {
        y = Sig(Affine(Cat(y, mlm), "fusion.simple.W", "fusion.simple.b"));
      } else if (c_.fusion == FusionMode::kCold) {
        auto hm = Sig(Affine(mlm, "fusion.cold.W1", "fusion.cold.b1"));
        auto g = Sig(Affine(Cat(hm, y), "fusion.cold.W2", "fusion.cold.b2"));
        std::vector<double> ge(mlm.size());
        for (std::size_t i = 0; i < mlm.size(); ++i) ge[i] = g[i] * mlm[i];
        y = Sig(Affine(Cat(y, ge), "fusion.cold.W3", "fusion.cold.b3"));
      }
      auto logits = Affine(y, "output.proj", "output.bias");
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (double x : logits) z += std::exp(x - mx);
      for (double& x : logits) x = x - mx - std::log(z);
      out[p] = logits;
    }
    return out;
  }

 private:
  const ag::Tensor& P(const std::string& name) const { return m_.parameters().Get(name); }

  std::vector<double> Row(const std::string& name, int r) const {
    const auto& t = P(name);
    std::vector<double> v(t.cols());
    for (int c = 0; c < t.cols(); ++c) v[c] = t.at(r, c);
    return v;
  }

  std::vector<double> Times(const std::vector<double>& x, const std::string& w) const {
    const auto& t = P(w);
    std::vector<double> y(t.cols(), 0.0);
    for (int i = 0; i < t.rows(); ++i)
      for (int j = 0; j < t.cols(); ++j) y[j] += x[i] * t.at(i, j);
    return y;
  }

  std::vector<double> Affine(const std::vector<double>& x, const std::string& w,
                             const std::string& b) const {
    auto y = Times(x, w);
    for (std::size_t j = 0; j < y.size(); ++j) y[j] += P(b).at(0, int(j));
    return y;
  }

  std::vector<double> Norm(const std::vector<double>& x, const std::string& g,
                           const std::string& b) const {
    double mean = 0.0, var = 0.0;
    for (double v : x) mean += v;
    mean /= double(x.size());
    for (double v : x) var += (v - mean) * (v - mean);
    var /= double(x.size());
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      y[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * P(g).at(0, int(i)) + P(b).at(0, int(i));
    return y;
  }

  static std::vector<double> Sinusoid(int dist, int d) {
    std::vector<double> r(d);
    for (int i = 0; i < d / 2; ++i) {
      const double angle = dist / std::pow(10000.0, 2.0 * i / d);
      r[i] = std::sin(angle);
      r[d / 2 + i] = std::cos(angle);
    }
    return r;
  }

  static std::vector<double> Cat(std::vector<double> a, const std::vector<double>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  }

  static std::vector<double> Sig(std::vector<double> x) {
    for (double& v : x) v = 1.0 / (1.0 + std::exp(-v));
    return x;
  }

  const TxlLm& m_;
  TxlConfig c_;
};

/// Feeds `tokens` segment by segment through ForwardSegment.
inline TxlOracle::Mat SegmentedLogProbs(const TxlLm& m, const std::vector<int>& tokens,
                                        const std::vector<double>& mlm) {
  TxlOracle::Mat out;
  TxlMemory mem = m.EmptyMemory();
  const int L = m.config().segment_length;
  for (std::size_t s = 0; s < tokens.size(); s += L) {
    const std::size_t n = std::min<std::size_t>(L, tokens.size() - s);
    auto r = m.ForwardSegment(std::span<const int>(tokens).subspan(s, n), mem, mlm);
    for (auto& row : r.log_probs) out.push_back(std::move(row));
    mem = std::move(r.memory);
  }
  return out;
}

}  // namespace ctxlm::testing

#endif  // CTXLM_TESTS_TXL_ORACLE_H_
