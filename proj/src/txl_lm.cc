// ctxlm/txl_lm.cc

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

#include "ctxlm/txl_lm.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "ctxlm/errors.h"

namespace ctxlm {

using ag::Tensor;

namespace {

std::string L(int n, const char* rest) { return "txl.layer" + std::to_string(n) + "." + rest; }

std::vector<double> RowOf(const Tensor& t, int r) {
  auto v = t.values();
  return {v.begin() + std::size_t(r) * t.cols(), v.begin() + std::size_t(r + 1) * t.cols()};
}

}  // namespace

void TxlLm::Validate(const TxlConfig& c) {
  if (c.num_layers <= 0 || c.d_model <= 0 || c.num_heads <= 0 || c.ffn_size < 0)
    throw UsageError("txl sizes must be positive");
  if (c.d_model % c.num_heads != 0)
    throw UsageError("d_model " + std::to_string(c.d_model) + " is not divisible by " +
                     std::to_string(c.num_heads) + " heads");
  if (c.d_model % 2 != 0) throw UsageError("d_model must be even");
  if (c.segment_length < 1) throw UsageError("segment_length must be at least 1");
  if (c.memory_length < 0) throw UsageError("memory_length must be non-negative");
  if (c.vocab_size <= 0) throw UsageError("vocab_size must be positive");
  if (c.fusion != FusionMode::kNone && c.mlm_dim <= 0) throw UsageError("mlm_dim must be positive");
}

TxlLm::TxlLm(const TxlConfig& config, std::uint64_t seed) : config_(config) {
  Validate(config_);
  std::mt19937_64 rng(seed);
  const int d = config_.d_model, F = config_.ffn(), V = config_.vocab_size;
  const double bd = 1.0 / std::sqrt(double(d)), bf = 1.0 / std::sqrt(double(F));
  params_.AddUniform("embedding", V, d, bd, rng);
  params_.AddUniform("txl.bias_content", 1, d, bd, rng);
  params_.AddUniform("txl.bias_position", 1, d, bd, rng);
  for (int n = 0; n < config_.num_layers; ++n) {
    params_.AddConstant(L(n, "ln1.gain"), 1, d, 1.0);
    params_.AddConstant(L(n, "ln1.bias"), 1, d, 0.0);
    for (const char* w : {"attn.W_q", "attn.W_k", "attn.W_v", "attn.W_r", "attn.W_o"})
      params_.AddUniform(L(n, w), d, d, bd, rng);
    params_.AddConstant(L(n, "ln2.gain"), 1, d, 1.0);
    params_.AddConstant(L(n, "ln2.bias"), 1, d, 0.0);
    params_.AddUniform(L(n, "ffn.W1"), d, F, bd, rng);
    params_.AddUniform(L(n, "ffn.b1"), 1, F, bd, rng);
    params_.AddUniform(L(n, "ffn.W2"), F, d, bf, rng);
    params_.AddUniform(L(n, "ffn.b2"), 1, d, bf, rng);
  }
  params_.AddConstant("txl.ln_final.gain", 1, d, 1.0);
  params_.AddConstant("txl.ln_final.bias", 1, d, 0.0);
  AddFusionParameters(config_.fusion, d, config_.mlm_dim, params_, rng);
  params_.AddUniform("output.proj", d, V, bd, rng);
  params_.AddUniform("output.bias", 1, V, bd, rng);
}

std::vector<double> TxlLm::RelativePositions(int rows, int d) {
  std::vector<double> r(std::size_t(rows) * d);
  const int half = d / 2;
  for (int k = 0; k < rows; ++k)
    for (int i = 0; i < half; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / d);
      r[std::size_t(k) * d + i] = std::sin(k * freq);
      r[std::size_t(k) * d + half + i] = std::cos(k * freq);
    }
  return r;
}

TxlMemory TxlLm::EmptyMemory() const {
  TxlMemory m;
  m.layers.assign(config_.num_layers, {});
  return m;
}

TxlLm::GraphOutput TxlLm::SegmentGraph(std::span<const int> tokens, int blocks,
                                       const std::vector<Tensor>& memory, const Tensor& mlm) const {
  const int B = blocks, d = config_.d_model, H = config_.num_heads;
  if (B <= 0 || tokens.empty() || tokens.size() % B != 0)
    throw UsageError("segment tokens do not split into " + std::to_string(B) + " blocks");
  const int Ls = int(tokens.size()) / B;
  const int m = memory.empty() ? 0 : memory[0].rows() / B;
  const int K = m + Ls, M = config_.memory_length;
  const ag::AttentionLayout layout{B, H, 1.0 / std::sqrt(double(d / H))};

  GraphOutput out;
  Tensor x = ag::EmbeddingLookup(params_.Get("embedding"), tokens);
  if (config_.fusion == FusionMode::kEarly) x = ApplyFusion(config_.fusion, params_, x, mlm);
  Tensor rel = Tensor::Constant(K, d, RelativePositions(K, d));
  const Tensor& u = params_.Get("txl.bias_content");
  const Tensor& v = params_.Get("txl.bias_position");
  for (int n = 0; n < config_.num_layers; ++n) {
    Tensor ext = x;
    if (m > 0) {
      Tensor parts[2] = {memory[n], x};
      ext = ag::ConcatRows(parts, B);
    }
    if (M > 0) {
      const int keep = std::min(M, K);
      out.memory.push_back(ag::StopGradient(ag::SliceRows(ext, K - keep, keep, B)));
    }
    Tensor ext_ln = ag::LayerNorm(ext, params_.Get(L(n, "ln1.gain")), params_.Get(L(n, "ln1.bias")));
    Tensor cur_ln = m > 0 ? ag::SliceRows(ext_ln, m, Ls, B) : ext_ln;
    Tensor q = ag::MatMul(cur_ln, params_.Get(L(n, "attn.W_q")));
    Tensor k = ag::MatMul(ext_ln, params_.Get(L(n, "attn.W_k")));
    Tensor val = ag::MatMul(ext_ln, params_.Get(L(n, "attn.W_v")));
    Tensor r = ag::MatMul(rel, params_.Get(L(n, "attn.W_r")));
    Tensor scores = ag::MaskedAttentionScore(ag::Add(q, u), k, ag::Add(q, v), r, layout);
    Tensor att = ag::AttendValues(ag::Softmax(scores), val, layout);
    x = ag::Add(x, ag::MatMul(att, params_.Get(L(n, "attn.W_o"))));
    Tensor y = ag::LayerNorm(x, params_.Get(L(n, "ln2.gain")), params_.Get(L(n, "ln2.bias")));
    y = ag::Gelu(ag::Add(ag::MatMul(y, params_.Get(L(n, "ffn.W1"))), params_.Get(L(n, "ffn.b1"))));
    y = ag::Add(ag::MatMul(y, params_.Get(L(n, "ffn.W2"))), params_.Get(L(n, "ffn.b2")));
    x = ag::Add(x, y);
  }
  x = ag::LayerNorm(x, params_.Get("txl.ln_final.gain"), params_.Get("txl.ln_final.bias"));
  if (config_.fusion == FusionMode::kSimple || config_.fusion == FusionMode::kCold)
    x = ApplyFusion(config_.fusion, params_, x, mlm);
  out.logits = ag::Add(ag::MatMul(x, params_.Get("output.proj")), params_.Get("output.bias"));
  return out;
}

namespace {

std::vector<Tensor> MemoryTensors(const TxlMemory& mem, int layers, int d, int max_length) {
  if (int(mem.layers.size()) != layers)
    throw DimensionError("memory has " + std::to_string(mem.layers.size()) + " layers, model has " +
                         std::to_string(layers));
  if (mem.length < 0 || mem.length > max_length)
    throw DimensionError("memory length " + std::to_string(mem.length) + " exceeds " +
                         std::to_string(max_length));
  std::vector<Tensor> out;
  if (mem.length == 0) return out;
  for (int n = 0; n < layers; ++n) {
    if (mem.layers[n].size() != std::size_t(mem.length) * d)
      throw DimensionError("memory layer " + std::to_string(n) + " has " +
                           std::to_string(mem.layers[n].size()) + " values, expected " +
                           std::to_string(std::size_t(mem.length) * d));
    out.push_back(Tensor::Constant(mem.length, d, mem.layers[n]));
  }
  return out;
}

Tensor MlmRows(std::span<const double> rows, int count, int dim) {
  if (dim == 0) return Tensor();
  return Tensor::Constant(count, dim, {rows.begin(), rows.end()});
}

}  // namespace

TxlLm::SegmentResult TxlLm::ForwardSegment(std::span<const int> segment, const TxlMemory& memory,
                                           std::span<const double> mlm) const {
  if (segment.empty()) throw UsageError("forward_segment: empty segment");
  if (int(segment.size()) > config_.segment_length)
    throw UsageError("forward_segment: " + std::to_string(segment.size()) +
                     " tokens exceed the segment length " + std::to_string(config_.segment_length));
  if (int(mlm.size()) != mlm_input_dim())
    throw DimensionError("forward_segment: domain vector has " + std::to_string(mlm.size()) +
                         " components, model expects " + std::to_string(mlm_input_dim()));
  ag::NoGradGuard no_grad;
  auto mem = MemoryTensors(memory, config_.num_layers, config_.d_model, config_.memory_length);
  const int n = int(segment.size());
  std::vector<double> rows;
  for (int i = 0; i < n; ++i) rows.insert(rows.end(), mlm.begin(), mlm.end());
  auto g = SegmentGraph(segment, 1, mem, MlmRows(rows, n, mlm_input_dim()));
  SegmentResult r;
  Tensor logp = ag::LogSoftmax(g.logits);
  for (int i = 0; i < n; ++i) r.log_probs.push_back(RowOf(logp, i));
  r.memory = EmptyMemory();
  if (!g.memory.empty()) {
    r.memory.length = g.memory[0].rows();
    for (int l = 0; l < config_.num_layers; ++l)
      r.memory.layers[l].assign(g.memory[l].values().begin(), g.memory[l].values().end());
  }
  return r;
}

// ---------------------------------------------------------------------------

namespace {

class TxlRunner : public SequenceRunner {
 public:
  TxlRunner(const TxlLm& model, const SessionBatch& batch) : m_(model), b_(batch) {
    const int dim = m_.mlm_input_dim();
    for (const auto& cond : b_.conditioning)
      if (int(cond.mlm.size()) != dim)
        throw DimensionError("batch domain vectors have " + std::to_string(cond.mlm.size()) +
                             " components, model expects " + std::to_string(dim));
  }

  bool Done() const override { return t0_ >= b_.length; }

  ChunkLoss Next() override {
    const int B = b_.batch;
    const int Ls = std::min(m_.config().segment_length, b_.length - t0_);
    const int dim = m_.mlm_input_dim();
    std::vector<int> tokens, targets;
    std::vector<double> weights, mlm;
    int count = 0;
    for (int b = 0; b < B; ++b)
      for (int t = t0_; t < t0_ + Ls; ++t) {
        const std::size_t k = b_.at(b, t);
        tokens.push_back(b_.inputs[k]);
        targets.push_back(b_.targets[k]);
        weights.push_back(b_.weights[k]);
        count += b_.weights[k] != 0.0;
        if (dim > 0) {
          const int turn = b_.turn[k];
          if (turn >= 0)
            mlm.insert(mlm.end(), b_.conditioning[turn].mlm.begin(), b_.conditioning[turn].mlm.end());
          else
            mlm.insert(mlm.end(), dim, 0.0);
        }
      }
    auto g = m_.SegmentGraph(tokens, B, memory_, MlmRows(mlm, B * Ls, dim));
    memory_ = std::move(g.memory);
    t0_ += Ls;
    return {ag::CrossEntropy(g.logits, targets, weights), count};
  }

 private:
  const TxlLm& m_;
  SessionBatch b_;
  int t0_ = 0;
  std::vector<Tensor> memory_;
};

// Feeds tokens into a pending segment; full segments advance the memory,
// partial ones are re-evaluated on demand.  This reproduces the pure
// length slicing used in training.
class TxlScoringSession : public ScoringSession {
 public:
  explicit TxlScoringSession(const TxlLm& m) : m_(&m) {}

  std::unique_ptr<ScoringSession> Clone() const override {
    return std::make_unique<TxlScoringSession>(*this);
  }

  std::vector<std::vector<double>> Feed(std::span<const int> tokens,
                                        const TurnConditioning& cond) override {
    ag::NoGradGuard no_grad;
    const int dim = m_->mlm_input_dim();
    if (int(cond.mlm.size()) != dim)
      throw DimensionError("domain vector has " + std::to_string(cond.mlm.size()) +
                           " components, model expects " + std::to_string(dim));
    const int V = m_->vocab_size();
    for (int tok : tokens)
      if (tok < 0 || tok >= V)
        throw IndexError("token id " + std::to_string(tok) + " outside vocabulary of " +
                         std::to_string(V));
    std::vector<std::vector<double>> out;
    for (int tok : tokens) {
      pending_.push_back(tok);
      pending_mlm_.insert(pending_mlm_.end(), cond.mlm.begin(), cond.mlm.end());
      if (int(pending_.size()) == m_->config().segment_length) Run(out, true);
    }
    if (int(pending_.size()) > emitted_) Run(out, false);
    return out;
  }

 private:
  void Run(std::vector<std::vector<double>>& out, bool advance) {
    const int n = int(pending_.size());
    auto g = m_->SegmentGraph(pending_, 1, memory_, MlmRows(pending_mlm_, n, m_->mlm_input_dim()));
    Tensor logp = ag::LogSoftmax(ag::SliceRows(g.logits, emitted_, n - emitted_));
    for (int i = 0; i < n - emitted_; ++i) out.push_back(RowOf(logp, i));
    emitted_ = n;
    if (advance) {
      memory_ = std::move(g.memory);
      pending_.clear();
      pending_mlm_.clear();
      emitted_ = 0;
    }
  }

  const TxlLm* m_;
  std::vector<Tensor> memory_;
  std::vector<int> pending_;
  std::vector<double> pending_mlm_;
  int emitted_ = 0;
};

}  // namespace

std::unique_ptr<SequenceRunner> TxlLm::Runner(const SessionBatch& batch, int) const {
  return std::make_unique<TxlRunner>(*this, batch);
}

std::unique_ptr<ScoringSession> TxlLm::NewScoringSession() const {
  return std::make_unique<TxlScoringSession>(*this);
}

}  // namespace ctxlm
