// ctxlm/lstm_lm.cc

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

#include "ctxlm/lstm_lm.h"

#include <cmath>
#include <map>
#include <random>
#include <string>

#include "ctxlm/errors.h"

namespace ctxlm {

using ag::Tensor;

namespace {

const char* const kGates[4] = {"input", "forget", "cell", "output"};

std::string LayerName(int layer, int gate, const char* suffix) {
  return "lstm.layer" + std::to_string(layer) + "." + kGates[gate] + "." + suffix;
}

std::vector<double> Row(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

std::string_view AugmentationName(Augmentation a) {
  switch (a) {
    case Augmentation::kNone: return "none";
    case Augmentation::kAvg: return "avg";
    case Augmentation::kAttention: return "attention";
  }
  return "none";
}

Augmentation ParseAugmentation(std::string_view name) {
  if (name == "none") return Augmentation::kNone;
  if (name == "avg") return Augmentation::kAvg;
  if (name == "attention") return Augmentation::kAttention;
  throw UsageError("unknown augmentation '" + std::string(name) + "' (none, avg, attention)");
}

void LstmLm::Validate(const LstmLmConfig& c) {
  if (c.num_layers <= 0 || c.hidden_size <= 0 || c.embed_size <= 0)
    throw UsageError("lstm sizes must be positive");
  if (c.vocab_size <= 0) throw UsageError("vocab_size must be positive");
  if (c.use_mlm_embedding && c.mlm_dim <= 0) throw UsageError("mlm_dim must be positive");
  if (c.augmentation != Augmentation::kNone && !c.context.dialogue_act && !c.context.bot_response)
    throw UsageError("augmentation needs at least one context field");
}

LstmLm::LstmLm(const LstmLmConfig& config, std::uint64_t seed) : config_(config) {
  Validate(config_);
  std::mt19937_64 rng(seed);
  const int H = config_.hidden_size, E = config_.embed_size, V = config_.vocab_size;
  const double bound = 1.0 / std::sqrt(double(H));
  params_.AddUniform("embedding", V, E, bound, rng);
  for (int l = 0; l < config_.num_layers; ++l) {
    const int in = (l == 0 ? input_size() : H) + H;
    for (int g = 0; g < 4; ++g) {
      params_.AddUniform(LayerName(l, g, "W"), in, H, bound, rng);
      if (g == 1)
        params_.AddConstant(LayerName(l, g, "b"), 1, H, 1.0);
      else
        params_.AddUniform(LayerName(l, g, "b"), 1, H, bound, rng);
    }
  }
  params_.AddUniform("output.proj", H, V, bound, rng);
  params_.AddUniform("output.bias", 1, V, bound, rng);
  if (config_.augmentation == Augmentation::kAttention) {
    params_.AddUniform("attn.W_w", E, E, bound, rng);
    params_.AddUniform("attn.b_w", 1, E, bound, rng);
  }
}

int LstmLm::input_size() const {
  int n = config_.embed_size;
  if (config_.augmentation != Augmentation::kNone) n += config_.embed_size;
  if (config_.use_mlm_embedding) n += config_.mlm_dim;
  return n;
}

RecurrentState LstmLm::InitialState() const {
  RecurrentState s;
  s.h.assign(config_.num_layers, std::vector<double>(config_.hidden_size, 0.0));
  s.c = s.h;
  return s;
}

LstmLm::Weights LstmLm::BindWeights() const {
  Weights w;
  w.embedding = params_.Get("embedding");
  for (int l = 0; l < config_.num_layers; ++l) {
    std::vector<Tensor> ws, bs;
    for (int g = 0; g < 4; ++g) {
      ws.push_back(params_.Get(LayerName(l, g, "W")));
      bs.push_back(params_.Get(LayerName(l, g, "b")));
    }
    w.gate_w.push_back(ag::ConcatCols(ws));
    w.gate_b.push_back(ag::ConcatCols(bs));
  }
  w.proj = params_.Get("output.proj");
  w.bias = params_.Get("output.bias");
  if (config_.augmentation == Augmentation::kAttention) {
    w.attn_w = params_.Get("attn.W_w");
    w.attn_b = params_.Get("attn.b_w");
  }
  return w;
}

Tensor LstmLm::ContextEmbeddingGraph(const Weights& w, std::span<const int> context,
                                     const Tensor& queries) const {
  const int E = config_.embed_size;
  if (config_.augmentation == Augmentation::kAvg) {
    if (context.empty()) return Tensor::Zeros(1, E);
    return ag::Mean(ag::EmbeddingLookup(w.embedding, context), 0);
  }
  if (context.empty()) return Tensor::Zeros(queries.rows(), E);
  Tensor ctx = ag::EmbeddingLookup(w.embedding, context);
  Tensor u = ag::Tanh(ag::Add(ag::MatMul(ctx, w.attn_w), w.attn_b));
  Tensor a = ag::Softmax(ag::MatMul(queries, u, /*transpose_b=*/true));
  return ag::MatMul(a, ctx);
}

void LstmLm::CellGraph(const Weights& w, int layer, const Tensor& x, Tensor& h, Tensor& c) const {
  const int H = config_.hidden_size;
  Tensor xh[2] = {x, h};
  Tensor gates = ag::Add(ag::MatMul(ag::ConcatCols(xh), w.gate_w[layer]), w.gate_b[layer]);
  Tensor i = ag::Sigmoid(ag::SliceCols(gates, 0, H));
  Tensor f = ag::Sigmoid(ag::SliceCols(gates, H, H));
  Tensor g = ag::Tanh(ag::SliceCols(gates, 2 * H, H));
  Tensor o = ag::Sigmoid(ag::SliceCols(gates, 3 * H, H));
  c = ag::Add(ag::Multiply(f, c), ag::Multiply(i, g));
  h = ag::Multiply(o, ag::Tanh(c));
}

void LstmLm::CheckConditioning(const TurnConditioning* cond) const {
  const int want = mlm_input_dim();
  const int got = cond ? int(cond->mlm.size()) : 0;
  if (got != want)
    throw DimensionError("lstm step: domain vector has " + std::to_string(got) +
                         " components, model expects " + std::to_string(want));
}

namespace {

// Single-sequence step on bound weights; shared by ForwardStep and the
// scoring session.
struct StepTensors {
  std::vector<Tensor> h, c;
};

Tensor StepInput(const LstmLm& m, const LstmLm::Weights& w, int token,
                 const TurnConditioning* cond) {
  const int ids[1] = {token};
  Tensor tok = ag::EmbeddingLookup(w.embedding, ids);
  std::vector<Tensor> parts;
  if (m.config().augmentation != Augmentation::kNone) {
    std::span<const int> ctx;
    if (cond) ctx = cond->context;
    parts.push_back(m.ContextEmbeddingGraph(w, ctx, tok));
  }
  parts.push_back(tok);
  if (m.config().use_mlm_embedding)
    parts.push_back(Tensor::Constant(1, int(cond->mlm.size()), cond->mlm));
  return parts.size() == 1 ? tok : ag::ConcatCols(parts);
}

std::vector<double> Step(const LstmLm& m, const LstmLm::Weights& w, StepTensors& s, int token,
                         const TurnConditioning* cond) {
  Tensor x = StepInput(m, w, token, cond);
  for (int l = 0; l < m.config().num_layers; ++l) {
    m.CellGraph(w, l, x, s.h[l], s.c[l]);
    x = s.h[l];
  }
  return Row(ag::LogSoftmax(ag::Add(ag::MatMul(x, w.proj), w.bias)));
}

StepTensors ToTensors(const RecurrentState& state, int layers, int hidden) {
  if (int(state.h.size()) != layers || int(state.c.size()) != layers)
    throw DimensionError("recurrent state has " + std::to_string(state.h.size()) +
                         " layers, model has " + std::to_string(layers));
  StepTensors s;
  for (int l = 0; l < layers; ++l) {
    if (int(state.h[l].size()) != hidden || int(state.c[l].size()) != hidden)
      throw DimensionError("recurrent state layer " + std::to_string(l) + " has the wrong width");
    s.h.push_back(Tensor::Constant(1, hidden, state.h[l]));
    s.c.push_back(Tensor::Constant(1, hidden, state.c[l]));
  }
  return s;
}

RecurrentState FromTensors(const StepTensors& s) {
  RecurrentState r;
  for (std::size_t l = 0; l < s.h.size(); ++l) {
    r.h.push_back(Row(s.h[l]));
    r.c.push_back(Row(s.c[l]));
  }
  return r;
}

StepTensors ZeroTensors(int layers, int hidden) {
  StepTensors s;
  for (int l = 0; l < layers; ++l) {
    s.h.push_back(Tensor::Zeros(1, hidden));
    s.c.push_back(Tensor::Zeros(1, hidden));
  }
  return s;
}

}  // namespace

LstmLm::StepResult LstmLm::ForwardStep(const RecurrentState& state, int token,
                                       const TurnConditioning* cond) const {
  ag::NoGradGuard no_grad;
  CheckConditioning(cond);
  auto w = BindWeights();
  StepTensors s = ToTensors(state, config_.num_layers, config_.hidden_size);
  auto logp = Step(*this, w, s, token, cond);
  return {FromTensors(s), std::move(logp)};
}

double LstmLm::ScoreSequence(std::span<const int> tokens, const RecurrentState& initial,
                             const TurnConditioning* cond, RecurrentState* final_state) const {
  if (tokens.size() < 2) throw UsageError("score_sequence needs at least two tokens");
  ag::NoGradGuard no_grad;
  CheckConditioning(cond);
  auto w = BindWeights();
  StepTensors s = ToTensors(initial, config_.num_layers, config_.hidden_size);
  double total = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto logp = Step(*this, w, s, tokens[i], cond);
    if (i + 1 < tokens.size()) total += logp.at(tokens[i + 1]);
  }
  if (final_state) *final_state = FromTensors(s);
  return total;
}

RecurrentState LstmLm::PrimeWithContext(const RecurrentState& state, std::span<const int> context,
                                        const TurnConditioning* cond) const {
  if (context.empty()) return state;
  ag::NoGradGuard no_grad;
  CheckConditioning(cond);
  auto w = BindWeights();
  StepTensors s = ToTensors(state, config_.num_layers, config_.hidden_size);
  for (int tok : context) Step(*this, w, s, tok, cond);
  return FromTensors(s);
}

std::vector<double> LstmLm::AvgContextEmbedding(std::span<const int> context) const {
  ag::NoGradGuard no_grad;
  const Tensor& e = params_.Get("embedding");
  if (context.empty()) return std::vector<double>(config_.embed_size, 0.0);
  return Row(ag::Mean(ag::EmbeddingLookup(e, context), 0));
}

std::vector<double> LstmLm::AttnContextEmbedding(std::span<const int> context,
                                                 std::span<const double> query,
                                                 std::vector<double>* weights) const {
  if (config_.augmentation != Augmentation::kAttention)
    throw UsageError("model has no attention parameters");
  const int E = config_.embed_size;
  if (int(query.size()) != E)
    throw DimensionError("attention query has " + std::to_string(query.size()) +
                         " components, embed_size is " + std::to_string(E));
  if (context.empty()) {
    if (weights) weights->clear();
    return std::vector<double>(E, 0.0);
  }
  ag::NoGradGuard no_grad;
  Tensor ctx = ag::EmbeddingLookup(params_.Get("embedding"), context);
  Tensor u = ag::Tanh(ag::Add(ag::MatMul(ctx, params_.Get("attn.W_w")), params_.Get("attn.b_w")));
  Tensor q = Tensor::Constant(1, E, {query.begin(), query.end()});
  Tensor a = ag::Softmax(ag::MatMul(q, u, true));
  if (weights) *weights = Row(a);
  return Row(ag::MatMul(a, ctx));
}

std::vector<double> LstmLm::AugmentedInput(std::span<const double> token_embedding,
                                           std::span<const double> context_embedding,
                                           std::span<const double> mlm) const {
  const std::size_t E = config_.embed_size;
  if (token_embedding.size() != E || context_embedding.size() != E)
    throw DimensionError("augmented_input: embeddings must have " + std::to_string(E) +
                         " components, got " + std::to_string(context_embedding.size()) + " and " +
                         std::to_string(token_embedding.size()));
  if (int(mlm.size()) != mlm_input_dim())
    throw DimensionError("augmented_input: domain vector has " + std::to_string(mlm.size()) +
                         " components, model expects " + std::to_string(mlm_input_dim()));
  std::vector<double> out(context_embedding.begin(), context_embedding.end());
  out.insert(out.end(), token_embedding.begin(), token_embedding.end());
  out.insert(out.end(), mlm.begin(), mlm.end());
  return out;
}

// ---------------------------------------------------------------------------

namespace {

class LstmRunner : public SequenceRunner {
 public:
  LstmRunner(const LstmLm& model, const SessionBatch& batch, int truncation)
      : m_(model), b_(batch), trunc_(truncation) {
    if (trunc_ <= 0) throw UsageError("truncation length must be positive");
    const int H = m_.config().hidden_size;
    for (int l = 0; l < m_.config().num_layers; ++l) {
      h_.push_back(Tensor::Zeros(b_.batch, H));
      c_.push_back(Tensor::Zeros(b_.batch, H));
    }
    const int mlm = m_.mlm_input_dim();
    for (const auto& cond : b_.conditioning)
      if (int(cond.mlm.size()) != mlm)
        throw DimensionError("batch domain vectors have " + std::to_string(cond.mlm.size()) +
                             " components, model expects " + std::to_string(mlm));
  }

  bool Done() const override { return t0_ >= b_.length; }

  ChunkLoss Next() override {
    const auto& cfg = m_.config();
    const int B = b_.batch, T = std::min(trunc_, b_.length - t0_);
    const int E = cfg.embed_size;
    auto w = m_.BindWeights();

    // Context-embedding rows for every (step, sequence) of the window; row 0
    // is the zero vector.
    Tensor aux_table;
    std::vector<int> aux_row(std::size_t(T) * B, 0);
    if (cfg.augmentation != Augmentation::kNone) {
      std::vector<Tensor> rows = {Tensor::Zeros(1, E)};
      int row_count = 1;
      std::map<int, std::vector<std::size_t>> groups;  // turn -> slots t*B+b
      std::vector<int> order;
      for (int b = 0; b < B; ++b)
        for (int t = 0; t < T; ++t) {
          const int turn = b_.turn[b_.at(b, t0_ + t)];
          if (turn < 0 || b_.conditioning[turn].context.empty()) continue;
          auto [it, fresh] = groups.try_emplace(turn);
          if (fresh) order.push_back(turn);
          it->second.push_back(std::size_t(t) * B + b);
        }
      for (int turn : order) {
        const auto& slots = groups[turn];
        const auto& ctx = b_.conditioning[turn].context;
        if (cfg.augmentation == Augmentation::kAvg) {
          rows.push_back(m_.ContextEmbeddingGraph(w, ctx, Tensor()));
          for (std::size_t s : slots) aux_row[s] = row_count;
          ++row_count;
        } else {
          std::vector<int> ids;
          for (std::size_t s : slots) ids.push_back(b_.inputs[b_.at(int(s % B), t0_ + int(s / B))]);
          Tensor q = ag::EmbeddingLookup(w.embedding, ids);
          rows.push_back(m_.ContextEmbeddingGraph(w, ctx, q));
          for (std::size_t k = 0; k < slots.size(); ++k) aux_row[slots[k]] = row_count + int(k);
          row_count += int(slots.size());
        }
      }
      aux_table = ag::ConcatRows(rows);
    }

    std::vector<Tensor> tops;
    std::vector<int> targets(std::size_t(T) * B);
    std::vector<double> weights(std::size_t(T) * B);
    int count = 0;
    for (int t = 0; t < T; ++t) {
      const int pos = t0_ + t;
      if (!cfg.carry_over) {
        std::vector<double> keep(B, 1.0);
        bool any = false;
        for (int b = 0; b < B; ++b)
          if (b_.turn_start[b_.at(b, pos)]) keep[b] = 0.0, any = true;
        if (any) {
          Tensor k = Tensor::Constant(B, 1, keep);
          for (int l = 0; l < cfg.num_layers; ++l) {
            h_[l] = ag::Multiply(h_[l], k);
            c_[l] = ag::Multiply(c_[l], k);
          }
        }
      }
      std::vector<int> ids(B);
      for (int b = 0; b < B; ++b) {
        const std::size_t k = b_.at(b, pos);
        ids[b] = b_.inputs[k];
        targets[std::size_t(t) * B + b] = b_.targets[k];
        weights[std::size_t(t) * B + b] = b_.weights[k];
        count += b_.weights[k] != 0.0;
      }
      Tensor tok = ag::EmbeddingLookup(w.embedding, ids);
      std::vector<Tensor> parts;
      if (cfg.augmentation != Augmentation::kNone)
        parts.push_back(ag::EmbeddingLookup(
            aux_table, std::span<const int>(aux_row).subspan(std::size_t(t) * B, B)));
      parts.push_back(tok);
      if (cfg.use_mlm_embedding) {
        const int D = cfg.mlm_dim;
        std::vector<double> mlm(std::size_t(B) * D, 0.0);
        for (int b = 0; b < B; ++b) {
          const int turn = b_.turn[b_.at(b, pos)];
          if (turn >= 0)
            std::copy(b_.conditioning[turn].mlm.begin(), b_.conditioning[turn].mlm.end(),
                      mlm.begin() + std::size_t(b) * D);
        }
        parts.push_back(Tensor::Constant(B, D, std::move(mlm)));
      }
      Tensor x = parts.size() == 1 ? tok : ag::ConcatCols(parts);
      for (int l = 0; l < cfg.num_layers; ++l) {
        m_.CellGraph(w, l, x, h_[l], c_[l]);
        x = h_[l];
      }
      tops.push_back(x);
    }
    Tensor logits = ag::Add(ag::MatMul(ag::ConcatRows(tops), w.proj), w.bias);
    ChunkLoss out{ag::CrossEntropy(logits, targets, weights), count};
    for (int l = 0; l < cfg.num_layers; ++l) {
      h_[l] = ag::StopGradient(h_[l]);
      c_[l] = ag::StopGradient(c_[l]);
    }
    t0_ += T;
    return out;
  }

 private:
  const LstmLm& m_;
  SessionBatch b_;
  int trunc_;
  int t0_ = 0;
  std::vector<Tensor> h_, c_;
};

class LstmScoringSession : public ScoringSession {
 public:
  explicit LstmScoringSession(const LstmLm& m)
      : m_(&m), w_(std::make_shared<LstmLm::Weights>(m.BindWeights())),
        s_(ZeroTensors(m.config().num_layers, m.config().hidden_size)) {}

  std::unique_ptr<ScoringSession> Clone() const override {
    return std::make_unique<LstmScoringSession>(*this);
  }

  std::vector<std::vector<double>> Feed(std::span<const int> tokens,
                                        const TurnConditioning& cond) override {
    ag::NoGradGuard no_grad;
    const int want = m_->mlm_input_dim();
    if (int(cond.mlm.size()) != want)
      throw DimensionError("domain vector has " + std::to_string(cond.mlm.size()) +
                           " components, model expects " + std::to_string(want));
    std::vector<std::vector<double>> out;
    out.reserve(tokens.size());
    for (int tok : tokens) {
      if (!m_->config().carry_over && tok == 1)
        s_ = ZeroTensors(m_->config().num_layers, m_->config().hidden_size);
      out.push_back(Step(*m_, *w_, s_, tok, &cond));
    }
    return out;
  }

 private:
  const LstmLm* m_;
  std::shared_ptr<const LstmLm::Weights> w_;
  StepTensors s_;
};

}  // namespace

std::unique_ptr<SequenceRunner> LstmLm::Runner(const SessionBatch& batch, int truncation) const {
  return std::make_unique<LstmRunner>(*this, batch, truncation);
}

std::unique_ptr<ScoringSession> LstmLm::NewScoringSession() const {
  ag::NoGradGuard no_grad;
  return std::make_unique<LstmScoringSession>(*this);
}

}  // namespace ctxlm
