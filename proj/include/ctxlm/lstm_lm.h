// ctxlm/lstm_lm.h

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

#ifndef CTXLM_LSTM_LM_H_
#define CTXLM_LSTM_LM_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ctxlm/language_model.h"

namespace ctxlm {

enum class Augmentation { kNone, kAvg, kAttention };

std::string_view AugmentationName(Augmentation a);
/// "none", "avg" or "attention"; UsageError otherwise.
Augmentation ParseAugmentation(std::string_view name);

struct LstmLmConfig {
  int num_layers = 3;
  int hidden_size = 1150;
  int embed_size = 512;
  int vocab_size = 0;
  Augmentation augmentation = Augmentation::kNone;
  ContextOptions context;  // fields entering the context sequence
  bool use_mlm_embedding = false;
  int mlm_dim = 768;
  /// State flows across the turns of a dialogue; otherwise it restarts at
  /// every turn.
  bool carry_over = false;
};

/// Per-layer (h, c), each hidden_size wide.
struct RecurrentState {
  std::vector<std::vector<double>> h;
  std::vector<std::vector<double>> c;

  bool operator==(const RecurrentState&) const = default;
};

/// Stacked 4-gate LSTM language model.  The tagged bot-turn context can enter
/// through the carried state, through an averaged or attended context
/// embedding concatenated onto the input, or both; a per-turn domain vector
/// can be concatenated as well.
///
/// Parameters: embedding [V,E]; lstm.layer{i}.{input,forget,cell,output}.W
/// [in_i+H, H] and .b [1,H]; output.proj [H,V]; output.bias [1,V];
/// attn.W_w [E,E] and attn.b_w [1,E] in attention mode.
class LstmLm : public LanguageModel {
 public:
  struct StepResult {
    RecurrentState state;
    std::vector<double> log_probs;
  };

  /// Forget-gate biases start at 1, everything else uniform in
  /// +-1/sqrt(hidden_size).
  LstmLm(const LstmLmConfig& config, std::uint64_t seed);

  static void Validate(const LstmLmConfig& config);

  const LstmLmConfig& config() const { return config_; }
  int input_size() const;

  ModelFamily family() const override { return ModelFamily::kLstm; }
  int vocab_size() const override { return config_.vocab_size; }
  int mlm_input_dim() const override { return config_.use_mlm_embedding ? config_.mlm_dim : 0; }
  const ContextOptions& context_options() const override { return config_.context; }
  ag::ParameterStore& parameters() override { return params_; }
  const ag::ParameterStore& parameters() const override { return params_; }

  RecurrentState InitialState() const;

  /// One step.  `cond` supplies the turn's context (avg/attention modes) and
  /// domain vector (MLM input); it may be null only when the model uses
  /// neither.  DimensionError on a wrong domain-vector width.
  StepResult ForwardStep(const RecurrentState& state, int token,
                         const TurnConditioning* cond = nullptr) const;

  /// sum_{i>=1} log p(tokens[i] | tokens[<i]) from `initial`, with no state
  /// resets.  UsageError below two tokens.
  double ScoreSequence(std::span<const int> tokens, const RecurrentState& initial,
                       const TurnConditioning* cond = nullptr,
                       RecurrentState* final_state = nullptr) const;

  /// State after feeding `context` through ForwardStep.
  RecurrentState PrimeWithContext(const RecurrentState& state, std::span<const int> context,
                                  const TurnConditioning* cond = nullptr) const;

  /// Mean embedding row of `context`; zeros when empty.
  std::vector<double> AvgContextEmbedding(std::span<const int> context) const;
  /// sum_t a_t e_t with a = softmax_t(tanh(W_w e_t + b_w) . query); zeros
  /// when empty.  `weights` receives a when given.
  std::vector<double> AttnContextEmbedding(std::span<const int> context,
                                           std::span<const double> query,
                                           std::vector<double>* weights = nullptr) const;
  /// [context ; token] plus the domain vector when the model takes one.
  std::vector<double> AugmentedInput(std::span<const double> token_embedding,
                                     std::span<const double> context_embedding,
                                     std::span<const double> mlm = {}) const;

  std::unique_ptr<SequenceRunner> Runner(const SessionBatch& batch, int truncation) const override;
  std::unique_ptr<ScoringSession> NewScoringSession() const override;

  /// Graph-level pieces shared by the runner and the step API.
  struct Weights {
    ag::Tensor embedding;
    std::vector<ag::Tensor> gate_w;  // fused [in+H, 4H], gates in i,f,g,o order
    std::vector<ag::Tensor> gate_b;  // fused [1, 4H]
    ag::Tensor proj, bias;
    ag::Tensor attn_w, attn_b;
  };
  Weights BindWeights() const;
  /// Context embedding rows for `queries` ([n,E]); avg mode returns [1,E].
  ag::Tensor ContextEmbeddingGraph(const Weights& w, std::span<const int> context,
                                   const ag::Tensor& queries) const;
  void CellGraph(const Weights& w, int layer, const ag::Tensor& x, ag::Tensor& h,
                 ag::Tensor& c) const;

 private:
  void CheckConditioning(const TurnConditioning* cond) const;

  LstmLmConfig config_;
  ag::ParameterStore params_;
};

}  // namespace ctxlm

#endif  // CTXLM_LSTM_LM_H_
