// ctxlm/language_model.h

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

// Interfaces shared by the recurrent and Transformer-XL model families: the
// padded session batches the trainer feeds them, the truncated-window loss
// runner, and the incremental scoring session used for rescoring and
// sampling.

#ifndef CTXLM_LANGUAGE_MODEL_H_
#define CTXLM_LANGUAGE_MODEL_H_

#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "ctxlm/corpus.h"
#include "ctxlm/domain_embed.h"
#include "ctxlm/graph.h"

namespace ctxlm {

enum class ModelFamily { kLstm, kTxl };

std::string_view FamilyName(ModelFamily f);

/// Conditioning attached to one turn: the tagged context of the preceding bot
/// turn (user turns only) and the domain embedding (empty when the model
/// takes none).
struct TurnConditioning {
  std::vector<int> context;
  std::vector<double> mlm;
};

/// Sessions padded to a common length.  Arrays are [batch * length],
/// sequence-major (index b * length + t); input t predicts target t.
struct SessionBatch {
  int batch = 0;
  int length = 0;
  std::vector<int> inputs;
  std::vector<int> targets;
  std::vector<double> weights;
  std::vector<int> turn;                 // index into `conditioning`, -1 on padding
  std::vector<std::uint8_t> turn_start;  // input is a turn's <sos>
  std::vector<TurnConditioning> conditioning;

  std::size_t at(int b, int t) const { return std::size_t(b) * length + t; }
  int TargetCount() const;
};

/// Domain vectors come from `domains` by each turn's resolved label; missing
/// labels get a zero vector.  mlm_dim == 0 leaves every mlm field empty.
SessionBatch MakeBatch(std::span<const Session* const> sessions,
                       const DomainEmbeddingTable* domains, int mlm_dim);

/// Domain vector for `label`, or zeros when it is absent or `domains` is null.
std::vector<double> DomainVector(const DomainEmbeddingTable* domains, std::string_view label,
                                 int mlm_dim);

struct ChunkLoss {
  ag::Tensor nll;   // summed masked negative log-likelihood (scalar)
  int targets = 0;  // masked targets inside the window
};

/// Walks one batch window by window, carrying detached recurrent state or
/// memory between windows.
class SequenceRunner {
 public:
  virtual ~SequenceRunner() = default;
  virtual bool Done() const = 0;
  virtual ChunkLoss Next() = 0;
};

/// Incremental scoring state for one dialogue.
class ScoringSession {
 public:
  virtual ~ScoringSession() = default;
  virtual std::unique_ptr<ScoringSession> Clone() const = 0;

  /// Feeds `tokens`; element i of the result is the next-token
  /// log-distribution after tokens[i].
  virtual std::vector<std::vector<double>> Feed(std::span<const int> tokens,
                                                const TurnConditioning& cond) = 0;

  /// sum_{i>=1} log p(tokens[i] | history, tokens[<i]) without changing this
  /// session.  Needs at least two tokens.
  double ScoreTurn(std::span<const int> tokens, const TurnConditioning& cond) const;
};

class LanguageModel;

struct SessionScore {
  double log_prob = 0.0;         // summed over masked targets
  int targets = 0;
  std::vector<double> per_turn;  // indexed like Session::turns
};

/// Feeds a session turn by turn through a fresh scoring session and sums the
/// masked target log-probabilities.
SessionScore ScoreSession(const LanguageModel& model, const Session& session,
                          const DomainEmbeddingTable* domains);

class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual ModelFamily family() const = 0;
  virtual int vocab_size() const = 0;
  /// Width of the domain embedding the model consumes, 0 if none.
  virtual int mlm_input_dim() const = 0;
  virtual const ContextOptions& context_options() const = 0;

  virtual ag::ParameterStore& parameters() = 0;
  virtual const ag::ParameterStore& parameters() const = 0;

  /// `truncation` bounds the LSTM backpropagation window; the TXL model
  /// slices by its own segment length.
  virtual std::unique_ptr<SequenceRunner> Runner(const SessionBatch& batch,
                                                 int truncation) const = 0;
  virtual std::unique_ptr<ScoringSession> NewScoringSession() const = 0;
};

}  // namespace ctxlm

#endif  // CTXLM_LANGUAGE_MODEL_H_
