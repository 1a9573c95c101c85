// ctxlm/trainer.h

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

// Cross-entropy training, perplexity and sampling for either model family.

#ifndef CTXLM_TRAINER_H_
#define CTXLM_TRAINER_H_

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "ctxlm/language_model.h"

namespace ctxlm {

struct TrainingConfig {
  double learning_rate = 2e-3;
  int warmup_steps = 50;  // 0 keeps the rate constant
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
  int batch_size = 16;
  int max_epochs = 10;
  int patience = 3;
  std::int64_t max_steps = 0;  // 0 = no limit
  int truncation = 15;         // LSTM backpropagation window
  bool shuffle = true;
  std::uint64_t seed = 1;

  void Validate() const;
};

/// Rate multiplier at 1-based `step`: linear warmup to 1, then
/// sqrt(warmup / step).
double LearningRateFactor(std::int64_t step, int warmup_steps);

/// Adam over every entry of a parameter store.
class AdamOptimizer {
 public:
  AdamOptimizer(const TrainingConfig& config, const ag::ParameterStore& params);

  /// Applies the accumulated gradients and returns the rate used.
  double Step(ag::ParameterStore& params);
  std::int64_t steps() const { return step_; }

 private:
  TrainingConfig config_;
  std::int64_t step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Global L2 norm of all gradients.
double GradientNorm(const ag::ParameterStore& params);

/// Rescales every gradient by max_norm / norm when the global norm exceeds
/// max_norm.  Returns the norm before clipping.
double ClipGradientNorm(ag::ParameterStore& params, double max_norm);

struct EpochLog {
  int epoch = 0;
  double train_nll = 0.0;  // per masked target
  double valid_nll = 0.0;
  double valid_ppl = 0.0;
  double wall_seconds = 0.0;
};

struct StepInfo {
  std::int64_t step = 0;
  int epoch = 0;
  double loss = 0.0;  // per target, before the update
  int targets = 0;
  double grad_norm = 0.0;
  double learning_rate = 0.0;
};

struct TrainingResult {
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
  double best_valid_ppl = 0.0;
  std::int64_t steps = 0;
  std::int64_t skipped_windows = 0;  // windows without masked targets
};

struct TrainingHooks {
  std::ostream* log = nullptr;       // JSONL, one line per epoch
  std::ostream* progress = nullptr;  // human-readable
  std::function<void(const StepInfo&)> on_step;
};

/// Trains on `train`, early-stopping on validation perplexity.  On return the
/// model holds the parameters of the best epoch.  Windows with no masked
/// targets make no update.  Throws TrainingFailure on a non-finite loss or
/// gradient.
TrainingResult Train(LanguageModel& model, std::span<const Session> train,
                     std::span<const Session> valid, const DomainEmbeddingTable* domains,
                     const TrainingConfig& config, const TrainingHooks& hooks = {});

struct PerplexityResult {
  double nll = 0.0;  // summed over masked targets
  std::int64_t targets = 0;
  double ppl = 0.0;
};

/// exp(total masked NLL / masked targets).  UsageError when there are no
/// masked targets.
PerplexityResult Perplexity(const LanguageModel& model, std::span<const Session> sessions,
                            const DomainEmbeddingTable* domains, int batch_size = 16);

/// 100 * (baseline - candidate) / baseline.  UsageError unless baseline > 0.
double RelativeReduction(double baseline, double candidate);

struct SampleOptions {
  double temperature = 0.0;  // 0 = greedy, ties to the lowest id
  int max_length = 30;
  std::uint64_t seed = 1;
};

/// Continues `prompt` until <eos> (included) or max_length new tokens.
std::vector<int> Sample(const LanguageModel& model, std::span<const int> prompt,
                        std::span<const double> mlm, const SampleOptions& options);
/// As above with the full conditioning (augmentation context and domain
/// vector) applied to every fed token.
std::vector<int> Sample(const LanguageModel& model, std::span<const int> prompt,
                        const TurnConditioning& cond, const SampleOptions& options);

}  // namespace ctxlm

#endif  // CTXLM_TRAINER_H_
