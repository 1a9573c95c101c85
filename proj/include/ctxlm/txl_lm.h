// ctxlm/txl_lm.h

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

#ifndef CTXLM_TXL_LM_H_
#define CTXLM_TXL_LM_H_

#include <cstdint>
#include <span>
#include <vector>

#include "ctxlm/fusion.h"
#include "ctxlm/language_model.h"

namespace ctxlm {

struct TxlConfig {
  int num_layers = 6;
  int d_model = 512;
  int num_heads = 4;
  int ffn_size = 0;  // 0 means 4 * d_model
  int segment_length = 15;
  int memory_length = 15;
  int vocab_size = 0;
  FusionMode fusion = FusionMode::kNone;
  int mlm_dim = 768;
  ContextOptions context;  // bot-turn fields rendered into the session

  int ffn() const { return ffn_size > 0 ? ffn_size : 4 * d_model; }
};

/// Cached per-layer inputs of the previous positions, `length` rows of
/// d_model each (row-major).
struct TxlMemory {
  int length = 0;
  std::vector<std::vector<double>> layers;
};

/// Decoder-only Transformer-XL with pre-norm blocks, sinusoidal relative
/// positions and global content/position biases.  Each layer caches the
/// last memory_length rows of [memory ; its input] without gradient.
///
/// Parameters: embedding [V,d]; txl.bias_content, txl.bias_position [1,d];
/// txl.layer{n}.{ln1,ln2}.{gain,bias}; txl.layer{n}.attn.{W_q,W_k,W_v,W_r,W_o}
/// [d,d]; txl.layer{n}.ffn.{W1 [d,F], b1, W2 [F,d], b2}; txl.ln_final.{gain,
/// bias}; fusion.{mode}.*; output.proj [d,V]; output.bias [1,V].
class TxlLm : public LanguageModel {
 public:
  struct SegmentResult {
    std::vector<std::vector<double>> log_probs;  // one per position
    TxlMemory memory;
  };

  TxlLm(const TxlConfig& config, std::uint64_t seed);

  static void Validate(const TxlConfig& config);

  const TxlConfig& config() const { return config_; }

  ModelFamily family() const override { return ModelFamily::kTxl; }
  int vocab_size() const override { return config_.vocab_size; }
  int mlm_input_dim() const override {
    return config_.fusion == FusionMode::kNone ? 0 : config_.mlm_dim;
  }
  const ContextOptions& context_options() const override { return config_.context; }
  ag::ParameterStore& parameters() override { return params_; }
  const ag::ParameterStore& parameters() const override { return params_; }

  TxlMemory EmptyMemory() const;

  /// One segment of at most segment_length tokens after `memory`.  `mlm` is
  /// the domain vector for every position (required iff fusion is on).
  /// UsageError on an empty or over-long segment, DimensionError on a
  /// mismatched memory or domain vector.
  SegmentResult ForwardSegment(std::span<const int> segment, const TxlMemory& memory,
                               std::span<const double> mlm = {}) const;

  std::unique_ptr<SequenceRunner> Runner(const SessionBatch& batch, int truncation) const override;
  std::unique_ptr<ScoringSession> NewScoringSession() const override;

  /// Graph for `blocks` independent segments of equal length stacked by
  /// rows (tokens block-major).  memory[n] is [blocks*m, d] or undefined
  /// when m is 0; mlm is [blocks*L, mlm_dim] or undefined.  Returns logits
  /// [blocks*L, V] and the detached memory for the next segment.
  struct GraphOutput {
    ag::Tensor logits;
    std::vector<ag::Tensor> memory;
  };
  GraphOutput SegmentGraph(std::span<const int> tokens, int blocks,
                           const std::vector<ag::Tensor>& memory, const ag::Tensor& mlm) const;

  /// Sinusoidal table [rows, d]: row k encodes distance k, sines in the
  /// first half of the columns and cosines in the second.
  static std::vector<double> RelativePositions(int rows, int d);

 private:
  TxlConfig config_;
  ag::ParameterStore params_;
};

}  // namespace ctxlm

#endif  // CTXLM_TXL_LM_H_
