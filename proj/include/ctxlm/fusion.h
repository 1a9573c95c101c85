// ctxlm/fusion.h

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

// Domain-embedding fusion for the Transformer-XL model.  Tensors are row
// batches: every row of the first input is fused with the same row of the
// domain vectors.  All three outputs go through the logistic function.

#ifndef CTXLM_FUSION_H_
#define CTXLM_FUSION_H_

#include <random>
#include <string_view>

#include "ctxlm/graph.h"

namespace ctxlm {

enum class FusionMode { kNone, kEarly, kSimple, kCold };

std::string_view FusionName(FusionMode m);
/// "none", "early", "simple" or "cold"; UsageError otherwise.
FusionMode ParseFusion(std::string_view name);

/// sigma([input ; mlm] W + b).  W is [d_in + mlm, d_out].
ag::Tensor EarlyFusion(const ag::Tensor& input, const ag::Tensor& mlm, const ag::Tensor& W,
                       const ag::Tensor& b);

/// sigma([h ; mlm] W + b), applied to the last decoder layer's output.
ag::Tensor SimpleFusion(const ag::Tensor& h, const ag::Tensor& mlm, const ag::Tensor& W,
                        const ag::Tensor& b);

struct ColdFusionWeights {
  ag::Tensor W1, b1;  // [mlm, k]
  ag::Tensor W2, b2;  // [k + d, mlm]: the gate is as wide as the domain vector
  ag::Tensor W3, b3;  // [d + mlm, d_out]
};

/// h_mlm = sigma(mlm W1 + b1); g = sigma([h_mlm ; h] W2 + b2);
/// r = sigma([h ; g * mlm] W3 + b3).  Returns r; `gate` receives g.
ag::Tensor ColdFusion(const ag::Tensor& h, const ag::Tensor& mlm, const ColdFusionWeights& w,
                      ag::Tensor* gate = nullptr);

/// Adds the tensors for `mode` to `store` as fusion.{mode}.* with the model
/// width `d` and domain width `mlm_dim`, uniform in +-1/sqrt(d).
void AddFusionParameters(FusionMode mode, int d, int mlm_dim, ag::ParameterStore& store,
                         std::mt19937_64& rng);

/// Applies the fusion stored in `store`.  Early fusion maps the token
/// embeddings, the others the final hidden states; kNone returns `x`.
ag::Tensor ApplyFusion(FusionMode mode, const ag::ParameterStore& store, const ag::Tensor& x,
                       const ag::Tensor& mlm);

}  // namespace ctxlm

#endif  // CTXLM_FUSION_H_
