// ctxlm/fusion.cc

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

#include "ctxlm/fusion.h"

#include <cmath>
#include <string>

#include "ctxlm/errors.h"

namespace ctxlm {

using ag::Tensor;

std::string_view FusionName(FusionMode m) {
  switch (m) {
    case FusionMode::kNone: return "none";
    case FusionMode::kEarly: return "early";
    case FusionMode::kSimple: return "simple";
    case FusionMode::kCold: return "cold";
  }
  return "none";
}

FusionMode ParseFusion(std::string_view name) {
  if (name == "none") return FusionMode::kNone;
  if (name == "early") return FusionMode::kEarly;
  if (name == "simple") return FusionMode::kSimple;
  if (name == "cold") return FusionMode::kCold;
  throw UsageError("unknown fusion mode '" + std::string(name) + "' (none, early, simple, cold)");
}

namespace {

std::string Shape(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "," + std::to_string(t.cols()) + "]";
}

void CheckRows(const char* op, const Tensor& x, const Tensor& mlm) {
  if (x.rows() != mlm.rows())
    throw DimensionError(std::string(op) + ": " + Shape(x) + " and domain vectors " + Shape(mlm) +
                         " differ in rows");
}

void CheckProjection(const char* op, int in, const Tensor& W, const Tensor& b) {
  if (W.rows() != in || b.rows() != 1 || b.cols() != W.cols())
    throw DimensionError(std::string(op) + ": input width " + std::to_string(in) +
                         " does not fit W " + Shape(W) + " and b " + Shape(b));
}

Tensor Project(const Tensor& a, const Tensor& b, const Tensor& W, const Tensor& bias) {
  Tensor parts[2] = {a, b};
  return ag::Sigmoid(ag::Add(ag::MatMul(ag::ConcatCols(parts), W), bias));
}

}  // namespace

Tensor EarlyFusion(const Tensor& input, const Tensor& mlm, const Tensor& W, const Tensor& b) {
  CheckRows("early_fusion", input, mlm);
  CheckProjection("early_fusion", input.cols() + mlm.cols(), W, b);
  return Project(input, mlm, W, b);
}

Tensor SimpleFusion(const Tensor& h, const Tensor& mlm, const Tensor& W, const Tensor& b) {
  CheckRows("simple_fusion", h, mlm);
  CheckProjection("simple_fusion", h.cols() + mlm.cols(), W, b);
  return Project(h, mlm, W, b);
}

Tensor ColdFusion(const Tensor& h, const Tensor& mlm, const ColdFusionWeights& w, Tensor* gate) {
  CheckRows("cold_fusion", h, mlm);
  CheckProjection("cold_fusion (W1)", mlm.cols(), w.W1, w.b1);
  CheckProjection("cold_fusion (W2)", w.W1.cols() + h.cols(), w.W2, w.b2);
  if (w.W2.cols() != mlm.cols())
    throw DimensionError("cold_fusion: gate width " + std::to_string(w.W2.cols()) +
                         " must equal the domain width " + std::to_string(mlm.cols()));
  CheckProjection("cold_fusion (W3)", h.cols() + mlm.cols(), w.W3, w.b3);
  Tensor h_mlm = ag::Sigmoid(ag::Add(ag::MatMul(mlm, w.W1), w.b1));
  Tensor g = Project(h_mlm, h, w.W2, w.b2);
  if (gate) *gate = g;
  return Project(h, ag::Multiply(g, mlm), w.W3, w.b3);
}

void AddFusionParameters(FusionMode mode, int d, int mlm_dim, ag::ParameterStore& store,
                         std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(double(d));
  switch (mode) {
    case FusionMode::kNone:
      return;
    case FusionMode::kEarly:
    case FusionMode::kSimple: {
      const std::string p = "fusion." + std::string(FusionName(mode)) + ".";
      store.AddUniform(p + "W", d + mlm_dim, d, bound, rng);
      store.AddUniform(p + "b", 1, d, bound, rng);
      return;
    }
    case FusionMode::kCold:
      store.AddUniform("fusion.cold.W1", mlm_dim, d, bound, rng);
      store.AddUniform("fusion.cold.b1", 1, d, bound, rng);
      store.AddUniform("fusion.cold.W2", 2 * d, mlm_dim, bound, rng);
      store.AddUniform("fusion.cold.b2", 1, mlm_dim, bound, rng);
      store.AddUniform("fusion.cold.W3", d + mlm_dim, d, bound, rng);
      store.AddUniform("fusion.cold.b3", 1, d, bound, rng);
      return;
  }
}

Tensor ApplyFusion(FusionMode mode, const ag::ParameterStore& store, const Tensor& x,
                   const Tensor& mlm) {
  switch (mode) {
    case FusionMode::kNone:
      return x;
    case FusionMode::kEarly:
      return EarlyFusion(x, mlm, store.Get("fusion.early.W"), store.Get("fusion.early.b"));
    case FusionMode::kSimple:
      return SimpleFusion(x, mlm, store.Get("fusion.simple.W"), store.Get("fusion.simple.b"));
    case FusionMode::kCold: {
      ColdFusionWeights w{store.Get("fusion.cold.W1"), store.Get("fusion.cold.b1"),
                          store.Get("fusion.cold.W2"), store.Get("fusion.cold.b2"),
                          store.Get("fusion.cold.W3"), store.Get("fusion.cold.b3")};
      return ColdFusion(x, mlm, w);
    }
  }
  return x;
}

}  // namespace ctxlm
