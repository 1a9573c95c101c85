// ctxlm/language_model.cc

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

#include "ctxlm/language_model.h"

#include <algorithm>

#include "ctxlm/errors.h"

namespace ctxlm {

std::string_view FamilyName(ModelFamily f) { return f == ModelFamily::kLstm ? "lstm" : "txl"; }

int SessionBatch::TargetCount() const {
  int n = 0;
  for (double w : weights) n += w != 0.0;
  return n;
}

std::vector<double> DomainVector(const DomainEmbeddingTable* domains, std::string_view label,
                                 int mlm_dim) {
  if (mlm_dim <= 0) return {};
  if (domains != nullptr && !label.empty()) {
    if (domains->dim() != mlm_dim)
      throw DimensionError("domain table dim " + std::to_string(domains->dim()) +
                           " does not match model input " + std::to_string(mlm_dim));
    if (const auto* v = domains->Find(label)) return *v;
  }
  return std::vector<double>(mlm_dim, 0.0);
}

SessionBatch MakeBatch(std::span<const Session* const> sessions,
                       const DomainEmbeddingTable* domains, int mlm_dim) {
  if (sessions.empty()) throw UsageError("empty batch");
  SessionBatch b;
  b.batch = int(sessions.size());
  for (const Session* s : sessions) b.length = std::max<int>(b.length, int(s->tokens.size()) - 1);
  if (b.length <= 0) throw UsageError("batch sessions have no targets");
  const std::size_t n = std::size_t(b.batch) * b.length;
  b.inputs.assign(n, 2);  // <eos> padding
  b.targets.assign(n, 2);
  b.weights.assign(n, 0.0);
  b.turn.assign(n, -1);
  b.turn_start.assign(n, 0);
  for (int i = 0; i < b.batch; ++i) {
    const Session& s = *sessions[i];
    const int base = int(b.conditioning.size());
    for (const TurnSpan& span : s.turns) {
      TurnConditioning c;
      if (span.actor == Actor::kUser) c.context = span.context;
      c.mlm = DomainVector(domains, span.domain, mlm_dim);
      b.conditioning.push_back(std::move(c));
    }
    for (int t = 0; t + 1 < int(s.tokens.size()); ++t) {
      const std::size_t k = b.at(i, t);
      b.inputs[k] = s.tokens[t];
      b.targets[k] = s.tokens[t + 1];
      b.weights[k] = s.loss_mask[t];
      b.turn[k] = base + s.turn_of[t];
      b.turn_start[k] = s.turns[s.turn_of[t]].begin == t;
    }
  }
  return b;
}

double ScoringSession::ScoreTurn(std::span<const int> tokens, const TurnConditioning& cond) const {
  if (tokens.size() < 2) throw UsageError("scoring needs at least two tokens");
  auto copy = Clone();
  auto dists = copy->Feed(tokens, cond);
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) total += dists[i][tokens[i + 1]];
  return total;
}

SessionScore ScoreSession(const LanguageModel& model, const Session& session,
                          const DomainEmbeddingTable* domains) {
  SessionScore out;
  out.per_turn.assign(session.turns.size(), 0.0);
  auto scorer = model.NewScoringSession();
  std::vector<std::vector<double>> dists;
  for (const TurnSpan& span : session.turns) {
    TurnConditioning cond;
    if (span.actor == Actor::kUser) cond.context = span.context;
    cond.mlm = DomainVector(domains, span.domain, model.mlm_input_dim());
    auto d = scorer->Feed(std::span<const int>(session.tokens).subspan(span.begin, span.end - span.begin),
                          cond);
    for (auto& v : d) dists.push_back(std::move(v));
  }
  for (std::size_t k = 0; k + 1 < session.tokens.size(); ++k) {
    if (!session.loss_mask[k]) continue;
    const double lp = dists[k][session.tokens[k + 1]];
    out.log_prob += lp;
    out.per_turn[session.turn_of[k + 1]] += lp;
    ++out.targets;
  }
  return out;
}

}  // namespace ctxlm
