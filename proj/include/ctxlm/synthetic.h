// ctxlm/synthetic.h

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

// Synthetic task-oriented dialogues and N-best lists.
//
// Dialogues alternate user and bot turns, starting with the user.  Each
// dialogue belongs to one domain ("bank" or "travel") whose slot values are
// disjoint.  A bot turn carries a uniformly drawn dialogue act and a response
// naming one slot value; the response wording does not depend on the act.
// The next user turn is a reply whose form is fixed by the act and which
// usually repeats the named value, so it is predictable only with the
// preceding bot turn in view.

#ifndef CTXLM_SYNTHETIC_H_
#define CTXLM_SYNTHETIC_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ctxlm/corpus.h"
#include "ctxlm/domain_embed.h"
#include "ctxlm/rescore.h"

namespace ctxlm {

struct SyntheticCorpusConfig {
  int dialogues = 2000;
  int min_turns = 4;
  int max_turns = 8;
  std::vector<std::string> domains = {"bank", "travel"};
  std::uint64_t seed = 1;
};

/// Domain names the generator knows.
const std::vector<std::string>& SyntheticDomains();

std::vector<Dialogue> GenerateDialogues(const SyntheticCorpusConfig& config);

/// One random vector of `dim` components per domain, N(0,1) entries.
DomainEmbeddingTable SyntheticDomainTable(std::span<const std::string> domains, int dim, std::uint64_t seed);

struct NBestFixtureConfig {
  int hypotheses = 5;
  double second_best_fraction = 0.4;  // reference ranked 2nd by acoustic score
  double lower_fraction = 0.1;        // ranked 3rd or below
  std::uint64_t seed = 1;
};

/// One N-best list per user turn of `dialogues`.
/// Competitors swap the repeated slot value, answer as if to another act,
/// or substitute or drop a word.  Acoustic scores are descending with gaps
/// in [0.5, 3]; the reference sits first, second or lower by the configured
/// fractions.
std::vector<NBestEntry> GenerateNBest(std::span<const Dialogue> dialogues, const NBestFixtureConfig& config);

}  // namespace ctxlm

#endif  // CTXLM_SYNTHETIC_H_
