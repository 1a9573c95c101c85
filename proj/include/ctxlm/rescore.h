// ctxlm/rescore.h

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

// Second-pass N-best rescoring: combined score
//   acoustic_scale * acoustic_score + LM log-probability,
// with dialogue context advanced turn by turn.

#ifndef CTXLM_RESCORE_H_
#define CTXLM_RESCORE_H_

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctxlm/corpus.h"
#include "ctxlm/language_model.h"
#include "ctxlm/metrics.h"

namespace ctxlm {

inline constexpr int kMaxHypotheses = 50;

struct Hypothesis {
  std::string text;
  double acoustic_score = 0.0;  // log domain
};

struct NBestEntry {
  std::string utterance_id;
  std::string dialogue_id;
  int turn_index = 0;
  std::optional<std::string> reference;
  std::vector<Hypothesis> hypotheses;
};

// One JSON object per line:
//   {"utterance_id", "dialogue_id", "turn_index", "reference"?,
//    "hypotheses": [{"text", "acoustic_score"}]}
// Between 1 and 50 hypotheses with finite scores; errors name path and line.
std::vector<NBestEntry> LoadNBest(const std::string& path);
std::vector<NBestEntry> ParseNBest(std::string_view jsonl, const std::string& origin = "<memory>");
void SaveNBest(const std::string& path, std::span<const NBestEntry> entries);
std::string NBestToJson(const NBestEntry& e);

struct RankedHypothesis {
  int index = 0;  // position in the N-best list
  double acoustic = 0.0;
  double lm = 0.0;
  double combined = 0.0;
};

/// Sorts by combined score, descending; ties keep list order.  UsageError on
/// an empty list or mismatched lengths.
std::vector<RankedHypothesis> RankHypotheses(std::span<const double> acoustic,
                                             std::span<const double> lm, double acoustic_scale);

enum class ContextSource {
  kOneBest,    // the selected hypothesis, as in deployment
  kReference,  // the reference transcript (diagnostic oracle)
};

struct RescoreOptions {
  double acoustic_scale = 1.0;
  ContextSource context = ContextSource::kOneBest;
  int jobs = 1;  // worker threads across dialogues
};

struct RescoredEntry {
  std::string utterance_id;
  std::vector<RankedHypothesis> ranking;  // best first

  int best() const { return ranking.front().index; }
};

/// Rescores `entries` in dialogue context.  Entries are grouped by
/// dialogue_id and visited in turn_index order.  The dialogue's bot turns and
/// its unrecognised user turns are fed from `dialogues`; each rescored turn
/// is then advanced with the chosen hypothesis (or the reference).  Entries
/// whose dialogue is unknown are scored without context.  Output follows the
/// input order.
std::vector<RescoredEntry> RescoreCorpus(const LanguageModel& model, const Vocabulary& vocab,
                                         std::span<const Dialogue> dialogues,
                                         std::span<const NBestEntry> entries,
                                         const DomainEmbeddingTable* domains,
                                         const RescoreOptions& options);

/// Word and content alignments of the chosen hypotheses against the
/// references (entries without a reference are left out).  `choice[i]` is the
/// hypothesis index picked for entries[i].  Texts go through Tokenize.
SystemEvaluation EvaluateChoices(std::span<const NBestEntry> entries, std::span<const int> choice,
                                 const StopwordSet& stopwords);

/// Index of the highest acoustic score (first on ties).
std::vector<int> AcousticOneBest(std::span<const NBestEntry> entries);
/// Index of the fewest word errors against the reference (first on ties);
/// entries without a reference get 0.
std::vector<int> OracleChoice(std::span<const NBestEntry> entries);

}  // namespace ctxlm

#endif  // CTXLM_RESCORE_H_
