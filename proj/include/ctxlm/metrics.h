// ctxlm/metrics.h

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

// Word error rate, content-word error rate and the matched-pairs
// sentence-segment word error (MAPSSWE) significance test.

#ifndef CTXLM_METRICS_H_
#define CTXLM_METRICS_H_

#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

namespace ctxlm {

struct AlignmentResult {
  int substitutions = 0;
  int insertions = 0;
  int deletions = 0;
  int reference_length = 0;
  bool skipped = false;  // content alignment with nothing left in the reference

  int errors() const { return substitutions + insertions + deletions; }
  double wer() const { return reference_length ? double(errors()) / reference_length : 0.0; }
};

/// Minimum edit distance with unit costs.  Among minimum-cost alignments the
/// one with the most substitutions wins (substitution before insertion
/// before deletion), which fixes the three counts.  UsageError on an empty
/// reference.
AlignmentResult Align(std::span<const std::string> reference, std::span<const std::string> hypothesis);
AlignmentResult Align(std::span<const int> reference, std::span<const int> hypothesis);

/// Whitespace-tokenised convenience form; case-sensitive.
AlignmentResult AlignText(const std::string& reference, const std::string& hypothesis);

using StopwordSet = std::unordered_set<std::string>;

/// One token per line; blank lines and lines starting with '#' are ignored.
StopwordSet LoadStopwords(const std::string& path);

/// Both sides filtered of stopwords, then aligned.  A reference with no
/// content words yields a result with `skipped` set.
AlignmentResult ContentAlign(std::span<const std::string> reference,
                             std::span<const std::string> hypothesis, const StopwordSet& stopwords);

struct CorpusWer {
  int errors = 0;
  int reference_words = 0;
  int utterances = 0;  // not counting skipped ones
  double wer = 0.0;    // errors / reference_words
};

/// Pooled over utterances: total errors over total reference words.
CorpusWer PooledWer(std::span<const AlignmentResult> alignments);

struct MapssweResult {
  double z = 0.0;  // +-inf when the differences have zero spread but nonzero mean
  double p_value = 1.0;
  double mean_difference = 0.0;
  double stddev = 0.0;
  int segments = 0;
};

/// Two-sided normal-approximation test on d_i = a_i - b_i.  Positive z means
/// system A makes more errors.  UsageError on a length mismatch or fewer than
/// two segments.
MapssweResult Mapsswe(std::span<const int> errors_a, std::span<const int> errors_b);

/// Smallest p-value reported as a number; smaller ones print as "<1e-12".
inline constexpr double kMinReportedPValue = 1e-12;

struct SystemEvaluation {
  std::vector<AlignmentResult> word;     // one per utterance
  std::vector<AlignmentResult> content;  // same order, may hold skipped entries
  std::optional<double> ppl;
};

struct EvaluationReport {
  CorpusWer wer, baseline_wer;
  CorpusWer content_wer, baseline_content_wer;
  std::optional<double> werr, cwerr;  // percent; absent when the baseline is 0
  std::optional<double> ppl, baseline_ppl, pplr;
  std::optional<MapssweResult> significance;  // A = baseline, B = candidate; needs 2+ utterances
};

/// Pools both systems and compares them utterance by utterance.  The two
/// evaluations must cover the same, non-empty, utterance list in order.
EvaluationReport AggregateReport(const SystemEvaluation& candidate, const SystemEvaluation& baseline);

}  // namespace ctxlm

#endif  // CTXLM_METRICS_H_
