// ctxlm/metrics.cc

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

#include "ctxlm/metrics.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "ctxlm/errors.h"
#include "ctxlm/trainer.h"

namespace ctxlm {

namespace {

// Costs are compared as (edits, insertions + deletions).  With the edit
// count and the length difference fixed, fewer insertions and deletions
// means more substitutions, so the pair pins down S, I and D without a
// backtrace.
struct Cost {
  int edits = 0;
  int indels = 0;
  bool operator<(const Cost& o) const { return edits != o.edits ? edits < o.edits : indels < o.indels; }
};

template <typename T>
AlignmentResult AlignImpl(std::span<const T> ref, std::span<const T> hyp) {
  if (ref.empty()) throw UsageError("align: empty reference");
  const std::size_t R = ref.size(), H = hyp.size();
  std::vector<Cost> prev(H + 1), cur(H + 1);
  for (std::size_t j = 0; j <= H; ++j) prev[j] = {int(j), int(j)};
  for (std::size_t i = 1; i <= R; ++i) {
    cur[0] = {int(i), int(i)};
    for (std::size_t j = 1; j <= H; ++j) {
      const bool same = ref[i - 1] == hyp[j - 1];
      Cost best = {prev[j - 1].edits + !same, prev[j - 1].indels};
      const Cost ins = {cur[j - 1].edits + 1, cur[j - 1].indels + 1};
      const Cost del = {prev[j].edits + 1, prev[j].indels + 1};
      if (ins < best) best = ins;
      if (del < best) best = del;
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  const Cost c = prev[H];
  const int diff = int(H) - int(R);  // insertions - deletions
  AlignmentResult r;
  r.substitutions = c.edits - c.indels;
  r.insertions = (c.indels + diff) / 2;
  r.deletions = (c.indels - diff) / 2;
  r.reference_length = int(R);
  return r;
}

std::vector<std::string> SplitWhitespace(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

}  // namespace

AlignmentResult Align(std::span<const std::string> reference, std::span<const std::string> hypothesis) {
  return AlignImpl(reference, hypothesis);
}

AlignmentResult Align(std::span<const int> reference, std::span<const int> hypothesis) {
  return AlignImpl(reference, hypothesis);
}

AlignmentResult AlignText(const std::string& reference, const std::string& hypothesis) {
  const auto r = SplitWhitespace(reference), h = SplitWhitespace(hypothesis);
  return Align(std::span<const std::string>(r), std::span<const std::string>(h));
}

StopwordSet LoadStopwords(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open stopword file");
  StopwordSet out;
  for (std::string line; std::getline(in, line);) {
    auto words = SplitWhitespace(line);
    if (words.empty() || words[0][0] == '#') continue;
    if (words.size() != 1) throw DataError(path + ": expected one token per line, got '" + line + "'");
    std::string w = words[0];
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
    out.insert(std::move(w));
  }
  return out;
}

AlignmentResult ContentAlign(std::span<const std::string> reference,
                             std::span<const std::string> hypothesis, const StopwordSet& stopwords) {
  auto keep = [&](std::span<const std::string> in) {
    std::vector<std::string> out;
    for (const auto& w : in)
      if (!stopwords.count(w)) out.push_back(w);
    return out;
  };
  const auto r = keep(reference), h = keep(hypothesis);
  if (r.empty()) {
    AlignmentResult skipped;
    skipped.skipped = true;
    return skipped;
  }
  return Align(std::span<const std::string>(r), std::span<const std::string>(h));
}

CorpusWer PooledWer(std::span<const AlignmentResult> alignments) {
  CorpusWer c;
  for (const auto& a : alignments) {
    if (a.skipped) continue;
    c.errors += a.errors();
    c.reference_words += a.reference_length;
    ++c.utterances;
  }
  c.wer = c.reference_words ? double(c.errors) / c.reference_words : 0.0;
  return c;
}

MapssweResult Mapsswe(std::span<const int> errors_a, std::span<const int> errors_b) {
  if (errors_a.size() != errors_b.size())
    throw UsageError("mapsswe: " + std::to_string(errors_a.size()) + " vs " +
                     std::to_string(errors_b.size()) + " segments");
  const int n = int(errors_a.size());
  if (n < 2) throw UsageError("mapsswe: needs at least two segments");
  MapssweResult r;
  r.segments = n;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += errors_a[i] - errors_b[i];
  r.mean_difference = sum / n;
  double ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = errors_a[i] - errors_b[i] - r.mean_difference;
    ss += d * d;
  }
  r.stddev = std::sqrt(ss / (n - 1));
  if (r.stddev == 0.0) {
    if (r.mean_difference == 0.0) return r;
    r.z = std::copysign(std::numeric_limits<double>::infinity(), r.mean_difference);
    r.p_value = 0.0;
    return r;
  }
  r.z = r.mean_difference * std::sqrt(double(n)) / r.stddev;
  r.p_value = std::erfc(std::abs(r.z) / std::sqrt(2.0));
  return r;
}

EvaluationReport AggregateReport(const SystemEvaluation& candidate, const SystemEvaluation& baseline) {
  if (candidate.word.empty()) throw UsageError("report: empty evaluation set");
  if (candidate.word.size() != baseline.word.size() || candidate.content.size() != baseline.content.size())
    throw UsageError("report: systems cover different utterance lists");
  EvaluationReport r;
  r.wer = PooledWer(candidate.word);
  r.baseline_wer = PooledWer(baseline.word);
  r.content_wer = PooledWer(candidate.content);
  r.baseline_content_wer = PooledWer(baseline.content);
  if (r.baseline_wer.wer > 0.0) r.werr = RelativeReduction(r.baseline_wer.wer, r.wer.wer);
  if (r.baseline_content_wer.wer > 0.0)
    r.cwerr = RelativeReduction(r.baseline_content_wer.wer, r.content_wer.wer);
  r.ppl = candidate.ppl;
  r.baseline_ppl = baseline.ppl;
  if (r.ppl && r.baseline_ppl) r.pplr = RelativeReduction(*r.baseline_ppl, *r.ppl);
  if (candidate.word.size() >= 2) {
    std::vector<int> a, b;
    for (const auto& x : baseline.word) a.push_back(x.errors());
    for (const auto& x : candidate.word) b.push_back(x.errors());
    r.significance = Mapsswe(a, b);
  }
  return r;
}

}  // namespace ctxlm
