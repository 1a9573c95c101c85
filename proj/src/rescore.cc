// ctxlm/rescore.cc

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

#include "ctxlm/rescore.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "ctxlm/errors.h"
#include "json.hpp"

namespace ctxlm {

using nlohmann::json;

namespace {

NBestEntry EntryFromJson(const json& j) {
  NBestEntry e;
  e.utterance_id = j.at("utterance_id").get<std::string>();
  e.dialogue_id = j.at("dialogue_id").get<std::string>();
  e.turn_index = j.at("turn_index").get<int>();
  if (e.turn_index < 0) throw DataError("negative turn_index");
  if (j.contains("reference") && !j.at("reference").is_null())
    e.reference = j.at("reference").get<std::string>();
  for (const json& h : j.at("hypotheses")) {
    Hypothesis hyp{h.at("text").get<std::string>(), h.at("acoustic_score").get<double>()};
    if (!std::isfinite(hyp.acoustic_score)) throw DataError("non-finite acoustic score");
    e.hypotheses.push_back(std::move(hyp));
  }
  if (e.hypotheses.empty() || int(e.hypotheses.size()) > kMaxHypotheses)
    throw DataError("utterance '" + e.utterance_id + "' has " + std::to_string(e.hypotheses.size()) +
                    " hypotheses (expected 1 to " + std::to_string(kMaxHypotheses) + ")");
  return e;
}

}  // namespace

std::vector<NBestEntry> ParseNBest(std::string_view jsonl, const std::string& origin) {
  std::vector<NBestEntry> out;
  std::size_t line_no = 0, pos = 0;
  while (pos <= jsonl.size()) {
    std::size_t nl = jsonl.find('\n', pos);
    if (nl == std::string_view::npos) nl = jsonl.size();
    std::string_view line = jsonl.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(EntryFromJson(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<NBestEntry> LoadNBest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open N-best file");
  std::stringstream buf;
  buf << in.rdbuf();
  return ParseNBest(buf.str(), path);
}

std::string NBestToJson(const NBestEntry& e) {
  json j;
  j["utterance_id"] = e.utterance_id;
  j["dialogue_id"] = e.dialogue_id;
  j["turn_index"] = e.turn_index;
  if (e.reference) j["reference"] = *e.reference;
  json hyps = json::array();
  for (const auto& h : e.hypotheses) hyps.push_back({{"text", h.text}, {"acoustic_score", h.acoustic_score}});
  j["hypotheses"] = std::move(hyps);
  return j.dump();
}

void SaveNBest(const std::string& path, std::span<const NBestEntry> entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot write N-best file");
  for (const auto& e : entries) out << NBestToJson(e) << '\n';
}

std::vector<RankedHypothesis> RankHypotheses(std::span<const double> acoustic, std::span<const double> lm,
                                             double acoustic_scale) {
  if (acoustic.empty()) throw UsageError("rescore: empty hypothesis list");
  if (acoustic.size() != lm.size()) throw UsageError("rescore: score lists differ in length");
  std::vector<RankedHypothesis> out(acoustic.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = {int(i), acoustic[i], lm[i], acoustic_scale * acoustic[i] + lm[i]};
  std::stable_sort(out.begin(), out.end(),
                   [](const RankedHypothesis& a, const RankedHypothesis& b) { return a.combined > b.combined; });
  return out;
}

namespace {

struct DialogueJob {
  const Dialogue* dialogue = nullptr;
  std::vector<int> entries;  // sorted by turn_index
};

class DialogueRescorer {
 public:
  DialogueRescorer(const LanguageModel& model, const Vocabulary& vocab,
                   const DomainEmbeddingTable* domains, const RescoreOptions& options)
      : model_(model), vocab_(vocab), domains_(domains), options_(options) {}

  void Run(const DialogueJob& job, std::span<const NBestEntry> entries, std::vector<RescoredEntry>& out) const {
    auto scorer = model_.NewScoringSession();
    const Dialogue* d = job.dialogue;
    std::size_t next = 0;
    const std::size_t turns = d ? d->turns.size() : 0;
    for (std::size_t t = 0; t < turns; ++t) {
      const DialogueTurn& turn = d->turns[t];
      TurnConditioning cond;
      cond.mlm = DomainVector(domains_, ResolveDomain(*d, t), model_.mlm_input_dim());
      if (turn.actor == Actor::kUser) cond.context = BuildContextSequence(*d, t, vocab_, model_.context_options());
      if (next < job.entries.size() && entries[job.entries[next]].turn_index == int(t)) {
        const int idx = job.entries[next++];
        if (turn.actor != Actor::kUser)
          throw DataError("utterance '" + entries[idx].utterance_id + "' points at a bot turn");
        out[idx] = Rescore(*scorer, entries[idx], cond);
      } else if (turn.actor == Actor::kUser) {
        scorer->Feed(UserTurnTokens(turn.text, vocab_), cond);
      } else {
        scorer->Feed(BotTurnTokens(turn, vocab_, model_.context_options()), cond);
      }
    }
    if (next < job.entries.size() && d != nullptr)
      throw DataError("utterance '" + entries[job.entries[next]].utterance_id + "' has turn_index " +
                      std::to_string(entries[job.entries[next]].turn_index) + " beyond dialogue '" +
                      d->id + "'");
    // Unknown dialogue: the recognised turns alone form the history.
    for (; next < job.entries.size(); ++next) {
      TurnConditioning cond;
      cond.mlm = DomainVector(nullptr, "", model_.mlm_input_dim());
      out[job.entries[next]] = Rescore(*scorer, entries[job.entries[next]], cond);
    }
  }

 private:
  RescoredEntry Rescore(ScoringSession& scorer, const NBestEntry& e, const TurnConditioning& cond) const {
    std::vector<double> acoustic, lm;
    std::vector<std::vector<int>> tokens;
    for (const auto& h : e.hypotheses) {
      tokens.push_back(UserTurnTokens(h.text, vocab_));
      acoustic.push_back(h.acoustic_score);
      lm.push_back(scorer.ScoreTurn(tokens.back(), cond));
    }
    RescoredEntry r{e.utterance_id, RankHypotheses(acoustic, lm, options_.acoustic_scale)};
    if (options_.context == ContextSource::kReference && e.reference)
      scorer.Feed(UserTurnTokens(*e.reference, vocab_), cond);
    else
      scorer.Feed(tokens[r.best()], cond);
    return r;
  }

  const LanguageModel& model_;
  const Vocabulary& vocab_;
  const DomainEmbeddingTable* domains_;
  RescoreOptions options_;
};

}  // namespace

std::vector<RescoredEntry> RescoreCorpus(const LanguageModel& model, const Vocabulary& vocab,
                                         std::span<const Dialogue> dialogues,
                                         std::span<const NBestEntry> entries,
                                         const DomainEmbeddingTable* domains,
                                         const RescoreOptions& options) {
  if (options.jobs <= 0) throw UsageError("jobs must be positive");
  std::unordered_map<std::string, const Dialogue*> by_id;
  for (const Dialogue& d : dialogues) by_id[d.id] = &d;

  std::vector<DialogueJob> jobs;
  std::map<std::string, int> job_of;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto [it, fresh] = job_of.try_emplace(entries[i].dialogue_id, int(jobs.size()));
    if (fresh) {
      auto d = by_id.find(entries[i].dialogue_id);
      jobs.push_back({d == by_id.end() ? nullptr : d->second, {}});
    }
    jobs[it->second].entries.push_back(int(i));
  }
  for (auto& job : jobs) {
    std::stable_sort(job.entries.begin(), job.entries.end(),
                     [&](int a, int b) { return entries[a].turn_index < entries[b].turn_index; });
    for (std::size_t k = 1; k < job.entries.size(); ++k)
      if (entries[job.entries[k]].turn_index == entries[job.entries[k - 1]].turn_index)
        throw DataError("dialogue '" + entries[job.entries[k]].dialogue_id + "' has two N-best lists for turn " +
                        std::to_string(entries[job.entries[k]].turn_index));
  }

  std::vector<RescoredEntry> out(entries.size());
  DialogueRescorer rescorer(model, vocab, domains, options);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    ag::NoGradGuard no_grad;
    for (std::size_t j; (j = next++) < jobs.size();) {
      try {
        rescorer.Run(jobs[j], entries, out);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const int threads = std::min<int>(options.jobs, int(jobs.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

SystemEvaluation EvaluateChoices(std::span<const NBestEntry> entries, std::span<const int> choice,
                                 const StopwordSet& stopwords) {
  if (choice.size() != entries.size()) throw UsageError("one choice per entry expected");
  SystemEvaluation ev;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const NBestEntry& e = entries[i];
    if (!e.reference) continue;
    if (choice[i] < 0 || choice[i] >= int(e.hypotheses.size()))
      throw IndexError("choice out of range for '" + e.utterance_id + "'");
    const auto ref = Tokenize(*e.reference), hyp = Tokenize(e.hypotheses[choice[i]].text);
    if (ref.empty()) throw DataError("utterance '" + e.utterance_id + "' has an empty reference");
    ev.word.push_back(Align(std::span<const std::string>(ref), std::span<const std::string>(hyp)));
    ev.content.push_back(ContentAlign(ref, hyp, stopwords));
  }
  return ev;
}

std::vector<int> AcousticOneBest(std::span<const NBestEntry> entries) {
  std::vector<int> out;
  for (const auto& e : entries) {
    int best = 0;
    for (int i = 1; i < int(e.hypotheses.size()); ++i)
      if (e.hypotheses[i].acoustic_score > e.hypotheses[best].acoustic_score) best = i;
    out.push_back(best);
  }
  return out;
}

std::vector<int> OracleChoice(std::span<const NBestEntry> entries) {
  std::vector<int> out;
  for (const auto& e : entries) {
    int best = 0, best_errors = -1;
    if (e.reference) {
      const auto ref = Tokenize(*e.reference);
      for (int i = 0; i < int(e.hypotheses.size()) && !ref.empty(); ++i) {
        const auto hyp = Tokenize(e.hypotheses[i].text);
        const int errors = Align(std::span<const std::string>(ref), std::span<const std::string>(hyp)).errors();
        if (best_errors < 0 || errors < best_errors) best = i, best_errors = errors;
      }
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace ctxlm
