// tools/cli.cc

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

#include "cli.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>

#include "CLI11.hpp"
#include "ctxlm/checkpoint.h"
#include "ctxlm/corpus.h"
#include "ctxlm/errors.h"
#include "ctxlm/metrics.h"
#include "ctxlm/rescore.h"
#include "ctxlm/synthetic.h"
#include "ctxlm/trainer.h"
#include "json.hpp"

#ifndef CTXLM_DATA_DIR
#define CTXLM_DATA_DIR "data"
#endif

namespace ctxlm::cli {

namespace {

using nlohmann::json;

/// Non-finite value in a result that should have been finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

std::string DefaultStopwords() {
  if (const char* dir = std::getenv("CTXLM_DATA_DIR")) return std::string(dir) + "/stopwords_en.txt";
  return std::string(CTXLM_DATA_DIR) + "/stopwords_en.txt";
}

json ReadJsonFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::ofstream OpenOutput(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot open for writing");
  return out;
}

void CheckFinite(double x, const std::string& what) {
  if (!std::isfinite(x)) throw NumericError(what + " is not finite");
}

std::string FormatP(double p) {
  if (p < kMinReportedPValue) return "<1e-12";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", p);
  return buf;
}

json ToJson(const CorpusWer& w) {
  return {{"errors", w.errors}, {"reference_words", w.reference_words}, {"utterances", w.utterances},
          {"wer", w.wer}};
}

json ToJson(const MapssweResult& m) {
  json z = std::isfinite(m.z) ? json(m.z) : json(m.z > 0 ? "inf" : "-inf");
  return {{"z", z},
          {"p_value", m.p_value},
          {"p_value_text", FormatP(m.p_value)},
          {"mean_difference", m.mean_difference},
          {"stddev", m.stddev},
          {"segments", m.segments}};
}

json ToJson(const EvaluationReport& r) {
  json j = {{"wer", ToJson(r.wer)},
            {"baseline_wer", ToJson(r.baseline_wer)},
            {"content_wer", ToJson(r.content_wer)},
            {"baseline_content_wer", ToJson(r.baseline_content_wer)}};
  if (r.werr) j["werr"] = *r.werr;
  if (r.cwerr) j["cwerr"] = *r.cwerr;
  if (r.ppl) j["ppl"] = *r.ppl;
  if (r.baseline_ppl) j["baseline_ppl"] = *r.baseline_ppl;
  if (r.pplr) j["pplr"] = *r.pplr;
  if (r.significance) j["significance"] = ToJson(*r.significance);
  return j;
}

json ToJson(const AlignmentResult& a) {
  return {{"substitutions", a.substitutions}, {"insertions", a.insertions},
          {"deletions", a.deletions}, {"reference_length", a.reference_length}};
}

std::optional<DomainEmbeddingTable> LoadTable(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return DomainEmbeddingTable::Load(path);
}

/// Domain table for `model`, checked against the width it consumes.
const DomainEmbeddingTable* TableFor(const LanguageModel& model,
                                     const std::optional<DomainEmbeddingTable>& table) {
  const int need = model.mlm_input_dim();
  if (need == 0) return nullptr;
  if (!table) throw UsageError("the model consumes domain embeddings; pass --embeddings");
  if (table->dim() != need)
    throw DataError("embedding table has width " + std::to_string(table->dim()) + ", the model expects " +
                    std::to_string(need));
  return &*table;
}

json ParseOverride(const std::string& text) {
  if (text.empty()) return json::object();
  try {
    json j = json::parse(text);
    if (!j.is_object()) throw UsageError("--model-override must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("--model-override: ") + e.what());
  }
}

std::vector<Session> Render(std::span<const Dialogue> dialogues, const Vocabulary& vocab,
                            const ContextOptions& options) {
  std::vector<Session> out;
  out.reserve(dialogues.size());
  for (const auto& d : dialogues) out.push_back(ConcatenateSession(d, vocab, options));
  return out;
}

ContextOptions ParseContextFields(const std::string& s) {
  ContextOptions c{false, false};
  if (s == "none") return c;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t comma = std::min(s.find(',', start), s.size());
    const std::string f = s.substr(start, comma - start);
    if (f == "da")
      c.dialogue_act = true;
    else if (f == "br")
      c.bot_response = true;
    else
      throw UsageError("--context-fields: expected a list of da and br, or none; got '" + s + "'");
    start = comma + 1;
  }
  return c;
}

// Reference and hypothesis transcripts: one JSON object per line with
// "utterance_id" and "text".  Reference files may use "reference" instead,
// so an N-best file doubles as a reference list.
std::vector<std::pair<std::string, std::string>> LoadTranscripts(const std::string& path, bool reference) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open");
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> seen;
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where + e.what());
    }
    if (!j.is_object() || !j.contains("utterance_id") || !j["utterance_id"].is_string())
      throw DataError(where + "expected an object with a string utterance_id");
    const char* key = j.contains("text") || !reference ? "text" : "reference";
    if (!j.contains(key) || !j[key].is_string()) throw DataError(where + "missing string field '" + key + "'");
    std::string id = j["utterance_id"];
    if (!seen.insert(id).second) throw DataError(where + "duplicate utterance_id '" + id + "'");
    out.emplace_back(std::move(id), j[key].get<std::string>());
  }
  if (out.empty()) throw DataError(path + ": no transcripts");
  return out;
}

SystemEvaluation EvaluateTranscripts(const std::vector<std::pair<std::string, std::string>>& refs,
                                     const std::vector<std::pair<std::string, std::string>>& hyps,
                                     const std::string& hyp_path, const StopwordSet& stopwords) {
  std::map<std::string, const std::string*> by_id;
  for (const auto& [id, text] : hyps) by_id[id] = &text;
  std::set<std::string> ref_ids;
  SystemEvaluation e;
  for (const auto& [id, text] : refs) {
    ref_ids.insert(id);
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError(hyp_path + ": no hypothesis for utterance '" + id + "'");
    const auto r = Tokenize(text), h = Tokenize(*it->second);
    if (r.empty()) throw DataError("empty reference for utterance '" + id + "'");
    e.word.push_back(Align(std::span<const std::string>(r), std::span<const std::string>(h)));
    e.content.push_back(ContentAlign(r, h, stopwords));
  }
  for (const auto& [id, text] : hyps)
    if (!ref_ids.count(id)) throw DataError(hyp_path + ": utterance '" + id + "' has no reference");
  return e;
}

// ---------------------------------------------------------------- prepare

struct PrepareArgs {
  std::string out_dir;
  int dialogues = 2000, min_turns = 4, max_turns = 8;
  std::vector<std::string> domains = {"bank", "travel"};
  std::uint64_t seed = 1;
  double valid_fraction = 0.1, test_fraction = 0.1;
  int hypotheses = 5;
  double second_best_fraction = 0.4, lower_fraction = 0.1;
  int embedding_dim = 16;
  int vocab_size = 10000;
};

json RankSummary(std::span<const NBestEntry> entries) {
  int counts[3] = {0, 0, 0};
  for (const auto& e : entries)
    for (std::size_t k = 0; k < e.hypotheses.size(); ++k)
      if (e.hypotheses[k].text == *e.reference) {
        ++counts[std::min<std::size_t>(k, 2)];
        break;
      }
  const double n = std::max<std::size_t>(entries.size(), 1);
  return {{"entries", entries.size()},
          {"reference_first", counts[0] / n},
          {"reference_second", counts[1] / n},
          {"reference_lower", counts[2] / n}};
}

json Prepare(const PrepareArgs& a, std::ostream& err) {
  if (a.valid_fraction < 0 || a.test_fraction < 0 || a.valid_fraction + a.test_fraction >= 1.0)
    throw UsageError("valid and test fractions must be non-negative and sum below 1");
  SyntheticCorpusConfig sc;
  sc.dialogues = a.dialogues;
  sc.min_turns = a.min_turns;
  sc.max_turns = a.max_turns;
  sc.domains = a.domains;
  sc.seed = a.seed;
  const auto all = GenerateDialogues(sc);
  const int n = int(all.size());
  const int n_valid = int(std::lround(n * a.valid_fraction)), n_test = int(std::lround(n * a.test_fraction));
  const int n_train = n - n_valid - n_test;
  if (n_train <= 0 || n_valid <= 0 || n_test <= 0) throw UsageError("too few dialogues for the split");
  std::span<const Dialogue> span(all);
  const auto train = span.subspan(0, n_train), valid = span.subspan(n_train, n_valid),
             test = span.subspan(n_train + n_valid);

  std::error_code ec;
  std::filesystem::create_directories(a.out_dir, ec);
  if (ec) throw DataError(a.out_dir + ": " + ec.message());
  const std::filesystem::path dir(a.out_dir);
  auto path = [&](const char* name) { return (dir / name).string(); };
  SaveDialogues(path("train.jsonl"), train);
  SaveDialogues(path("valid.jsonl"), valid);
  SaveDialogues(path("test.jsonl"), test);
  std::vector<std::string> domains = a.domains;
  SyntheticDomainTable(domains, a.embedding_dim, a.seed).Save(path("domains.json"));

  NBestFixtureConfig nb;
  nb.hypotheses = a.hypotheses;
  nb.second_best_fraction = a.second_best_fraction;
  nb.lower_fraction = a.lower_fraction;
  nb.seed = a.seed;
  const auto nbest_valid = GenerateNBest(valid, nb);
  nb.seed = a.seed + 1;
  const auto nbest_test = GenerateNBest(test, nb);
  SaveNBest(path("nbest_valid.jsonl"), nbest_valid);
  SaveNBest(path("nbest_test.jsonl"), nbest_test);
  err << "wrote " << n << " dialogues and " << nbest_valid.size() + nbest_test.size() << " n-best lists to "
      << a.out_dir << "\n";

  const Vocabulary vocab = Vocabulary::Build(train, a.vocab_size);
  return {{"dialogues", {{"train", n_train}, {"valid", n_valid}, {"test", n_test}}},
          {"vocabulary_size", vocab.size()},
          {"embedding_dim", a.embedding_dim},
          {"nbest", {{"valid", RankSummary(nbest_valid)}, {"test", RankSummary(nbest_test)}}},
          {"files",
           {{"train", path("train.jsonl")},
            {"valid", path("valid.jsonl")},
            {"test", path("test.jsonl")},
            {"embeddings", path("domains.json")},
            {"nbest_valid", path("nbest_valid.jsonl")},
            {"nbest_test", path("nbest_test.jsonl")}}}};
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string train, valid, output, embeddings, log;
  std::string family = "lstm";
  int vocab_size = 10000;
  // Architecture; only the flags given are applied over the family defaults.
  int layers = 0, hidden_size = 0, embed_size = 0, d_model = 0, heads = 0, ffn_size = 0;
  int segment_length = 0, memory_length = 0;
  std::string augmentation, context_fields, fusion;
  bool domain_embedding = false, carry_over = false;
  TrainingConfig training;
};

json ModelJson(const CLI::App& sub, const TrainArgs& a, ModelFamily family) {
  json j = json::object();
  const bool lstm = family == ModelFamily::kLstm;
  auto set = [&](const char* flag, const char* key, const json& value, bool applies) {
    if (!sub.count(flag)) return;
    if (!applies)
      throw UsageError(std::string(flag) + " does not apply to the " + std::string(FamilyName(family)) +
                       " family");
    j[key] = value;
  };
  set("--layers", "num_layers", a.layers, true);
  set("--hidden-size", "hidden_size", a.hidden_size, lstm);
  set("--embed-size", "embed_size", a.embed_size, lstm);
  set("--augmentation", "augmentation", a.augmentation, lstm);
  set("--domain-embedding", "use_mlm_embedding", a.domain_embedding, lstm);
  set("--carry-over", "carry_over", a.carry_over, lstm);
  set("--d-model", "d_model", a.d_model, !lstm);
  set("--heads", "num_heads", a.heads, !lstm);
  set("--ffn-size", "ffn_size", a.ffn_size, !lstm);
  set("--segment-length", "segment_length", a.segment_length, !lstm);
  set("--memory-length", "memory_length", a.memory_length, !lstm);
  set("--fusion", "fusion", a.fusion, !lstm);
  if (sub.count("--context-fields")) j["context"] = ToJson(ParseContextFields(a.context_fields));
  return j;
}

json ToJson(const TrainingConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"warmup_steps", c.warmup_steps}, {"clip_norm", c.clip_norm},
          {"batch_size", c.batch_size},       {"max_epochs", c.max_epochs},     {"patience", c.patience},
          {"max_steps", c.max_steps},         {"truncation", c.truncation},     {"shuffle", c.shuffle},
          {"seed", c.seed}};
}

json TrainCommand(const CLI::App& sub, const TrainArgs& a, std::ostream& err) {
  a.training.Validate();
  const ModelFamily family = ParseFamily(a.family);
  json config = ModelJson(sub, a, family);
  // Load every input before any compute.
  const auto train = LoadDialogues(a.train);
  const auto valid = LoadDialogues(a.valid);
  const auto table = LoadTable(a.embeddings);
  const Vocabulary vocab = Vocabulary::Build(train, a.vocab_size);
  config["vocab_size"] = vocab.size();
  const bool wants_mlm = family == ModelFamily::kLstm ? config.value("use_mlm_embedding", false)
                                                      : config.value("fusion", std::string("none")) != "none";
  if (wants_mlm) {
    if (!table) throw UsageError("the model consumes domain embeddings; pass --embeddings");
    config["mlm_dim"] = table->dim();
  } else if (table) {
    err << "note: the model takes no domain embedding; --embeddings is unused\n";
  }
  auto model = MakeModel(family, config, a.training.seed);
  const auto* domains = TableFor(*model, table);
  const auto train_s = Render(train, vocab, model->context_options());
  const auto valid_s = Render(valid, vocab, model->context_options());

  std::ofstream log;
  TrainingHooks hooks;
  hooks.progress = &err;
  if (!a.log.empty()) {
    log = OpenOutput(a.log);
    hooks.log = &log;
  }
  err << "training " << a.family << " on " << train.size() << " dialogues, vocabulary " << vocab.size() << "\n";
  const TrainingResult r = Train(*model, train_s, valid_s, domains, a.training, hooks);
  CheckFinite(r.best_valid_ppl, "validation perplexity");

  json epochs = json::array();
  for (const auto& e : r.epochs)
    epochs.push_back(
        {{"epoch", e.epoch}, {"train_nll", e.train_nll}, {"valid_nll", e.valid_nll}, {"valid_ppl", e.valid_ppl}});
  json metadata = {{"training", ToJson(a.training)},
                   {"best_epoch", r.best_epoch},
                   {"best_valid_ppl", r.best_valid_ppl}};
  SaveCheckpoint(a.output, *model, vocab, a.training.seed, metadata);
  return {{"checkpoint", a.output},
          {"family", a.family},
          {"config", ModelConfigJson(*model)},
          {"parameters", model->parameters().ParameterCount()},
          {"vocabulary_size", vocab.size()},
          {"best_epoch", r.best_epoch},
          {"best_valid_ppl", r.best_valid_ppl},
          {"steps", r.steps},
          {"skipped_windows", r.skipped_windows},
          {"epochs", epochs}};
}

// ---------------------------------------------------------------- ppl

struct PplArgs {
  std::string model, corpus, embeddings, model_override;
  int batch_size = 16;
};

json PplCommand(const PplArgs& a, std::ostream& err) {
  const auto ck = LoadCheckpoint(a.model, ParseOverride(a.model_override));
  const auto corpus = LoadDialogues(a.corpus);
  const auto table = LoadTable(a.embeddings);
  const auto* domains = TableFor(*ck.model, table);
  err << "scoring " << corpus.size() << " dialogues\n";
  const auto sessions = Render(corpus, ck.vocab, ck.model->context_options());
  const auto r = Perplexity(*ck.model, sessions, domains, a.batch_size);
  CheckFinite(r.ppl, "perplexity");
  return {{"ppl", r.ppl}, {"nll", r.nll}, {"targets", r.targets}, {"dialogues", corpus.size()}};
}

// ---------------------------------------------------------------- rescore

struct RescoreArgs {
  std::string model, nbest, dialogues, embeddings, output, model_override;
  std::string stopwords = DefaultStopwords();
  std::string context = "onebest";
  double acoustic_scale = 1.0;
  int jobs = 1;
};

struct RescoreInputs {
  Checkpoint ck;
  std::vector<NBestEntry> entries;
  std::vector<Dialogue> dialogues;
  std::optional<DomainEmbeddingTable> table;
  StopwordSet stopwords;
  RescoreOptions options;
};

RescoreInputs LoadRescoreInputs(const RescoreArgs& a) {
  RescoreInputs in{LoadCheckpoint(a.model, ParseOverride(a.model_override)), LoadNBest(a.nbest), {}, {}, {}, {}};
  if (!a.dialogues.empty()) in.dialogues = LoadDialogues(a.dialogues);
  in.table = LoadTable(a.embeddings);
  in.stopwords = LoadStopwords(a.stopwords);
  if (a.context == "onebest")
    in.options.context = ContextSource::kOneBest;
  else if (a.context == "reference")
    in.options.context = ContextSource::kReference;
  else
    throw UsageError("--context must be onebest or reference");
  if (a.jobs < 1) throw UsageError("--jobs must be at least 1");
  in.options.jobs = a.jobs;
  in.options.acoustic_scale = a.acoustic_scale;
  return in;
}

/// Entries that carry a reference, with their positions.
std::vector<std::size_t> Referenced(std::span<const NBestEntry> entries) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].reference) out.push_back(i);
  return out;
}

template <typename T>
std::vector<T> Pick(const std::vector<T>& v, const std::vector<std::size_t>& at) {
  std::vector<T> out;
  for (auto i : at) out.push_back(v[i]);
  return out;
}

json RescoreCommand(const RescoreArgs& a, std::ostream& err) {
  RescoreInputs in = LoadRescoreInputs(a);
  const auto* domains = TableFor(*in.ck.model, in.table);
  if (in.options.context == ContextSource::kReference)
    for (const auto& e : in.entries)
      if (!e.reference) throw DataError(a.nbest + ": reference context needs a reference on every entry");
  err << "rescoring " << in.entries.size() << " n-best lists with " << in.options.jobs << " job(s)\n";
  const auto rescored = RescoreCorpus(*in.ck.model, in.ck.vocab, in.dialogues, in.entries, domains, in.options);
  for (const auto& r : rescored)
    for (const auto& h : r.ranking) CheckFinite(h.combined, "score of " + r.utterance_id);

  if (!a.output.empty()) {
    auto out = OpenOutput(a.output);
    for (std::size_t i = 0; i < rescored.size(); ++i) {
      const auto& r = rescored[i];
      json scores = json::array();
      for (const auto& h : r.ranking)
        scores.push_back({{"index", h.index}, {"acoustic", h.acoustic}, {"lm", h.lm}, {"combined", h.combined}});
      out << json({{"utterance_id", r.utterance_id},
                   {"text", in.entries[i].hypotheses[r.best()].text},
                   {"index", r.best()},
                   {"scores", scores}})
                 .dump()
          << "\n";
    }
  }

  json result = {{"entries", rescored.size()},
                 {"acoustic_scale", a.acoustic_scale},
                 {"context", a.context}};
  if (!a.output.empty()) result["output"] = a.output;
  const auto at = Referenced(in.entries);
  if (at.empty()) {
    err << "no references; skipping the WER report\n";
    return result;
  }
  std::vector<int> chosen;
  for (const auto& r : rescored) chosen.push_back(r.best());
  const auto entries = Pick(in.entries, at);
  const auto rescored_eval = EvaluateChoices(entries, Pick(chosen, at), in.stopwords);
  const auto baseline_eval = EvaluateChoices(entries, AcousticOneBest(entries), in.stopwords);
  const auto oracle_eval = EvaluateChoices(entries, OracleChoice(entries), in.stopwords);
  result["report"] = ToJson(AggregateReport(rescored_eval, baseline_eval));
  result["oracle_wer"] = ToJson(PooledWer(oracle_eval.word));
  result["oracle_content_wer"] = ToJson(PooledWer(oracle_eval.content));
  return result;
}

// ---------------------------------------------------------------- sweep-scale

struct SweepArgs {
  RescoreArgs rescore;
  std::vector<double> grid = {0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0, 1.5, 2.0, 3.0};
};

json SweepCommand(const SweepArgs& a, std::ostream& err) {
  if (a.grid.empty()) throw UsageError("--grid is empty");
  for (double s : a.grid)
    if (!(s >= 0.0) || !std::isfinite(s)) throw UsageError("--grid values must be finite and non-negative");
  RescoreInputs in = LoadRescoreInputs(a.rescore);
  const auto* domains = TableFor(*in.ck.model, in.table);
  const auto at = Referenced(in.entries);
  if (at.empty()) throw DataError(a.rescore.nbest + ": the sweep needs references");
  const auto entries = Pick(in.entries, at);
  json grid = json::array();
  std::optional<std::pair<double, double>> best;  // (wer, scale)
  for (double scale : a.grid) {
    in.options.acoustic_scale = scale;
    const auto rescored = RescoreCorpus(*in.ck.model, in.ck.vocab, in.dialogues, entries, domains, in.options);
    std::vector<int> chosen;
    for (const auto& r : rescored) chosen.push_back(r.best());
    const auto eval = EvaluateChoices(entries, chosen, in.stopwords);
    const double wer = PooledWer(eval.word).wer, cwer = PooledWer(eval.content).wer;
    err << "scale " << scale << ": wer " << wer << "\n";
    grid.push_back({{"acoustic_scale", scale}, {"wer", wer}, {"content_wer", cwer}});
    if (!best || wer < best->first) best = {wer, scale};
  }
  const auto baseline = EvaluateChoices(entries, AcousticOneBest(entries), in.stopwords);
  return {{"best_scale", best->second},
          {"best_wer", best->first},
          {"acoustic_one_best_wer", PooledWer(baseline.word).wer},
          {"entries", entries.size()},
          {"grid", grid}};
}

// ---------------------------------------------------------------- wer / significance

struct WerArgs {
  std::string ref, hyp;
  std::string stopwords = DefaultStopwords();
};

json WerCommand(const WerArgs& a) {
  const auto refs = LoadTranscripts(a.ref, true);
  const auto hyps = LoadTranscripts(a.hyp, false);
  const auto stop = LoadStopwords(a.stopwords);
  const auto eval = EvaluateTranscripts(refs, hyps, a.hyp, stop);
  AlignmentResult total;
  for (const auto& w : eval.word) {
    total.substitutions += w.substitutions;
    total.insertions += w.insertions;
    total.deletions += w.deletions;
    total.reference_length += w.reference_length;
  }
  json j = ToJson(PooledWer(eval.word));
  j.update(ToJson(total));
  j["content"] = ToJson(PooledWer(eval.content));
  return j;
}

struct SignificanceArgs {
  std::string ref, baseline, candidate;
  std::string stopwords = DefaultStopwords();
};

json SignificanceCommand(const SignificanceArgs& a) {
  const auto refs = LoadTranscripts(a.ref, true);
  if (refs.size() < 2) throw DataError(a.ref + ": the test needs at least two utterances");
  const auto stop = LoadStopwords(a.stopwords);
  const auto base = EvaluateTranscripts(refs, LoadTranscripts(a.baseline, false), a.baseline, stop);
  const auto cand = EvaluateTranscripts(refs, LoadTranscripts(a.candidate, false), a.candidate, stop);
  return ToJson(AggregateReport(cand, base));
}

// ---------------------------------------------------------------- sample

struct SampleArgs {
  std::string model, embeddings, prompt, bot_act, bot_response, domain, model_override;
  SampleOptions options;
};

json SampleCommand(const CLI::App& sub, const SampleArgs& a) {
  const auto ck = LoadCheckpoint(a.model, ParseOverride(a.model_override));
  const auto table = LoadTable(a.embeddings);
  const auto* domains = TableFor(*ck.model, table);
  const Vocabulary& vocab = ck.vocab;
  std::vector<int> prompt;
  TurnConditioning cond;
  if (sub.count("--bot-act") || sub.count("--bot-response")) {
    DialogueTurn bot;
    bot.actor = Actor::kBot;
    bot.text = a.bot_response;
    if (sub.count("--bot-act")) bot.dialogue_act = NormalizeDialogueAct(a.bot_act);
    prompt = BotTurnTokens(bot, vocab, ck.model->context_options());
    cond.context = TagBotTurn(bot, vocab, ck.model->context_options());
  }
  prompt.push_back(vocab.sos());
  for (int id : vocab.Encode(a.prompt)) prompt.push_back(id);
  if (domains) {
    if (a.domain.empty()) throw UsageError("the model consumes a domain embedding; pass --domain");
    if (!domains->Find(a.domain)) throw DataError("domain '" + a.domain + "' is not in the embedding table");
  }
  cond.mlm = DomainVector(domains, a.domain, ck.model->mlm_input_dim());
  const auto ids = Sample(*ck.model, prompt, cond, a.options);
  const bool ended = !ids.empty() && ids.back() == vocab.eos();
  std::vector<int> words(ids.begin(), ids.end() - (ended ? 1 : 0));
  return {{"text", vocab.Decode(words)}, {"tokens", ids}, {"ended", ended}};
}

// ---------------------------------------------------------------- driver

const std::vector<std::string> kSubcommands = {"prepare", "train",        "ppl",    "rescore",
                                               "wer",     "significance", "sample", "sweep-scale"};

/// Flag tokens for the keys of a JSON config, to be placed before the
/// command-line flags so that those win.  Top-level scalar keys apply to the
/// subcommand; an object under the subcommand's name is applied on top.
std::vector<std::string> ConfigTokens(const json& config, const std::string& subcommand,
                                      const std::string& path) {
  if (!config.is_object()) throw UsageError(path + ": config must be a JSON object");
  std::vector<std::string> out;
  auto add = [&](const std::string& key, const json& v) {
    out.push_back("--" + key);
    auto scalar = [&](const json& x) {
      if (x.is_string()) return x.get<std::string>();
      if (x.is_boolean()) return std::string(x.get<bool>() ? "true" : "false");
      if (x.is_number()) return x.dump();
      throw UsageError(path + ": unsupported value for '" + key + "'");
    };
    if (v.is_array()) {
      std::string joined;
      for (const auto& x : v) joined += (joined.empty() ? "" : ",") + scalar(x);
      out.push_back(joined);
    } else {
      out.push_back(scalar(v));
    }
  };
  for (const auto& [key, v] : config.items())
    if (!v.is_object()) add(key, v);
  if (config.contains(subcommand) && config[subcommand].is_object())
    for (const auto& [key, v] : config[subcommand].items()) add(key, v);
  for (const auto& [key, v] : config.items())
    if (v.is_object() && std::find(kSubcommands.begin(), kSubcommands.end(), key) == kSubcommands.end())
      throw UsageError(path + ": unknown section '" + key + "'");
  return out;
}

void AddRescoreOptions(CLI::App* s, RescoreArgs& a) {
  s->add_option("--model", a.model, "checkpoint")->required();
  s->add_option("--nbest", a.nbest, "N-best list (.jsonl)")->required();
  s->add_option("--dialogues", a.dialogues, "dialogues supplying bot turns and unlisted user turns");
  s->add_option("--embeddings", a.embeddings, "domain embedding table");
  s->add_option("--context", a.context, "onebest or reference")->capture_default_str();
  s->add_option("--stopwords", a.stopwords, "stopword list")->capture_default_str();
  s->add_option("--jobs", a.jobs, "worker threads")->capture_default_str();
  s->add_option("--model-override", a.model_override, "JSON merged into the stored model config");
}

}  // namespace

int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contextual neural language models for dialogue ASR rescoring", "ctxlm"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  std::string config_path;
  auto config_opt = [&](CLI::App* s) { s->add_option("--config", config_path, "JSON config; flags win"); };

  PrepareArgs prep;
  CLI::App* s_prep = app.add_subcommand("prepare", "generate the synthetic corpus, domain table and N-best fixture");
  config_opt(s_prep);
  s_prep->add_option("--out-dir", prep.out_dir)->required();
  s_prep->add_option("--dialogues", prep.dialogues)->capture_default_str();
  s_prep->add_option("--min-turns", prep.min_turns)->capture_default_str();
  s_prep->add_option("--max-turns", prep.max_turns)->capture_default_str();
  s_prep->add_option("--domains", prep.domains)->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  s_prep->add_option("--seed", prep.seed)->capture_default_str();
  s_prep->add_option("--valid-fraction", prep.valid_fraction)->capture_default_str();
  s_prep->add_option("--test-fraction", prep.test_fraction)->capture_default_str();
  s_prep->add_option("--hypotheses", prep.hypotheses)->capture_default_str();
  s_prep->add_option("--second-best-fraction", prep.second_best_fraction)->capture_default_str();
  s_prep->add_option("--lower-fraction", prep.lower_fraction)->capture_default_str();
  s_prep->add_option("--embedding-dim", prep.embedding_dim)->capture_default_str();
  s_prep->add_option("--vocab-size", prep.vocab_size)->capture_default_str();

  TrainArgs tr;
  CLI::App* s_train = app.add_subcommand("train", "train a model and write a checkpoint");
  config_opt(s_train);
  s_train->add_option("--train", tr.train, "training dialogues (.jsonl)")->required();
  s_train->add_option("--valid", tr.valid, "validation dialogues (.jsonl)")->required();
  s_train->add_option("--output", tr.output, "checkpoint path")->required();
  s_train->add_option("--family", tr.family, "lstm or txl")->capture_default_str();
  s_train->add_option("--embeddings", tr.embeddings, "domain embedding table");
  s_train->add_option("--log", tr.log, "per-epoch JSONL log");
  s_train->add_option("--vocab-size", tr.vocab_size, "vocabulary cap")->capture_default_str();
  s_train->add_option("--layers", tr.layers);
  s_train->add_option("--hidden-size", tr.hidden_size);
  s_train->add_option("--embed-size", tr.embed_size);
  s_train->add_option("--augmentation", tr.augmentation, "none, avg or attention");
  s_train->add_option("--context-fields", tr.context_fields, "bot-turn fields in the context: da,br | da | br | none");
  s_train->add_option("--domain-embedding", tr.domain_embedding, "LSTM: feed the domain embedding");
  s_train->add_option("--carry-over", tr.carry_over, "LSTM: carry state across turns");
  s_train->add_option("--d-model", tr.d_model);
  s_train->add_option("--heads", tr.heads);
  s_train->add_option("--ffn-size", tr.ffn_size);
  s_train->add_option("--segment-length", tr.segment_length);
  s_train->add_option("--memory-length", tr.memory_length);
  s_train->add_option("--fusion", tr.fusion, "none, early, simple or cold");
  s_train->add_option("--lr", tr.training.learning_rate)->capture_default_str();
  s_train->add_option("--warmup", tr.training.warmup_steps)->capture_default_str();
  s_train->add_option("--clip", tr.training.clip_norm)->capture_default_str();
  s_train->add_option("--batch-size", tr.training.batch_size)->capture_default_str();
  s_train->add_option("--epochs", tr.training.max_epochs)->capture_default_str();
  s_train->add_option("--patience", tr.training.patience)->capture_default_str();
  s_train->add_option("--max-steps", tr.training.max_steps)->capture_default_str();
  s_train->add_option("--truncation", tr.training.truncation)->capture_default_str();
  s_train->add_option("--shuffle", tr.training.shuffle)->capture_default_str();
  s_train->add_option("--seed", tr.training.seed)->capture_default_str();

  PplArgs pp;
  CLI::App* s_ppl = app.add_subcommand("ppl", "perplexity of a checkpoint on a corpus");
  config_opt(s_ppl);
  s_ppl->add_option("--model", pp.model)->required();
  s_ppl->add_option("--corpus", pp.corpus)->required();
  s_ppl->add_option("--embeddings", pp.embeddings);
  s_ppl->add_option("--batch-size", pp.batch_size)->capture_default_str();
  s_ppl->add_option("--model-override", pp.model_override, "JSON merged into the stored model config");

  RescoreArgs rs;
  CLI::App* s_rescore = app.add_subcommand("rescore", "rescore N-best lists in dialogue context");
  config_opt(s_rescore);
  AddRescoreOptions(s_rescore, rs);
  s_rescore->add_option("--acoustic-scale", rs.acoustic_scale)->capture_default_str();
  s_rescore->add_option("--output", rs.output, "chosen hypotheses (.jsonl)");

  SweepArgs sw;
  CLI::App* s_sweep = app.add_subcommand("sweep-scale", "grid-search the acoustic scale by WER");
  config_opt(s_sweep);
  AddRescoreOptions(s_sweep, sw.rescore);
  s_sweep->add_option("--grid", sw.grid)->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  WerArgs we;
  CLI::App* s_wer = app.add_subcommand("wer", "word and content-word error rate");
  config_opt(s_wer);
  s_wer->add_option("--ref", we.ref)->required();
  s_wer->add_option("--hyp", we.hyp)->required();
  s_wer->add_option("--stopwords", we.stopwords)->capture_default_str();

  SignificanceArgs sg;
  CLI::App* s_sig = app.add_subcommand("significance", "MAPSSWE test between two systems");
  config_opt(s_sig);
  s_sig->add_option("--ref", sg.ref)->required();
  s_sig->add_option("--baseline", sg.baseline)->required();
  s_sig->add_option("--candidate", sg.candidate)->required();
  s_sig->add_option("--stopwords", sg.stopwords)->capture_default_str();

  SampleArgs sa;
  CLI::App* s_sample = app.add_subcommand("sample", "continue a user turn");
  config_opt(s_sample);
  s_sample->add_option("--model", sa.model)->required();
  s_sample->add_option("--prompt", sa.prompt, "start of the user turn");
  s_sample->add_option("--bot-act", sa.bot_act, "dialogue act of the preceding bot turn");
  s_sample->add_option("--bot-response", sa.bot_response, "text of the preceding bot turn");
  s_sample->add_option("--domain", sa.domain);
  s_sample->add_option("--embeddings", sa.embeddings);
  s_sample->add_option("--temperature", sa.options.temperature, "0 is greedy")->capture_default_str();
  s_sample->add_option("--max-length", sa.options.max_length)->capture_default_str();
  s_sample->add_option("--seed", sa.options.seed)->capture_default_str();
  s_sample->add_option("--model-override", sa.model_override);

  // The subcommand comes first; config-file flags go in front of the
  // command-line ones.
  std::vector<std::string> tokens = args;
  try {
    if (!tokens.empty() && std::find(kSubcommands.begin(), kSubcommands.end(), tokens[0]) != kSubcommands.end()) {
      std::string path;
      for (std::size_t i = 1; i < tokens.size(); ++i) {
        if (tokens[i] == "--config" && i + 1 < tokens.size()) path = tokens[i + 1];
        if (tokens[i].rfind("--config=", 0) == 0) path = tokens[i].substr(9);
      }
      if (!path.empty()) {
        json config;
        try {
          config = ReadJsonFile(path);
        } catch (const DataError& e) {
          err << "error: " << e.what() << "\n";
          return kUsage;
        }
        auto extra = ConfigTokens(config, tokens[0], path);
        tokens.insert(tokens.begin() + 1, extra.begin(), extra.end());
      }
    }
    std::vector<std::string> reversed(tokens.rbegin(), tokens.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    json result;
    if (*s_prep) result = Prepare(prep, err);
    else if (*s_train) result = TrainCommand(*s_train, tr, err);
    else if (*s_ppl) result = PplCommand(pp, err);
    else if (*s_rescore) result = RescoreCommand(rs, err);
    else if (*s_sweep) result = SweepCommand(sw, err);
    else if (*s_wer) result = WerCommand(we);
    else if (*s_sig) result = SignificanceCommand(sg);
    else if (*s_sample) result = SampleCommand(*s_sample, sa);
    out << result.dump(2) << "\n";
    return kOk;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  } catch (const TrainingFailure& e) {
    err << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
}

}  // namespace ctxlm::cli
