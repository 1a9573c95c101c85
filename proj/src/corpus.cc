// ctxlm/corpus.cc

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

#include "ctxlm/corpus.h"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ctxlm/errors.h"
#include "json.hpp"

namespace ctxlm {

using json = nlohmann::json;

std::string_view ActorName(Actor a) { return a == Actor::kUser ? "user" : "bot"; }

namespace {

const std::map<std::string, std::string, std::less<>>& ActTable() {
  // "offerbook" is listed under both confirm and offer; it goes to offer.
  static const std::map<std::string, std::string, std::less<>> table = {
      {"confirm", "confirm"},
      {"recommend", "confirm"},
      {"inform", "inform"},
      {"inform_count", "inform"},
      {"offer", "offer"},
      {"offerbook", "offer"},
      {"offer_intent", "offer"},
      {"select", "offer"},
      {"request", "request"},
      {"general-bye", "general-bye"},
      {"goodbye", "general-bye"},
      {"general-welcome", "general-welcome"},
      {"general-reqmore", "general-reqmore"},
  };
  return table;
}

bool Detached(unsigned char c) {
  if (c >= 0x80) return false;  // leave UTF-8 bytes alone
  if (!std::ispunct(c)) return false;
  return c != '\'' && c != '-' && c != '_' && c != '<' && c != '>';
}

}  // namespace

std::string NormalizeDialogueAct(std::string_view raw) {
  std::string folded(raw);
  for (char& c : folded) c = char(std::tolower(static_cast<unsigned char>(c)));
  const auto& table = ActTable();
  auto it = table.find(folded);
  if (it == table.end()) throw UnknownDialogueActError(std::string(raw));
  return it->second;
}

const std::vector<std::string>& NormalizedDialogueActs() {
  static const std::vector<std::string> acts = [] {
    std::set<std::string> s;
    for (const auto& [raw, norm] : ActTable()) s.insert(norm);
    return std::vector<std::string>(s.begin(), s.end());
  }();
  return acts;
}

std::vector<std::string> Tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (Detached(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(c < 0x80 ? char(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

std::string Detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() {
  for (std::string_view s : {kUnk, kSos, kEos, kDialogAct, kBotResponse}) {
    index_.emplace(std::string(s), int(tokens_.size()));
    tokens_.emplace_back(s);
  }
}

Vocabulary Vocabulary::Build(std::span<const Dialogue> corpus, std::size_t max_size) {
  if (max_size < std::size_t(kNumSpecials))
    throw UsageError("vocabulary size " + std::to_string(max_size) + " below the " +
                     std::to_string(kNumSpecials) + " reserved specials");
  if (corpus.empty()) throw EmptyCorpusError("cannot build a vocabulary from an empty corpus");
  Vocabulary v;
  std::map<std::string, std::size_t> counts;
  for (const Dialogue& d : corpus) {
    for (const DialogueTurn& t : d.turns) {
      for (auto& tok : Tokenize(t.text)) ++counts[tok];
      if (t.actor == Actor::kBot && t.dialogue_act)
        for (auto& tok : Tokenize(*t.dialogue_act)) ++counts[tok];
    }
  }
  for (std::string_view s : {kUnk, kSos, kEos, kDialogAct, kBotResponse}) counts.erase(std::string(s));
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // counts is ordered by token, so a stable sort on frequency keeps the
  // lexicographic tie-break.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(ranked.size(), max_size - kNumSpecials);
  for (std::size_t i = 0; i < keep; ++i) {
    v.index_.emplace(ranked[i].first, int(v.tokens_.size()));
    v.tokens_.push_back(ranked[i].first);
  }
  return v;
}

Vocabulary Vocabulary::FromTokens(std::vector<std::string> tokens) {
  Vocabulary v;
  if (tokens.size() < std::size_t(kNumSpecials))
    throw DataError("vocabulary lacks the reserved specials");
  for (int i = 0; i < kNumSpecials; ++i)
    if (tokens[i] != v.tokens_[i])
      throw DataError("vocabulary special " + std::to_string(i) + " is '" + tokens[i] +
                      "', expected '" + v.tokens_[i] + "'");
  for (std::size_t i = kNumSpecials; i < tokens.size(); ++i) {
    if (!v.index_.emplace(tokens[i], int(v.tokens_.size())).second)
      throw DataError("duplicate vocabulary token '" + tokens[i] + "'");
    v.tokens_.push_back(std::move(tokens[i]));
  }
  return v;
}

int Vocabulary::Id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? unk() : it->second;
}

std::optional<int> Vocabulary::Find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::Token(int id) const {
  if (id < 0 || std::size_t(id) >= tokens_.size())
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(tokens_.size()));
  return tokens_[id];
}

std::vector<int> Vocabulary::Encode(std::string_view text) const {
  auto toks = Tokenize(text);
  return EncodeTokens(toks);
}

std::vector<int> Vocabulary::EncodeTokens(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(Id(t));
  return ids;
}

std::string Vocabulary::Decode(std::span<const int> ids) const {
  std::vector<std::string> toks;
  toks.reserve(ids.size());
  for (int id : ids) toks.push_back(Token(id));
  return Detokenize(toks);
}

// ---------------------------------------------------------------------------

std::vector<int> TagBotTurn(const DialogueTurn& bot, const Vocabulary& vocab,
                            const ContextOptions& options) {
  std::vector<int> out;
  if (options.dialogue_act) {
    out.push_back(vocab.dialog_act());
    if (bot.dialogue_act) {
      auto ids = vocab.Encode(*bot.dialogue_act);
      out.insert(out.end(), ids.begin(), ids.end());
    }
  }
  if (options.bot_response) {
    out.push_back(vocab.bot_response());
    auto ids = vocab.Encode(bot.text);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

std::vector<int> BuildContextSequence(const Dialogue& d, std::size_t turn_index,
                                      const Vocabulary& vocab, const ContextOptions& options) {
  if (turn_index >= d.turns.size())
    throw IndexError("turn index " + std::to_string(turn_index) + " outside dialogue '" + d.id +
                     "' of " + std::to_string(d.turns.size()) + " turns");
  if (d.turns[turn_index].actor != Actor::kUser)
    throw UsageError("turn " + std::to_string(turn_index) + " of dialogue '" + d.id +
                     "' is a bot turn");
  for (std::size_t i = turn_index; i-- > 0;) {
    if (d.turns[i].actor == Actor::kBot) return TagBotTurn(d.turns[i], vocab, options);
  }
  return {};
}

std::vector<int> UserTurnTokens(std::string_view text, const Vocabulary& vocab) {
  std::vector<int> out{vocab.sos()};
  auto ids = vocab.Encode(text);
  out.insert(out.end(), ids.begin(), ids.end());
  out.push_back(vocab.eos());
  return out;
}

std::vector<int> BotTurnTokens(const DialogueTurn& bot, const Vocabulary& vocab,
                               const ContextOptions& options) {
  std::vector<int> out{vocab.sos()};
  auto ids = TagBotTurn(bot, vocab, options);
  out.insert(out.end(), ids.begin(), ids.end());
  out.push_back(vocab.eos());
  return out;
}

std::string ResolveDomain(const Dialogue& d, std::size_t index) {
  for (std::size_t i = index + 1; i-- > 0;)
    if (d.turns[i].domain && !d.turns[i].domain->empty()) return *d.turns[i].domain;
  for (std::size_t i = index + 1; i < d.turns.size(); ++i)
    if (d.turns[i].domain && !d.turns[i].domain->empty()) return *d.turns[i].domain;
  return {};
}

int Session::TargetCount() const {
  int n = 0;
  for (auto m : loss_mask) n += m;
  return n;
}

Session ConcatenateSession(const Dialogue& d, const Vocabulary& vocab,
                           const ContextOptions& options) {
  Session s;
  s.id = d.id;
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    const DialogueTurn& turn = d.turns[i];
    TurnSpan span;
    span.actor = turn.actor;
    span.source_turn = int(i);
    span.domain = ResolveDomain(d, i);
    std::vector<int> toks;
    if (turn.actor == Actor::kUser) {
      toks = UserTurnTokens(turn.text, vocab);
      span.context = BuildContextSequence(d, i, vocab, options);
    } else {
      toks = BotTurnTokens(turn, vocab, options);
    }
    span.begin = int(s.tokens.size());
    s.tokens.insert(s.tokens.end(), toks.begin(), toks.end());
    span.end = int(s.tokens.size());
    s.turn_of.insert(s.turn_of.end(), toks.size(), int(s.turns.size()));
    s.turns.push_back(std::move(span));
  }
  if (!s.tokens.empty()) s.loss_mask.assign(s.tokens.size() - 1, 0);
  for (const TurnSpan& t : s.turns) {
    if (t.actor != Actor::kUser) continue;
    // targets tokens[begin+1 .. end-1]: the words and the closing <eos>
    for (int k = t.begin; k + 1 < t.end; ++k) s.loss_mask[k] = 1;
  }
  return s;
}

// ---------------------------------------------------------------------------

namespace {

Dialogue DialogueFromJson(const json& j) {
  Dialogue d;
  if (!j.is_object()) throw DataError("dialogue is not a JSON object");
  d.id = j.at("id").get<std::string>();
  const json& turns = j.at("turns");
  if (!turns.is_array() || turns.empty()) throw DataError("dialogue '" + d.id + "' has no turns");
  for (const json& t : turns) {
    DialogueTurn turn;
    const std::string actor = t.at("actor").get<std::string>();
    if (actor == "user") {
      turn.actor = Actor::kUser;
    } else if (actor == "bot") {
      turn.actor = Actor::kBot;
    } else {
      throw DataError("dialogue '" + d.id + "': unknown actor '" + actor + "'");
    }
    turn.text = Detokenize(Tokenize(t.at("text").get<std::string>()));
    if (turn.text.empty()) throw DataError("dialogue '" + d.id + "': empty turn text");
    if (auto it = t.find("dialogue_act"); it != t.end() && !it->is_null())
      turn.dialogue_act = NormalizeDialogueAct(it->get<std::string>());
    if (auto it = t.find("domain"); it != t.end() && !it->is_null())
      turn.domain = it->get<std::string>();
    d.turns.push_back(std::move(turn));
  }
  return d;
}

}  // namespace

std::vector<Dialogue> ParseDialogues(std::string_view jsonl, const std::string& origin) {
  std::vector<Dialogue> out;
  std::set<std::string> ids;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= jsonl.size()) {
    std::size_t nl = jsonl.find('\n', pos);
    if (nl == std::string_view::npos) nl = jsonl.size();
    std::string_view line = jsonl.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      Dialogue d = DialogueFromJson(json::parse(line));
      if (!ids.insert(d.id).second) throw DataError("duplicate dialogue id '" + d.id + "'");
      out.push_back(std::move(d));
    } catch (const UnknownDialogueActError&) {
      throw;
    } catch (const json::exception& e) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Dialogue> LoadDialogues(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open dialogue file");
  std::stringstream buf;
  buf << in.rdbuf();
  return ParseDialogues(buf.str(), path);
}

std::string DialogueToJson(const Dialogue& d) {
  json j;
  j["id"] = d.id;
  json turns = json::array();
  for (const DialogueTurn& t : d.turns) {
    json jt;
    jt["actor"] = std::string(ActorName(t.actor));
    jt["text"] = t.text;
    if (t.dialogue_act) jt["dialogue_act"] = *t.dialogue_act;
    if (t.domain) jt["domain"] = *t.domain;
    turns.push_back(std::move(jt));
  }
  j["turns"] = std::move(turns);
  return j.dump();
}

void SaveDialogues(const std::string& path, std::span<const Dialogue> dialogues) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot write dialogue file");
  for (const Dialogue& d : dialogues) out << DialogueToJson(d) << '\n';
}

}  // namespace ctxlm
