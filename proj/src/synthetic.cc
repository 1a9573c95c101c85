// ctxlm/synthetic.cc

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

#include "ctxlm/synthetic.h"

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "ctxlm/errors.h"

namespace ctxlm {

namespace {

struct Opener {
  std::string before, after;
  int slot;
};

struct DomainSpec {
  std::string name;
  std::vector<std::vector<std::string>> slots;
  std::vector<Opener> openers;
};

const std::vector<DomainSpec>& Specs() {
  static const std::vector<DomainSpec> specs = {
      {"bank",
       {{"checking", "savings", "credit", "business"},
        {"alice", "bob", "carol", "dave"},
        {"ten", "twenty", "fifty", "hundred"}},
       {{"i want to check my", "account", 0}, {"i want to pay", "today", 1}, {"i want to send", "dollars", 2}}},
      {"travel",
       {{"paris", "rome", "tokyo", "berlin"},
        {"monday", "tuesday", "friday", "sunday"},
        {"flight", "hotel", "train", "taxi"}},
       {{"i need to go to", "soon", 0}, {"i need to leave on", "morning", 1}, {"i need a", "ticket", 2}}},
  };
  return specs;
}

const DomainSpec& Spec(const std::string& name) {
  for (const auto& s : Specs())
    if (s.name == name) return s;
  throw UsageError("unknown synthetic domain '" + name + "'");
}

const std::vector<std::string> kResponses[2] = {{"i found", "let me check", "okay noted"},
                                                {"is available", "works for us", "is on file"}};

template <typename T>
const T& Pick(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

int Uniform(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

/// Slot index of `word` in `spec`, or -1.
int SlotOf(const DomainSpec& spec, const std::string& word) {
  for (std::size_t s = 0; s < spec.slots.size(); ++s)
    if (std::find(spec.slots[s].begin(), spec.slots[s].end(), word) != spec.slots[s].end()) return int(s);
  return -1;
}

std::string OtherValue(const DomainSpec& spec, const std::string& value, std::mt19937_64& rng) {
  const auto& pool = spec.slots[SlotOf(spec, value)];
  std::string w;
  do w = Pick(pool, rng);
  while (w == value);
  return w;
}

std::string BotResponse(const std::string& value, std::mt19937_64& rng) {
  const int side = Uniform(rng, 0, 1);
  const std::string& phrase = Pick(kResponses[side], rng);
  return side == 0 ? phrase + " " + value : value + " " + phrase;
}

/// The user's answer to a bot turn with dialogue act `act` naming `value`.
std::string Reply(const DomainSpec& spec, const std::string& act, const std::string& value,
                  std::mt19937_64& rng) {
  const bool alt = Uniform(rng, 0, 1) == 1;
  if (act == "request") return alt ? "it is " + value : value + " please";
  if (act == "confirm") return alt ? "yes that is " + value : "yes " + value + " is right";
  if (act == "offer") return alt ? "sure book " + value : "yes book " + value;
  if (act == "inform") return (alt ? "and " : "what about ") + OtherValue(spec, value, rng);
  if (act == "general-reqmore") return alt ? "nothing else" : "no that is all";
  if (act == "general-welcome") return alt ? "hello there" : "hi i need help";
  if (act == "general-bye") return alt ? "thanks bye" : "bye thanks";
  throw UsageError("no reply template for act '" + act + "'");
}

std::string Opening(const DomainSpec& spec, std::mt19937_64& rng) {
  const Opener& o = Pick(spec.openers, rng);
  return o.before + " " + Pick(spec.slots[o.slot], rng) + " " + o.after;
}

std::vector<std::string> Words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::string Join(const std::vector<std::string>& w) {
  std::string s;
  for (const auto& x : w) s += (s.empty() ? "" : " ") + x;
  return s;
}

/// Every word the generator can emit, sorted.
std::vector<std::string> Lexicon() {
  std::set<std::string> all;
  std::mt19937_64 rng(0);
  for (const auto& spec : Specs()) {
    for (const auto& slot : spec.slots)
      for (const auto& v : slot) all.insert(v);
    for (const auto& o : spec.openers) {
      for (const auto& w : Words(o.before)) all.insert(w);
      all.insert(o.after);
    }
    for (const auto& act : NormalizedDialogueActs())
      for (int k = 0; k < 8; ++k)
        for (const auto& w : Words(Reply(spec, act, spec.slots[0][0], rng))) all.insert(w);
  }
  for (const auto& side : kResponses)
    for (const auto& r : side)
      for (const auto& w : Words(r)) all.insert(w);
  return {all.begin(), all.end()};
}

}  // namespace

const std::vector<std::string>& SyntheticDomains() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& s : Specs()) n.push_back(s.name);
    return n;
  }();
  return names;
}

std::vector<Dialogue> GenerateDialogues(const SyntheticCorpusConfig& config) {
  if (config.dialogues <= 0) throw UsageError("dialogue count must be positive");
  if (config.min_turns < 1 || config.max_turns < config.min_turns) throw UsageError("bad turn range");
  if (config.domains.empty()) throw UsageError("no domains");
  std::vector<const DomainSpec*> specs;
  for (const auto& d : config.domains) specs.push_back(&Spec(d));
  std::mt19937_64 rng(config.seed);
  const auto& acts = NormalizedDialogueActs();
  std::vector<Dialogue> out;
  for (int i = 0; i < config.dialogues; ++i) {
    const DomainSpec& spec = *Pick(specs, rng);
    Dialogue d{"syn" + std::to_string(i), {}};
    const int turns = Uniform(rng, config.min_turns, config.max_turns);
    std::string act, value;
    for (int t = 0; t < turns; ++t) {
      DialogueTurn turn;
      turn.domain = spec.name;
      if (t % 2 == 0) {
        turn.actor = Actor::kUser;
        turn.text = t == 0 ? Opening(spec, rng) : Reply(spec, act, value, rng);
      } else {
        turn.actor = Actor::kBot;
        act = Pick(acts, rng);
        value = Pick(Pick(spec.slots, rng), rng);
        turn.dialogue_act = act;
        turn.text = BotResponse(value, rng);
      }
      d.turns.push_back(std::move(turn));
    }
    out.push_back(std::move(d));
  }
  return out;
}

DomainEmbeddingTable SyntheticDomainTable(std::span<const std::string> domains, int dim, std::uint64_t seed) {
  if (dim <= 0) throw UsageError("embedding dim must be positive");
  DomainEmbeddingTable t(dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (const auto& name : domains) {
    std::vector<double> v(dim);
    for (double& x : v) x = n(rng);
    t.Add(name, std::move(v));
  }
  return t;
}

std::vector<NBestEntry> GenerateNBest(std::span<const Dialogue> dialogues, const NBestFixtureConfig& config) {
  if (config.hypotheses < 1 || config.hypotheses > kMaxHypotheses)
    throw UsageError("hypothesis count must be in [1, " + std::to_string(kMaxHypotheses) + "]");
  if (config.second_best_fraction < 0 || config.lower_fraction < 0 ||
      config.second_best_fraction + config.lower_fraction > 1.0)
    throw UsageError("rank fractions must be non-negative and sum to at most 1");
  std::mt19937_64 rng(config.seed);
  const std::vector<std::string> lexicon = Lexicon();
  std::vector<NBestEntry> out;
  for (const Dialogue& d : dialogues) {
    const DomainSpec* spec = nullptr;
    for (const auto& t : d.turns)
      if (t.domain) {
        for (const auto& s : Specs())
          if (s.name == *t.domain) spec = &s;
        break;
      }
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      const DialogueTurn& turn = d.turns[t];
      if (turn.actor != Actor::kUser) continue;
      const std::string& ref = turn.text;
      const auto ref_words = Words(ref);
      // Act and value of the preceding bot turn, when there is one.
      std::string act, value;
      if (t > 0 && d.turns[t - 1].actor == Actor::kBot && spec != nullptr) {
        act = d.turns[t - 1].dialogue_act.value_or("");
        for (const auto& w : Words(d.turns[t - 1].text))
          if (SlotOf(*spec, w) >= 0) value = w;
      }

      std::vector<std::string> competitors;
      std::set<std::string> seen = {ref};
      for (int attempt = 0; attempt < 200 && int(competitors.size()) + 1 < config.hypotheses; ++attempt) {
        auto w = ref_words;
        switch (Uniform(rng, 0, 3)) {
          case 0: {  // another value of the same slot
            if (spec == nullptr) continue;
            std::vector<std::size_t> at;
            for (std::size_t k = 0; k < w.size(); ++k)
              if (SlotOf(*spec, w[k]) >= 0) at.push_back(k);
            if (at.empty()) continue;
            std::size_t k = Pick(at, rng);
            w[k] = OtherValue(*spec, w[k], rng);
            break;
          }
          case 1: {  // answer to a different act
            if (act.empty() || value.empty()) continue;
            std::string other;
            do other = Pick(NormalizedDialogueActs(), rng);
            while (other == act);
            w = Words(Reply(*spec, other, value, rng));
            break;
          }
          case 2:
            w[Uniform(rng, 0, int(w.size()) - 1)] = Pick(lexicon, rng);
            break;
          default:
            if (w.size() < 2) continue;
            w.erase(w.begin() + Uniform(rng, 0, int(w.size()) - 1));
        }
        std::string text = Join(w);
        if (seen.insert(text).second) competitors.push_back(std::move(text));
      }

      const int n = int(competitors.size()) + 1;
      int rank = 0;
      const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      if (u < config.second_best_fraction && n >= 2)
        rank = 1;
      else if (u < config.second_best_fraction + config.lower_fraction && n >= 3)
        rank = Uniform(rng, 2, n - 1);
      std::shuffle(competitors.begin(), competitors.end(), rng);
      competitors.insert(competitors.begin() + rank, ref);

      NBestEntry e{d.id + "-" + std::to_string(t), d.id, int(t), ref, {}};
      double score = -std::uniform_real_distribution<double>(15.0, 30.0)(rng);
      for (auto& text : competitors) {
        e.hypotheses.push_back({std::move(text), score});
        score -= std::uniform_real_distribution<double>(0.5, 3.0)(rng);
      }
      out.push_back(std::move(e));
    }
  }
  return out;
}

}  // namespace ctxlm
