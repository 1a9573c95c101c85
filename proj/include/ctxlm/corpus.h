// ctxlm/corpus.h

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

// Dialogue corpora: loading, dialogue-act normalisation, vocabulary, and the
// token streams the language models train on.

#ifndef CTXLM_CORPUS_H_
#define CTXLM_CORPUS_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ctxlm {

enum class Actor { kUser, kBot };

std::string_view ActorName(Actor a);

struct DialogueTurn {
  Actor actor = Actor::kUser;
  std::string text;
  std::optional<std::string> dialogue_act;  // normalised
  std::optional<std::string> domain;
};

struct Dialogue {
  std::string id;
  std::vector<DialogueTurn> turns;
};

/// Maps a raw system dialogue act onto one of the seven normalised classes
/// (confirm, inform, offer, request, general-bye, general-welcome,
/// general-reqmore).  Input is case-folded first.  Throws
/// UnknownDialogueActError for anything unmapped.
std::string NormalizeDialogueAct(std::string_view raw);

/// The seven normalised classes, sorted.
const std::vector<std::string>& NormalizedDialogueActs();

/// Lower-cases, detaches punctuation, splits on whitespace.  Apostrophes,
/// hyphens and underscores inside a word stay attached.
std::vector<std::string> Tokenize(std::string_view text);
std::string Detokenize(std::span<const std::string> tokens);

class Vocabulary {
 public:
  static constexpr std::string_view kUnk = "<unk>";
  static constexpr std::string_view kSos = "<sos>";
  static constexpr std::string_view kEos = "<eos>";
  static constexpr std::string_view kDialogAct = "<dialog_act>";
  static constexpr std::string_view kBotResponse = "<bot_response>";
  static constexpr int kNumSpecials = 5;

  Vocabulary();

  /// Keeps the (max_size - specials) most frequent tokens of user turns, bot
  /// responses and dialogue-act labels.  Ties go to the lexicographically
  /// smaller token.
  static Vocabulary Build(std::span<const Dialogue> corpus, std::size_t max_size);
  /// Specials must come first, in the canonical order.
  static Vocabulary FromTokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  /// Id of `token`, or the <unk> id.
  int Id(std::string_view token) const;
  std::optional<int> Find(std::string_view token) const;
  const std::string& Token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> Encode(std::string_view text) const;
  std::vector<int> EncodeTokens(std::span<const std::string> tokens) const;
  std::string Decode(std::span<const int> ids) const;

  int unk() const { return 0; }
  int sos() const { return 1; }
  int eos() const { return 2; }
  int dialog_act() const { return 3; }
  int bot_response() const { return 4; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Which bot-turn fields enter the tagged context.
struct ContextOptions {
  bool dialogue_act = true;
  bool bot_response = true;
};

/// Tagged rendering of one bot turn: [<dialog_act>, act tokens,
/// <bot_response>, response tokens], restricted to the enabled fields.
std::vector<int> TagBotTurn(const DialogueTurn& bot, const Vocabulary& vocab,
                            const ContextOptions& options = {});

/// Context priming the user turn at `turn_index`: the tagged rendering of the
/// most recent preceding bot turn, or empty when there is none.  Throws
/// IndexError when out of range and UsageError when the turn is a bot turn.
std::vector<int> BuildContextSequence(const Dialogue& d, std::size_t turn_index,
                                      const Vocabulary& vocab,
                                      const ContextOptions& options = {});

struct TurnSpan {
  Actor actor = Actor::kUser;
  int begin = 0;  // index of the turn's <sos> in Session::tokens
  int end = 0;    // one past its <eos>
  int source_turn = 0;       // index into Dialogue::turns
  std::vector<int> context;  // priming context (user turns only)
  std::string domain;        // resolved domain label, may be empty
};

/// A whole dialogue as one token stream.  User turns are [<sos> words <eos>],
/// bot turns [<sos> tagged-context <eos>].  loss_mask[k] refers to the target
/// tokens[k+1] and is 1 exactly on user-turn words and their <eos>.
struct Session {
  std::string id;
  std::vector<int> tokens;
  std::vector<std::uint8_t> loss_mask;
  std::vector<TurnSpan> turns;
  std::vector<int> turn_of;  // per token, index into `turns`

  int TargetCount() const;
};

Session ConcatenateSession(const Dialogue& d, const Vocabulary& vocab,
                           const ContextOptions& options = {});

/// User-turn token rendering [<sos> words <eos>].
std::vector<int> UserTurnTokens(std::string_view text, const Vocabulary& vocab);
/// Bot-turn token rendering [<sos> tagged-context <eos>].
std::vector<int> BotTurnTokens(const DialogueTurn& bot, const Vocabulary& vocab,
                               const ContextOptions& options = {});

/// Domain label for turn `index`: its own, else the nearest labelled turn
/// before it, else the first labelled turn after it.  Empty if none.
std::string ResolveDomain(const Dialogue& d, std::size_t index);

// Line-delimited JSON, one dialogue per line.  Dialogue acts are normalised
// on load; unknown acts raise UnknownDialogueActError.  Errors carry the path
// and line number.
std::vector<Dialogue> LoadDialogues(const std::string& path);
std::vector<Dialogue> ParseDialogues(std::string_view jsonl, const std::string& origin = "<memory>");
void SaveDialogues(const std::string& path, std::span<const Dialogue> dialogues);
std::string DialogueToJson(const Dialogue& d);

}  // namespace ctxlm

#endif  // CTXLM_CORPUS_H_
