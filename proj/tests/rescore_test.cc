// tests/rescore_test.cc

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "ctxlm/errors.h"
#include "ctxlm/lstm_lm.h"
#include "ctxlm/rescore.h"
#include "ctxlm/txl_lm.h"
#include "doctest.h"
#include "test_corpus.h"

using namespace ctxlm;

namespace {

LstmLmConfig SmallLstm(int vocab) {
  LstmLmConfig c;
  c.num_layers = 1;
  c.hidden_size = 8;
  c.embed_size = 6;
  c.vocab_size = vocab;
  c.augmentation = Augmentation::kAvg;
  c.use_mlm_embedding = true;
  c.mlm_dim = 3;
  c.carry_over = true;
  return c;
}

TxlConfig SmallTxl(int vocab) {
  TxlConfig c;
  c.num_layers = 2;
  c.d_model = 8;
  c.num_heads = 2;
  c.segment_length = 4;
  c.memory_length = 6;
  c.vocab_size = vocab;
  c.fusion = FusionMode::kSimple;
  c.mlm_dim = 3;
  return c;
}

// One N-best entry per user turn; the first hypothesis is the reference.
std::vector<NBestEntry> EntriesFor(const std::vector<Dialogue>& ds, std::mt19937_64& rng, int extra) {
  std::vector<NBestEntry> out;
  for (const auto& d : ds)
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      if (d.turns[t].actor != Actor::kUser) continue;
      NBestEntry e{d.id + "/" + std::to_string(t), d.id, int(t), d.turns[t].text, {}};
      e.hypotheses.push_back({d.turns[t].text, -1.0});
      for (int k = 0; k < extra; ++k) e.hypotheses.push_back({testing::RandomText(rng), -1.5 - 0.5 * k});
      out.push_back(std::move(e));
    }
  return out;
}

}  // namespace

TEST_CASE("score combination") {
  auto r = RankHypotheses(std::vector<double>{-10.0}, std::vector<double>{-3.0}, 0.5);
  CHECK(r[0].combined == -8.0);
  auto lm_only = RankHypotheses(std::vector<double>{-1.0, -50.0, -3.0}, std::vector<double>{-9.0, -2.0, -4.0}, 0.0);
  CHECK(lm_only[0].index == 1);
  CHECK(lm_only[1].index == 2);
  auto constant = RankHypotheses(std::vector<double>{-5.0, -1.0, -3.0, -1.0}, std::vector<double>(4, -7.0), 1.3);
  std::vector<int> order;
  for (auto& h : constant) order.push_back(h.index);
  CHECK(order == std::vector<int>{1, 3, 2, 0});
  CHECK_THROWS_AS(RankHypotheses(std::vector<double>{}, std::vector<double>{}, 1.0), UsageError);
  CHECK_THROWS_AS(RankHypotheses(std::vector<double>{1.0}, std::vector<double>{}, 1.0), UsageError);
}

TEST_CASE("ranking matches the exhaustive sort oracle") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> ac(3), lm(3);
    for (auto& x : ac) x = -double(rng() % 4);
    for (auto& x : lm) x = -double(rng() % 4);
    const double scale = double(rng() % 3) * 0.5;
    std::vector<int> perm = {0, 1, 2}, want;
    do {
      bool ok = true;
      for (int k = 0; k + 1 < 3; ++k) {
        const double a = scale * ac[perm[k]] + lm[perm[k]], b = scale * ac[perm[k + 1]] + lm[perm[k + 1]];
        if (a < b || (a == b && perm[k] > perm[k + 1])) ok = false;
      }
      if (ok) want = perm;
    } while (std::next_permutation(perm.begin(), perm.end()));
    auto got = RankHypotheses(ac, lm, scale);
    for (int k = 0; k < 3; ++k) CHECK(got[k].index == want[k]);
  }
}

TEST_CASE("reference hypotheses reproduce session scores") {
  auto vocab = testing::TestVocabulary();
  std::mt19937_64 rng(2);
  auto domains = testing::TestDomains(3, rng);
  std::vector<Dialogue> ds;
  for (int i = 0; i < 6; ++i) ds.push_back(testing::RandomDialogue(rng, "d" + std::to_string(i), 7));
  auto entries = EntriesFor(ds, rng, 0);
  REQUIRE(!entries.empty());
  LstmLm lstm(SmallLstm(int(vocab.size())), 3);
  TxlLm txl(SmallTxl(int(vocab.size())), 4);
  for (const LanguageModel* m : {static_cast<const LanguageModel*>(&lstm), static_cast<const LanguageModel*>(&txl)}) {
    auto out = RescoreCorpus(*m, vocab, ds, entries, &domains, {});
    std::size_t k = 0;
    for (const auto& d : ds) {
      auto score = ScoreSession(*m, ConcatenateSession(d, vocab), &domains);
      for (std::size_t t = 0; t < d.turns.size(); ++t) {
        if (d.turns[t].actor != Actor::kUser) continue;
        CHECK(out[k].utterance_id == entries[k].utterance_id);
        CHECK(std::abs(out[k].ranking[0].lm - score.per_turn[t]) < 1e-10);
        ++k;
      }
    }
  }
}

TEST_CASE("threads and context source") {
  auto vocab = testing::TestVocabulary();
  std::mt19937_64 rng(5);
  std::vector<Dialogue> ds;
  for (int i = 0; i < 9; ++i) ds.push_back(testing::RandomDialogue(rng, "d" + std::to_string(i), 6));
  auto entries = EntriesFor(ds, rng, 4);
  std::shuffle(entries.begin(), entries.end(), rng);
  LstmLm m(SmallLstm(int(vocab.size())), 6);
  RescoreOptions one;
  RescoreOptions four;
  four.jobs = 4;
  auto a = RescoreCorpus(m, vocab, ds, entries, nullptr, one);
  auto b = RescoreCorpus(m, vocab, ds, entries, nullptr, four);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].utterance_id == entries[i].utterance_id);
    CHECK(a[i].utterance_id == b[i].utterance_id);
    for (std::size_t k = 0; k < a[i].ranking.size(); ++k) {
      CHECK(a[i].ranking[k].index == b[i].ranking[k].index);
      CHECK(a[i].ranking[k].combined == b[i].ranking[k].combined);
    }
  }
  // Reference context: scores of later turns use the true history, which
  // here equals hypothesis 0, so forcing every choice to 0 reproduces it.
  RescoreOptions ref;
  ref.context = ContextSource::kReference;
  ref.acoustic_scale = 1000.0;  // hypothesis 0 has the best acoustic score
  auto c = RescoreCorpus(m, vocab, ds, entries, nullptr, ref);
  RescoreOptions forced = ref;
  forced.context = ContextSource::kOneBest;
  auto d = RescoreCorpus(m, vocab, ds, entries, nullptr, forced);
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(d[i].best() == 0);
    CHECK(c[i].ranking[0].lm == d[i].ranking[0].lm);
  }
}

TEST_CASE("oracle bound and choice helpers") {
  auto vocab = testing::TestVocabulary();
  std::mt19937_64 rng(7);
  std::vector<Dialogue> ds;
  for (int i = 0; i < 8; ++i) ds.push_back(testing::RandomDialogue(rng, "d" + std::to_string(i), 6));
  auto entries = EntriesFor(ds, rng, 5);
  for (auto& e : entries) std::shuffle(e.hypotheses.begin(), e.hypotheses.end(), rng);
  TxlLm m(SmallTxl(int(vocab.size())), 8);
  auto out = RescoreCorpus(m, vocab, ds, entries, nullptr, {});
  std::vector<int> chosen;
  for (auto& r : out) chosen.push_back(r.best());
  auto oracle = OracleChoice(entries);
  auto rescored = EvaluateChoices(entries, chosen, {});
  auto best = EvaluateChoices(entries, oracle, {});
  for (std::size_t i = 0; i < entries.size(); ++i) {
    CHECK(rescored.word[i].errors() >= best.word[i].errors());
    CHECK(best.word[i].errors() == 0);  // the reference is in every list
  }
  CHECK(PooledWer(rescored.word).wer >= PooledWer(best.word).wer);

  std::vector<NBestEntry> es = {{"u", "x", 0, std::nullopt, {{"a", -3.0}, {"b", -1.0}, {"c", -1.0}}}};
  CHECK(AcousticOneBest(es) == std::vector<int>{1});
  CHECK(OracleChoice(es) == std::vector<int>{0});
  CHECK(EvaluateChoices(es, std::vector<int>{1}, {}).word.empty());
}

TEST_CASE("unknown dialogues and bad entries") {
  auto vocab = testing::TestVocabulary();
  LstmLm m(SmallLstm(int(vocab.size())), 9);
  std::vector<NBestEntry> orphan = {{"u1", "nowhere", 3, std::nullopt, {{"yes", -1.0}, {"no", -2.0}}},
                                    {"u0", "nowhere", 1, std::nullopt, {{"book", -1.0}}}};
  auto out = RescoreCorpus(m, vocab, {}, orphan, nullptr, {});
  CHECK(out[0].utterance_id == "u1");
  CHECK(out[1].utterance_id == "u0");

  Dialogue d{"d", {{Actor::kBot, "hello", std::string("general-welcome"), {}}, {Actor::kUser, "yes", {}, {}}}};
  std::vector<Dialogue> ds = {d};
  std::vector<NBestEntry> at_bot = {{"u", "d", 0, std::nullopt, {{"yes", -1.0}}}};
  CHECK_THROWS_AS(RescoreCorpus(m, vocab, ds, at_bot, nullptr, {}), DataError);
  std::vector<NBestEntry> beyond = {{"u", "d", 5, std::nullopt, {{"yes", -1.0}}}};
  CHECK_THROWS_AS(RescoreCorpus(m, vocab, ds, beyond, nullptr, {}), DataError);
  std::vector<NBestEntry> twice = {{"u", "d", 1, std::nullopt, {{"yes", -1.0}}},
                                   {"v", "d", 1, std::nullopt, {{"no", -1.0}}}};
  CHECK_THROWS_AS(RescoreCorpus(m, vocab, ds, twice, nullptr, {}), DataError);
  RescoreOptions bad;
  bad.jobs = 0;
  CHECK_THROWS_AS(RescoreCorpus(m, vocab, ds, twice, nullptr, bad), UsageError);
}

TEST_CASE("N-best file format") {
  std::vector<NBestEntry> es = {{"u1", "d1", 2, std::string("book a table"), {{"book a table", -4.5}, {"look a table", -4.0}}},
                                {"u2", "d1", 4, std::nullopt, {{"", -1.25}}}};
  const auto path = (std::filesystem::temp_directory_path() / "ctxlm_nbest.jsonl").string();
  SaveNBest(path, es);
  auto back = LoadNBest(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].reference == es[0].reference);
  CHECK(back[0].hypotheses[1].acoustic_score == -4.0);
  CHECK(!back[1].reference);
  CHECK(back[1].turn_index == 4);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(ParseNBest(R"({"utterance_id":"u","dialogue_id":"d","turn_index":0,"hypotheses":[]})"), DataError);
  std::string many = R"({"utterance_id":"u","dialogue_id":"d","turn_index":0,"hypotheses":[)";
  for (int i = 0; i < 51; ++i) many += std::string(i ? "," : "") + R"({"text":"a","acoustic_score":-1})";
  CHECK_THROWS_AS(ParseNBest(many + "]}"), DataError);
  try {
    ParseNBest("\n{\"utterance_id\":\"u\"}\n", "f.jsonl");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).rfind("f.jsonl:2:", 0) == 0);
  }
  CHECK_THROWS_AS(LoadNBest("/nonexistent/n.jsonl"), DataError);
}
