// ctxlm/checkpoint.cc

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

#include "ctxlm/checkpoint.h"

#include <algorithm>
#include <bit>
#include <fstream>
#include <set>

#include "ctxlm/errors.h"

namespace ctxlm {

using nlohmann::json;

namespace {

void CheckKeys(const json& j, std::initializer_list<const char*> known, const char* what) {
  if (!j.is_object()) throw UsageError(std::string(what) + " config must be a JSON object");
  std::set<std::string> ok(known.begin(), known.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw UsageError(std::string("unknown ") + what + " config key '" + it.key() + "'");
}

template <typename T>
void Read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw UsageError(std::string("config key '") + key + "' has the wrong type");
  }
}

std::uint64_t ToLittle(std::uint64_t x) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(x);
  return x;
}

}  // namespace

json ToJson(const ContextOptions& c) {
  return {{"dialogue_act", c.dialogue_act}, {"bot_response", c.bot_response}};
}

ContextOptions ContextOptionsFromJson(const json& j) {
  CheckKeys(j, {"dialogue_act", "bot_response"}, "context");
  ContextOptions c;
  Read(j, "dialogue_act", c.dialogue_act);
  Read(j, "bot_response", c.bot_response);
  return c;
}

json ToJson(const LstmLmConfig& c) {
  return {{"num_layers", c.num_layers},
          {"hidden_size", c.hidden_size},
          {"embed_size", c.embed_size},
          {"vocab_size", c.vocab_size},
          {"augmentation", std::string(AugmentationName(c.augmentation))},
          {"context", ToJson(c.context)},
          {"use_mlm_embedding", c.use_mlm_embedding},
          {"mlm_dim", c.mlm_dim},
          {"carry_over", c.carry_over}};
}

LstmLmConfig LstmConfigFromJson(const json& j, LstmLmConfig c) {
  CheckKeys(j, {"num_layers", "hidden_size", "embed_size", "vocab_size", "augmentation", "context",
                "use_mlm_embedding", "mlm_dim", "carry_over"},
            "lstm");
  Read(j, "num_layers", c.num_layers);
  Read(j, "hidden_size", c.hidden_size);
  Read(j, "embed_size", c.embed_size);
  Read(j, "vocab_size", c.vocab_size);
  if (j.contains("augmentation")) {
    std::string a;
    Read(j, "augmentation", a);
    c.augmentation = ParseAugmentation(a);
  }
  if (j.contains("context")) c.context = ContextOptionsFromJson(j.at("context"));
  Read(j, "use_mlm_embedding", c.use_mlm_embedding);
  Read(j, "mlm_dim", c.mlm_dim);
  Read(j, "carry_over", c.carry_over);
  return c;
}

json ToJson(const TxlConfig& c) {
  return {{"num_layers", c.num_layers},
          {"d_model", c.d_model},
          {"num_heads", c.num_heads},
          {"ffn_size", c.ffn()},
          {"segment_length", c.segment_length},
          {"memory_length", c.memory_length},
          {"vocab_size", c.vocab_size},
          {"fusion", std::string(FusionName(c.fusion))},
          {"mlm_dim", c.mlm_dim},
          {"context", ToJson(c.context)}};
}

TxlConfig TxlConfigFromJson(const json& j, TxlConfig c) {
  CheckKeys(j, {"num_layers", "d_model", "num_heads", "ffn_size", "segment_length", "memory_length",
                "vocab_size", "fusion", "mlm_dim", "context"},
            "txl");
  Read(j, "num_layers", c.num_layers);
  Read(j, "d_model", c.d_model);
  Read(j, "num_heads", c.num_heads);
  Read(j, "ffn_size", c.ffn_size);
  Read(j, "segment_length", c.segment_length);
  Read(j, "memory_length", c.memory_length);
  Read(j, "vocab_size", c.vocab_size);
  if (j.contains("fusion")) {
    std::string f;
    Read(j, "fusion", f);
    c.fusion = ParseFusion(f);
  }
  Read(j, "mlm_dim", c.mlm_dim);
  if (j.contains("context")) c.context = ContextOptionsFromJson(j.at("context"));
  return c;
}

ModelFamily ParseFamily(std::string_view name) {
  if (name == "lstm") return ModelFamily::kLstm;
  if (name == "txl") return ModelFamily::kTxl;
  throw UsageError("unknown model family '" + std::string(name) + "' (expected lstm or txl)");
}

std::unique_ptr<LanguageModel> MakeModel(ModelFamily family, const json& config, std::uint64_t seed) {
  if (family == ModelFamily::kLstm) return std::make_unique<LstmLm>(LstmConfigFromJson(config), seed);
  return std::make_unique<TxlLm>(TxlConfigFromJson(config), seed);
}

json ModelConfigJson(const LanguageModel& model) {
  if (const auto* l = dynamic_cast<const LstmLm*>(&model)) return ToJson(l->config());
  if (const auto* t = dynamic_cast<const TxlLm*>(&model)) return ToJson(t->config());
  throw UsageError("unsupported model type");
}

void SaveCheckpoint(const std::string& path, const LanguageModel& model, const Vocabulary& vocab,
                    std::uint64_t seed, const json& metadata) {
  json header;
  header["family"] = std::string(FamilyName(model.family()));
  header["config"] = ModelConfigJson(model);
  header["seed"] = seed;
  header["vocabulary"] = vocab.tokens();
  header["metadata"] = metadata;
  json tensors = json::array();
  for (const auto& [name, t] : model.parameters().entries())
    tensors.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  header["tensors"] = tensors;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot open for writing");
  out << kCheckpointMagic << '\n' << header.dump() << '\n';
  for (const auto& [name, t] : model.parameters().entries())
    for (double v : t.values()) {
      const std::uint64_t bits = ToLittle(std::bit_cast<std::uint64_t>(v));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  if (!out) throw DataError(path + ": write failed");
}

Checkpoint LoadCheckpoint(const std::string& path, const json& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open checkpoint");
  std::string magic, line;
  std::getline(in, magic);
  if (magic != kCheckpointMagic) throw DataError(path + ": not a ctxlm checkpoint (bad magic)");
  std::getline(in, line);
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(path + ": bad checkpoint header: " + e.what());
  }

  Checkpoint ck;
  json config;
  ModelFamily family;
  try {
    family = ParseFamily(header.at("family").get<std::string>());
    config = header.at("config");
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.vocab = Vocabulary::FromTokens(header.at("vocabulary").get<std::vector<std::string>>());
    ck.metadata = header.value("metadata", json::object());
  } catch (const json::exception& e) {
    throw DataError(path + ": incomplete checkpoint header: " + e.what());
  }
  if (!overrides.is_null()) config.merge_patch(overrides);
  ck.model = MakeModel(family, config, ck.seed);
  if (int(ck.vocab.size()) != ck.model->vocab_size())
    throw DataError(path + ": vocabulary has " + std::to_string(ck.vocab.size()) +
                    " tokens, model expects " + std::to_string(ck.model->vocab_size()));

  auto& params = ck.model->parameters();
  const json& tensors = header.at("tensors");
  if (tensors.size() != params.size())
    throw DataError(path + ": checkpoint has " + std::to_string(tensors.size()) +
                    " tensors, model expects " + std::to_string(params.size()));
  for (const json& t : tensors) {
    const std::string name = t.at("name").get<std::string>();
    if (!params.Contains(name)) throw DataError(path + ": unexpected tensor '" + name + "'");
    ag::Tensor& dst = params.Get(name);
    if (t.at("rows").get<int>() != dst.rows() || t.at("cols").get<int>() != dst.cols())
      throw DataError(path + ": tensor '" + name + "' has a different shape than the model");
    for (double& v : dst.mutable_values()) {
      std::uint64_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits))
        throw DataError(path + ": truncated tensor data in '" + name + "'");
      v = std::bit_cast<double>(ToLittle(bits));
    }
  }
  if (in.peek() != std::ifstream::traits_type::eof()) throw DataError(path + ": trailing bytes");
  return ck;
}

}  // namespace ctxlm
