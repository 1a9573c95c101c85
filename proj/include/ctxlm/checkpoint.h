// ctxlm/checkpoint.h

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

// Checkpoint files.  Layout:
//
//   CTXLM1\n
//   <one-line JSON header>\n
//   <float64 little-endian values of every tensor, in header order>
//
// The header holds {"family", "config", "seed", "vocabulary", "metadata",
// "tensors": [{"name", "rows", "cols"}]}.

#ifndef CTXLM_CHECKPOINT_H_
#define CTXLM_CHECKPOINT_H_

#include <cstdint>
#include <memory>
#include <string>

#include "ctxlm/corpus.h"
#include "ctxlm/language_model.h"
#include "ctxlm/lstm_lm.h"
#include "ctxlm/txl_lm.h"
#include "json.hpp"

namespace ctxlm {

inline constexpr const char* kCheckpointMagic = "CTXLM1";

// Config <-> JSON.  FromJson starts from the defaults, applies the keys
// present and rejects unknown keys with UsageError.
nlohmann::json ToJson(const ContextOptions& c);
nlohmann::json ToJson(const LstmLmConfig& c);
nlohmann::json ToJson(const TxlConfig& c);
ContextOptions ContextOptionsFromJson(const nlohmann::json& j);
LstmLmConfig LstmConfigFromJson(const nlohmann::json& j, LstmLmConfig base = {});
TxlConfig TxlConfigFromJson(const nlohmann::json& j, TxlConfig base = {});

ModelFamily ParseFamily(std::string_view name);

/// Builds a freshly initialised model of `family` from its JSON config.
std::unique_ptr<LanguageModel> MakeModel(ModelFamily family, const nlohmann::json& config,
                                         std::uint64_t seed);

/// The model's architecture config as JSON.
nlohmann::json ModelConfigJson(const LanguageModel& model);

struct Checkpoint {
  std::unique_ptr<LanguageModel> model;
  Vocabulary vocab;
  std::uint64_t seed = 0;
  nlohmann::json metadata;  // free-form (training config, log summary)
};

void SaveCheckpoint(const std::string& path, const LanguageModel& model, const Vocabulary& vocab,
                    std::uint64_t seed, const nlohmann::json& metadata = nlohmann::json::object());

/// `overrides` is merged into the stored config before the model is built,
/// which lets evaluation change settings such as the TXL memory length.  Any
/// change that alters a tensor shape is a DataError.
Checkpoint LoadCheckpoint(const std::string& path,
                          const nlohmann::json& overrides = nlohmann::json::object());

}  // namespace ctxlm

#endif  // CTXLM_CHECKPOINT_H_
