// python/bindings.cc

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

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "ctxlm/checkpoint.h"
#include "ctxlm/corpus.h"
#include "ctxlm/errors.h"
#include "ctxlm/metrics.h"
#include "ctxlm/synthetic.h"
#include "ctxlm/trainer.h"
#ifdef CTXLM_WITH_CLI
#include "cli.h"
#endif

namespace py = pybind11;
using namespace ctxlm;

namespace {

py::dict AlignmentDict(const AlignmentResult& a) {
  py::dict d;
  d["substitutions"] = a.substitutions;
  d["insertions"] = a.insertions;
  d["deletions"] = a.deletions;
  d["reference_length"] = a.reference_length;
  d["errors"] = a.errors();
  d["wer"] = a.wer();
  d["skipped"] = a.skipped;
  return d;
}

std::string JsonLines(std::span<const Dialogue> dialogues) {
  std::string out;
  for (const auto& d : dialogues) out += DialogueToJson(d) + "\n";
  return out;
}

class Model {
 public:
  Model(const std::string& path, const std::string& overrides)
      : ck_(LoadCheckpoint(path, overrides.empty() ? nlohmann::json::object() : nlohmann::json::parse(overrides))) {}

  std::string family() const { return std::string(FamilyName(ck_.model->family())); }
  int vocab_size() const { return ck_.model->vocab_size(); }
  std::string config() const { return ModelConfigJson(*ck_.model).dump(); }

  py::dict Perplexity(const std::string& dialogues_jsonl, const std::string& embeddings_path) const {
    const auto dialogues = ParseDialogues(dialogues_jsonl);
    std::optional<DomainEmbeddingTable> table;
    if (!embeddings_path.empty()) table = DomainEmbeddingTable::Load(embeddings_path);
    std::vector<Session> sessions;
    for (const auto& d : dialogues) sessions.push_back(ConcatenateSession(d, ck_.vocab, ck_.model->context_options()));
    PerplexityResult r;
    {
      py::gil_scoped_release release;
      r = ctxlm::Perplexity(*ck_.model, sessions, table ? &*table : nullptr);
    }
    py::dict d;
    d["ppl"] = r.ppl;
    d["nll"] = r.nll;
    d["targets"] = r.targets;
    return d;
  }

 private:
  Checkpoint ck_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "ctxlm native core";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());

  m.def("tokenize", [](const std::string& s) { return Tokenize(s); });
  m.def("align",
        [](const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
          return AlignmentDict(Align(std::span<const std::string>(ref), std::span<const std::string>(hyp)));
        },
        py::arg("reference"), py::arg("hypothesis"));
  m.def("align_text", [](const std::string& r, const std::string& h) { return AlignmentDict(AlignText(r, h)); },
        py::arg("reference"), py::arg("hypothesis"));
  m.def("content_align",
        [](const std::vector<std::string>& ref, const std::vector<std::string>& hyp,
           const std::unordered_set<std::string>& stop) { return AlignmentDict(ContentAlign(ref, hyp, stop)); },
        py::arg("reference"), py::arg("hypothesis"), py::arg("stopwords"));
  m.def("load_stopwords", &LoadStopwords);
  m.def("mapsswe",
        [](const std::vector<int>& a, const std::vector<int>& b) {
          const auto r = Mapsswe(a, b);
          py::dict d;
          d["z"] = r.z;
          d["p_value"] = r.p_value;
          d["mean_difference"] = r.mean_difference;
          d["stddev"] = r.stddev;
          d["segments"] = r.segments;
          return d;
        },
        py::arg("errors_a"), py::arg("errors_b"));
  m.def("relative_reduction", &RelativeReduction, py::arg("baseline"), py::arg("candidate"));
  m.def("normalize_dialogue_act", [](const std::string& s) { return NormalizeDialogueAct(s); });

  m.def("generate_dialogues",
        [](int dialogues, std::uint64_t seed, int min_turns, int max_turns, std::vector<std::string> domains) {
          SyntheticCorpusConfig c;
          c.dialogues = dialogues;
          c.seed = seed;
          c.min_turns = min_turns;
          c.max_turns = max_turns;
          c.domains = std::move(domains);
          return JsonLines(GenerateDialogues(c));
        },
        py::arg("dialogues") = 2000, py::arg("seed") = 1, py::arg("min_turns") = 4, py::arg("max_turns") = 8,
        py::arg("domains") = std::vector<std::string>{"bank", "travel"},
        "Synthetic dialogues as JSON lines.");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&, const std::string&>(), py::arg("path"), py::arg("overrides") = "")
      .def_property_readonly("family", &Model::family)
      .def_property_readonly("vocab_size", &Model::vocab_size)
      .def("config_json", &Model::config)
      .def("perplexity", &Model::Perplexity, py::arg("dialogues_jsonl"), py::arg("embeddings_path") = "");

#ifdef CTXLM_WITH_CLI
  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::ostringstream out, err;
          int code;
          {
            py::gil_scoped_release release;
            code = cli::Run(args, out, err);
          }
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs a ctxlm subcommand; returns (exit code, stdout, stderr).");
#endif
}
