// Thin pybind11 layer over the C++ library. Structured results cross the
// boundary as JSON text; the Python package turns them into dicts.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <sstream>

#include "nuner/annotator/annotator.hpp"
#include "nuner/cli/app.hpp"
#include "nuner/corpus/annotations.hpp"
#include "nuner/corpus/dataset.hpp"
#include "nuner/corpus/text.hpp"
#include "nuner/encoder/checkpoint.hpp"
#include "nuner/fewshot/fewshot.hpp"
#include "nuner/numerics/gradcheck.hpp"
#include "nuner/pretrain/pretrain.hpp"

namespace py = pybind11;
using namespace nuner;
using json = nlohmann::json;

namespace {

std::string dataset_json(const corpus::Dataset& ds) {
  json sentences = json::array();
  for (const auto& s : ds.sentences) sentences.push_back(corpus::sentence_to_json(s));
  return json{{"entity_types", ds.entity_types}, {"sentences", sentences}}.dump();
}

std::vector<corpus::AnnotatedSentence> sentences_from_json(const std::string& text) {
  std::vector<corpus::AnnotatedSentence> out;
  for (const auto& j : json::parse(text)) out.push_back(corpus::sentence_from_json(j));
  return out;
}

json type_scores_json(const fs::TokenScores& s) {
  json types = json::array();
  for (const auto& t : s.per_type)
    types.push_back({{"type", t.type}, {"tp", t.tp}, {"fp", t.fp}, {"fn", t.fn}, {"precision", t.precision},
                     {"recall", t.recall}, {"f1", t.f1}});
  return {{"macro_f1", s.macro_f1}, {"per_type", types}};
}

class PyCheckpoint {
 public:
  explicit PyCheckpoint(enc::Checkpoint c) : ckpt_(std::move(c)) {}
  static PyCheckpoint load(const std::filesystem::path& p) { return PyCheckpoint(enc::load_checkpoint(p)); }

  void save(const std::filesystem::path& p) const { enc::save_checkpoint(p, ckpt_); }
  std::string digest() const { return enc::checkpoint_digest(ckpt_); }
  std::string config() const { return enc::config_to_json(ckpt_.config).dump(); }
  std::size_t vocab_size() const { return ckpt_.vocab.size(); }
  std::size_t parameter_count() const { return ckpt_.parameter_count(); }
  std::string stage() const { return ckpt_.metadata.stage; }

  std::vector<std::string> tensor_names() const {
    std::vector<std::string> out;
    for (const auto& t : ckpt_.tensors) out.push_back(t.name);
    return out;
  }

  py::array_t<double> tensor(const std::string& name) const {
    for (const auto& t : ckpt_.tensors) {
      if (t.name != name) continue;
      py::array_t<double> a(std::vector<py::ssize_t>(t.shape.begin(), t.shape.end()));
      std::memcpy(a.mutable_data(), t.data.data(), t.data.size() * sizeof(double));
      return a;
    }
    throw py::key_error(name);
  }

  /// Eval-mode token features [T x d] of a tokenized sentence.
  py::array_t<float> encode(const std::string& text) {
    if (!encoder_) encoder_.emplace(enc::encoder_from_checkpoint<float>(ckpt_));
    fs::NerSentence s;
    s.tokens = corpus::tokenize(text);
    if (s.tokens.empty()) throw std::invalid_argument("encode: sentence has no tokens");
    s.labels.assign(s.tokens.size(), fs::kNone);
    const auto f = fs::sentence_features(*encoder_, s);
    py::array_t<float> a({static_cast<py::ssize_t>(f.shape()[0]), static_cast<py::ssize_t>(f.shape()[1])});
    std::memcpy(a.mutable_data(), f.data(), f.shape()[0] * f.shape()[1] * sizeof(float));
    return a;
  }

  const enc::Checkpoint& get() const { return ckpt_; }

 private:
  enc::Checkpoint ckpt_;
  std::optional<enc::TransformerEncoder<float>> encoder_;
};

}  // namespace

PYBIND11_MODULE(_nuner, m) {
  m.doc() = "Native core of the nuner package";
  py::register_exception<fs::InfeasibleSplit>(m, "InfeasibleSplit", PyExc_RuntimeError);
  py::register_exception<corpus::DatasetFormatError>(m, "DatasetFormatError", PyExc_ValueError);
  py::register_exception<enc::CheckpointError>(m, "CheckpointError", PyExc_ValueError);

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "nuner");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        py::gil_scoped_release release;
        return cli::run(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs the command-line tool in-process and returns its exit code.");

  m.def("prompt_template", &ann::prompt_template);
  m.def("render_prompt", [](const std::string& s) { return ann::render_prompt(s); }, py::arg("sentence"));

  m.def("tokenize", [](const std::string& text) {
    std::vector<std::tuple<std::string, std::size_t, std::size_t>> out;
    for (const auto& t : corpus::tokenize(text)) out.emplace_back(t.text, t.char_start, t.char_end);
    return out;
  });
  m.def("parse_llm_output", [](const std::string& raw) {
    const auto parsed = corpus::parse_llm_output(raw);
    std::vector<std::tuple<std::string, std::string, std::optional<std::string>>> anns;
    for (const auto& a : parsed.annotations) anns.emplace_back(a.entity_text, a.concept_name, a.description);
    return std::make_pair(anns, parsed.skipped_lines);
  });
  m.def("_ingest_completion", [](std::string id, std::string text, const std::string& completion) {
    const auto r = corpus::ingest_completion(std::move(id), std::move(text), completion);
    return json{{"sentence", corpus::sentence_to_json(r.sentence)},
                {"skipped_lines", r.skipped_lines},
                {"unaligned", r.unaligned},
                {"duplicates", r.duplicates}}
        .dump();
  });

  m.def("_load_dataset", [](const std::filesystem::path& p) { return dataset_json(corpus::read_dataset(p)); });
  m.def("_save_dataset", [](const std::filesystem::path& p, const std::string& sentences,
                            const std::vector<std::string>& entity_types) {
    corpus::Dataset ds;
    ds.sentences = sentences_from_json(sentences);
    ds.entity_types = entity_types;
    corpus::write_dataset(p, ds);
  });
  m.def("concept_vocab",
        [](const std::filesystem::path& p) { return corpus::build_concept_vocab(corpus::read_dataset(p)).entries; });

  m.def("_target_array", [](const std::string& sentences, const std::vector<std::string>& concepts) {
    const auto batch = sentences_from_json(sentences);
    const auto t = pre::build_target_array(batch, concepts);
    const auto S = static_cast<py::ssize_t>(t.sentences), T = static_cast<py::ssize_t>(t.max_tokens),
               C = static_cast<py::ssize_t>(t.concepts);
    py::array_t<std::uint8_t> cells({S, T, C});
    py::array_t<std::uint8_t> mask({S, T});
    std::copy(t.cells.begin(), t.cells.end(), cells.mutable_data());
    std::copy(t.mask.begin(), t.mask.end(), mask.mutable_data());
    return std::make_pair(cells, mask);
  });
  m.def("_collect_batch_concepts",
        [](const std::string& sentences) { return pre::collect_batch_concepts(sentences_from_json(sentences)); });

  m.def("_token_macro_f1", [](const fs::LabelSequences& pred, const fs::LabelSequences& gold,
                              const std::vector<std::string>& types) {
    return type_scores_json(fs::token_macro_f1(pred, gold, types)).dump();
  });
  m.def("_entity_micro_f1", [](const fs::LabelSequences& pred, const fs::LabelSequences& gold,
                               const std::vector<std::string>& types) {
    const auto e = fs::entity_micro_f1(pred, gold, types);
    return json{{"tp", e.tp}, {"fp", e.fp}, {"fn", e.fn}, {"precision", e.precision}, {"recall", e.recall},
                {"f1", e.f1}}
        .dump();
  });
  m.def("decode_spans", [](const std::vector<int>& labels) {
    std::vector<std::tuple<int, std::size_t, std::size_t>> out;
    for (const auto& s : fs::decode_spans(labels)) out.emplace_back(s.label, s.token_start, s.token_end);
    return out;
  });
  m.def(
      "sample_k_2k",
      [](const std::filesystem::path& p, std::size_t k, std::uint64_t seed) {
        const auto ner = fs::to_ner_dataset(corpus::read_dataset(p));
        const auto split = fs::sample_k_2k(ner, k, seed);
        return std::make_pair(split.ids, split.counts);
      },
      py::arg("dataset"), py::arg("k"), py::arg("seed") = 0,
      "Sentence ids and per-type entity counts of a k~2k split of a NER dataset file.");

  m.def("gradcheck_ops", [](double tolerance, std::uint64_t seed) {
    std::vector<std::tuple<std::string, double, bool>> out;
    for (const auto& op : num::op_gradient_suite(tolerance, seed))
      out.emplace_back(op.op, op.report.max_relative_error, op.report.passed);
    return out;
  }, py::arg("tolerance") = 1e-6, py::arg("seed") = 0);

  py::class_<PyCheckpoint>(m, "Checkpoint")
      .def_static("load", &PyCheckpoint::load, py::arg("path"))
      .def("save", &PyCheckpoint::save, py::arg("path"))
      .def_property_readonly("digest", &PyCheckpoint::digest)
      .def_property_readonly("_config", &PyCheckpoint::config)
      .def_property_readonly("vocab_size", &PyCheckpoint::vocab_size)
      .def_property_readonly("parameter_count", &PyCheckpoint::parameter_count)
      .def_property_readonly("stage", &PyCheckpoint::stage)
      .def("tensor_names", &PyCheckpoint::tensor_names)
      .def("tensor", &PyCheckpoint::tensor, py::arg("name"))
      .def("encode", &PyCheckpoint::encode, py::arg("text"))
      .def("__eq__", [](const PyCheckpoint& a, const PyCheckpoint& b) { return a.get() == b.get(); });
}
