#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "nuner/annotator/annotator.hpp"
#include "nuner/corpus/synth.hpp"
#include "nuner/encoder/config.hpp"
#include "nuner/fewshot/fewshot.hpp"
#include "nuner/pretrain/pretrain.hpp"

namespace nuner::cli {

/// Invalid configuration or usage; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Corpus sizes for `data synth`.
struct SynthSizes {
  std::size_t pretrain_sentences = 2000;
  std::size_t ner_train_sentences = 400;
  std::size_t ner_test_sentences = 300;
};

struct AblationConfig {
  /// Concept counts for top-n filtering; 0 keeps every concept.
  std::vector<std::size_t> concept_n = {2, 0};
  std::vector<std::size_t> sizes = {500, 2000};
  /// Shot count of the evaluation after each pre-training run.
  std::size_t k = 8;
};

/// Everything a command needs, resolved before any work starts. Module seeds
/// are not configured separately: resolve() derives them from `seed`.
struct RunConfig {
  std::uint64_t seed = 0;
  enc::EncoderConfig encoder;
  pre::PretrainConfig pretrain;
  pre::MlmConfig mlm;
  ann::AnnotatorConfig annotator;
  fs::ProtocolConfig fewshot;
  corpus::WorldOptions world;
  SynthSizes synth;
  AblationConfig ablation;
  /// Named input and output paths of the command, echoed with the config so
  /// that a run can be repeated from its echo alone.
  std::map<std::string, std::string> paths;

  /// Propagates the seed and validates every section. Throws ConfigError.
  void resolve();
};

/// Sections: seed, encoder, pretrain, mlm, annotator, fewshot, synth,
/// ablation, paths. Unknown sections or keys and per-module seeds throw
/// ConfigError.
RunConfig run_config_from_json(const nlohmann::json& doc);
nlohmann::json run_config_to_json(const RunConfig& config);

/// Reads a YAML document (JSON is accepted as a YAML subset) into JSON.
/// Quoted scalars stay strings; plain scalars become null, bool, integer or
/// float when they look like one.
nlohmann::json load_config_document(const std::filesystem::path& path);
nlohmann::json parse_yaml(std::string_view text);

/// Block-style YAML; floats use the shortest round-trip form.
std::string to_yaml(const nlohmann::json& doc);

/// Applies "section.key=value" (value parsed as a YAML scalar or flow
/// sequence). Throws ConfigError on a malformed assignment.
void apply_override(nlohmann::json& doc, std::string_view assignment);

/// Creates base/<UTC timestamp>-<name>, adding a numeric suffix instead of
/// reusing an existing directory.
std::filesystem::path make_run_directory(const std::filesystem::path& base, const std::string& name);

}  // namespace nuner::cli
