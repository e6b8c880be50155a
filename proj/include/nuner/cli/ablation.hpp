#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nuner/corpus/types.hpp"
#include "nuner/encoder/checkpoint.hpp"
#include "nuner/fewshot/fewshot.hpp"
#include "nuner/pretrain/pretrain.hpp"

namespace nuner::cli {

struct AblationInputs {
  pre::PretrainConfig pretrain;
  enc::EncoderConfig encoder;
  std::optional<enc::Checkpoint> init;
  fs::NerDataset train_pool;
  fs::NerDataset test;
  /// k_values is replaced by the single ablation k.
  fs::ProtocolConfig protocol;
  std::size_t k = 8;
};

struct AblationRow {
  /// Concept count (0 = all) or corpus size.
  std::size_t value = 0;
  std::size_t sentences = 0;
  std::size_t annotations = 0;
  std::size_t concepts = 0;
  std::vector<pre::EpochMetrics> metrics;
  fs::ProtocolRow result;
};

struct AblationReport {
  /// "concepts" or "size".
  std::string kind;
  std::size_t k = 0;
  std::vector<AblationRow> rows;
  nlohmann::json metadata;
};

using Progress = std::function<void(const std::string&)>;

/// One pre-training run per n on the corpus restricted to its n most
/// frequent concepts (0 = unrestricted), each followed by the few-shot
/// protocol at k.
AblationReport ablate_concepts(const corpus::Dataset& corpus, const std::vector<std::size_t>& concept_n,
                               const AblationInputs& inputs, const Progress& progress = {});

/// One pre-training run per size on a seeded subsample of the corpus.
AblationReport ablate_size(const corpus::Dataset& corpus, const std::vector<std::size_t>& sizes,
                           const AblationInputs& inputs, const Progress& progress = {});

nlohmann::json ablation_to_json(const AblationReport& report);
std::string ablation_to_text(const AblationReport& report);

}  // namespace nuner::cli
