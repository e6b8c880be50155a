#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nuner/corpus/types.hpp"
#include "nuner/encoder/checkpoint.hpp"
#include "nuner/encoder/model.hpp"
#include "nuner/numerics/optim.hpp"

namespace nuner::pre {

using corpus::AnnotatedSentence;

struct PretrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 48;
  double lr_max = 3e-5;
  double tau = 5.0;
  double warmup_fraction = 0.1;
  double validation_fraction = 0.1;
  /// Unset means num_layers / 2 of the text encoder.
  std::optional<std::size_t> freeze_bottom;
  /// Whether the embedding tables count as bottom layers when freezing.
  bool freeze_embeddings = true;
  std::uint64_t seed = 0;
  num::AdamWConfig adamw;
  /// Vocabulary size cap when no initial checkpoint supplies one.
  std::size_t max_vocab = 20000;

  void validate() const;
};

nlohmann::json pretrain_config_to_json(const PretrainConfig& config);
PretrainConfig pretrain_config_from_json(const nlohmann::json& j);

/// Binary S x T x C array plus an S x T validity mask, row-major.
struct TargetArray {
  std::size_t sentences = 0;
  std::size_t max_tokens = 0;
  std::size_t concepts = 0;
  std::vector<std::uint8_t> cells;
  std::vector<std::uint8_t> mask;

  std::uint8_t at(std::size_t s, std::size_t t, std::size_t c) const {
    return cells[(s * max_tokens + t) * concepts + c];
  }
  bool valid(std::size_t s, std::size_t t) const { return mask[s * max_tokens + t] != 0; }
};

/// Unique concepts over all annotations, in order of first appearance.
std::vector<std::string> collect_batch_concepts(std::span<const AnnotatedSentence> batch);

/// Cell (s, t, c) is 1 iff token t of sentence s lies inside an annotation
/// with concept c. Throws std::logic_error when an annotation's concept is
/// missing from `concepts`.
TargetArray build_target_array(std::span<const AnnotatedSentence> batch,
                               const std::vector<std::string>& concepts);

/// Masked mean BCE of the batch, recorded on `tape`. Absent when the batch has
/// no concepts. Tokens beyond the text encoder's max length are masked out.
template <typename Real>
std::optional<num::Var<Real>> contrastive_loss(num::Tape<Real>& tape, enc::TransformerEncoder<Real>& text,
                                               enc::ConceptEncoder<Real>& concepts,
                                               std::span<const AnnotatedSentence> batch, Real tau,
                                               const enc::ForwardOptions& options = {});

/// contrastive_loss followed by backward; gradients accumulate into both
/// encoders (frozen parameters excluded). Returns the loss value.
template <typename Real>
std::optional<double> contrastive_step(enc::TransformerEncoder<Real>& text, enc::ConceptEncoder<Real>& concepts,
                                       std::span<const AnnotatedSentence> batch, Real tau,
                                       const enc::ForwardOptions& options = {});

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr_end = 0.0;
  double wall_time_s = 0.0;
};

nlohmann::json epoch_metrics_to_json(const EpochMetrics& m);
void write_metrics_jsonl(const std::filesystem::path& path, const std::vector<EpochMetrics>& metrics);

struct PretrainResult {
  enc::Checkpoint text;
  /// Kept for inspection only; downstream evaluation uses `text`.
  enc::Checkpoint concept_encoder;
  std::vector<EpochMetrics> metrics;
  /// One entry per optimizer step that had concepts.
  std::vector<double> step_losses;
  std::vector<std::string> train_ids;
  std::vector<std::string> validation_ids;
};

/// Called after every epoch; returning false stops training early.
using EpochCallback = std::function<bool(const EpochMetrics&)>;

/// Contrastive pre-training. With `init`, both encoders start from that
/// checkpoint (and use its vocabulary and architecture); otherwise they are
/// initialized independently from the seed with `encoder_config` and a
/// vocabulary built from the dataset. Throws std::invalid_argument on an
/// empty dataset.
PretrainResult pretrain_run(const corpus::Dataset& dataset, const PretrainConfig& config,
                            const enc::EncoderConfig& encoder_config = {},
                            const std::optional<enc::Checkpoint>& init = std::nullopt,
                            const EpochCallback& on_epoch = {});

/// Deterministic sentence-level split: returns (train, validation) indices.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double validation_fraction,
                                                                            std::uint64_t seed);

// Masked language modelling, used to produce a base checkpoint.

struct MlmConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  double lr_max = 1e-3;
  double warmup_fraction = 0.1;
  double mask_probability = 0.15;
  std::uint64_t seed = 0;
  num::AdamWConfig adamw;
  std::size_t max_vocab = 20000;

  void validate() const;
};

nlohmann::json mlm_config_to_json(const MlmConfig& config);
MlmConfig mlm_config_from_json(const nlohmann::json& j);

struct MaskedSequence {
  std::vector<int> inputs;
  /// Original id at selected positions, -1 elsewhere.
  std::vector<int> labels;
};

/// Selects each position with probability p; a selected token becomes [MASK]
/// 80% of the time, a uniformly random non-reserved id 10%, and stays
/// unchanged 10%.
MaskedSequence mask_tokens(std::span<const int> ids, std::size_t vocab_size, double p, std::mt19937_64& rng);

struct MlmEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double masked_accuracy = 0.0;
  double wall_time_s = 0.0;
};

struct MlmResult {
  enc::Checkpoint base;
  std::vector<MlmEpoch> epochs;
  double initial_loss = 0.0;
};

/// Mean cross-entropy over masked positions of a batch, with the output layer
/// tied to the token embedding plus a bias. Also returns the number of
/// correct argmax predictions through `correct`.
num::Var<float> mlm_loss(num::Tape<float>& tape, enc::TransformerEncoder<float>& encoder,
                         num::Parameter<float>& output_bias, std::span<const MaskedSequence> batch,
                         const enc::ForwardOptions& options, std::size_t* correct = nullptr);

/// Throws std::invalid_argument on an empty corpus.
MlmResult mlm_run(const std::vector<std::string>& texts, const MlmConfig& config,
                  const enc::EncoderConfig& encoder_config = {});

}  // namespace nuner::pre
