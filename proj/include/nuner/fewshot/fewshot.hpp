#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nuner/corpus/types.hpp"
#include "nuner/encoder/checkpoint.hpp"
#include "nuner/encoder/model.hpp"
#include "nuner/numerics/optim.hpp"

namespace nuner::fs {

/// Label 0 is None; label i > 0 is types[i - 1].
inline constexpr int kNone = 0;

struct EntitySpan {
  int label = kNone;
  std::size_t token_start = 0;
  std::size_t token_end = 0;

  friend bool operator==(const EntitySpan&, const EntitySpan&) = default;
};

struct NerSentence {
  std::string id;
  std::vector<corpus::Token> tokens;
  std::vector<int> labels;
  std::vector<EntitySpan> entities;
};

struct NerDataset {
  std::vector<std::string> types;
  std::vector<NerSentence> sentences;
  /// Gold annotations dropped because a longer overlapping one was kept.
  std::size_t dropped_overlaps = 0;

  std::size_t num_classes() const { return types.size() + 1; }
};

/// Converts a dataset whose entity_types lists the closed type set. Every
/// covered token of a gold entity gets its type; of two overlapping entities
/// the longer is kept. Throws std::invalid_argument for an empty type list or
/// an annotation outside it.
NerDataset to_ner_dataset(const corpus::Dataset& dataset);

enum class SplitMode { kK2K, kWords };

struct FewShotSplit {
  std::vector<std::size_t> indices;
  std::vector<std::string> ids;
  /// Entity counts (k~2k) or labeled-token counts (words) per type.
  std::vector<std::size_t> counts;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  SplitMode mode = SplitMode::kK2K;
};

class InfeasibleSplit : public std::runtime_error {
 public:
  InfeasibleSplit(const std::string& what, std::vector<std::string> blocking_types)
      : std::runtime_error(what), blocking_types_(std::move(blocking_types)) {}
  const std::vector<std::string>& blocking_types() const { return blocking_types_; }

 private:
  std::vector<std::string> blocking_types_;
};

/// Entity counts per type (index 0 is types[0]).
std::vector<std::size_t> entity_counts(const NerSentence& sentence, std::size_t num_types);
/// Labeled-token counts per type.
std::vector<std::size_t> word_counts(const NerSentence& sentence, std::size_t num_types);

/// Greedy k~2k mining. Each attempt walks a seeded shuffle and accepts a
/// sentence when it holds a type still below k and keeps every type at or
/// below 2k; it succeeds once every type reaches k.
FewShotSplit sample_k_2k(const NerDataset& dataset, std::size_t k, std::uint64_t seed,
                         std::size_t max_attempts = 10000);

/// Adds, in seeded order, the first unused sentence covering the currently
/// most deficient type until every type has at least k_w labeled tokens.
FewShotSplit sample_k_words(const NerDataset& dataset, std::size_t k_w, std::uint64_t seed);

// Classification heads.

enum class HeadKind { kLinear, kTwoLayer };

/// Linear: d -> C. Two-layer: linear(d -> d), relu, dropout, linear(d -> C).
struct TokenHead {
  HeadKind kind = HeadKind::kLinear;
  double dropout_p = 0.0;
  std::vector<num::Parameter<float>> params;

  static TokenHead make(HeadKind kind, std::size_t dim, std::size_t classes, double dropout_p, std::uint64_t seed);
  num::Var<float> forward(num::Tape<float>& tape, num::Var<float> features, bool training,
                          std::mt19937_64* rng);
  num::Tensor<float> logits(const num::Tensor<float>& features);
  std::vector<num::Parameter<float>*> parameters();
};

struct HeadConfig {
  std::size_t epochs = 100;
  double lr = 1e-2;
  std::uint64_t seed = 0;
  num::AdamWConfig adamw;
};

struct HeadTraining {
  TokenHead head;
  std::vector<double> losses;
};

/// Eval-mode token features of one sentence ([T x d], truncated to the
/// encoder's maximum length).
num::Tensor<float> sentence_features(enc::TransformerEncoder<float>& encoder, const NerSentence& sentence);

/// Trains a linear head full-batch on precomputed eval-mode features. The
/// encoder is only read. Throws std::invalid_argument on an empty split.
HeadTraining train_frozen_head(enc::TransformerEncoder<float>& encoder, const NerDataset& dataset,
                               const FewShotSplit& split, const HeadConfig& config);

/// Same, from features already computed for every dataset sentence.
HeadTraining train_frozen_head(const std::vector<num::Tensor<float>>& features, const NerDataset& dataset,
                               const FewShotSplit& split, const HeadConfig& config);

struct FinetuneConfig {
  std::size_t epochs = 30;
  /// Encoder learning rate.
  double lr = 3e-4;
  double head_lr = 1e-2;
  std::size_t batch_size = 8;
  double dropout_p = 0.1;
  std::uint64_t seed = 0;
  num::AdamWConfig adamw;
};

struct FinetuneResult {
  enc::TextEncoder<float> encoder;
  TokenHead head;
  std::vector<double> epoch_losses;
};

/// Fine-tunes a copy of the encoder together with a two-layer head; every
/// encoder parameter is trainable. Throws std::invalid_argument on an empty
/// split.
FinetuneResult finetune_full(const enc::TransformerEncoder<float>& encoder, const NerDataset& dataset,
                             const FewShotSplit& split, const FinetuneConfig& config);

/// Row-wise argmax; ties go to the lowest class index.
std::vector<int> argmax_labels(const num::Tensor<float>& logits);

/// One label per token. Tokens past the encoder's maximum length are None.
std::vector<std::vector<int>> predict_labels(enc::TransformerEncoder<float>& encoder, TokenHead& head,
                                             std::span<const NerSentence> sentences);

// Metrics.

struct TypeScores {
  std::string type;
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct TokenScores {
  std::vector<TypeScores> per_type;
  double macro_f1 = 0.0;
};

struct EntityScores {
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

using LabelSequences = std::vector<std::vector<int>>;

/// Per-type token precision/recall/F1 and their unweighted mean over the
/// entity types (None excluded). Throws std::invalid_argument on misaligned
/// input or labels outside [0, types.size()].
TokenScores token_macro_f1(const LabelSequences& pred, const LabelSequences& gold,
                           const std::vector<std::string>& types);

/// Maximal runs of one non-None label, within a sentence.
std::vector<EntitySpan> decode_spans(std::span<const int> labels);

/// Exact (type, start, end) span matching with counts pooled over types.
EntityScores entity_micro_f1(const LabelSequences& pred, const LabelSequences& gold,
                             const std::vector<std::string>& types);

struct EvalReport {
  TokenScores tokens;
  EntityScores entities;
  nlohmann::json metadata;
};

nlohmann::json eval_report_to_json(const EvalReport& report);

EvalReport evaluate(const LabelSequences& pred, const NerDataset& test, nlohmann::json metadata = {});

// Protocol.

struct ProtocolConfig {
  SplitMode mode = SplitMode::kK2K;
  std::vector<std::size_t> k_values = {1, 2, 4, 8, 16};
  std::size_t runs_per_k = 10;
  HeadKind head = HeadKind::kLinear;
  HeadConfig frozen;
  FinetuneConfig finetune;
  std::uint64_t seed = 0;
  std::size_t max_attempts = 10000;
};

/// Keys: mode ("k2k" | "words"), k_values, runs_per_k, head ("linear" |
/// "finetune"), head_epochs, head_lr, finetune_epochs, finetune_lr,
/// finetune_head_lr, finetune_batch_size, finetune_dropout, max_attempts,
/// seed. Unknown keys throw std::invalid_argument.
nlohmann::json protocol_config_to_json(const ProtocolConfig& config);
ProtocolConfig protocol_config_from_json(const nlohmann::json& j);
/// Throws std::invalid_argument.
void validate(const ProtocolConfig& config);

struct ProtocolCell {
  std::size_t run = 0;
  std::uint64_t seed = 0;
  std::optional<EvalReport> report;
  /// Sampler failure message when the split was infeasible.
  std::string error;
};

struct ProtocolRow {
  std::size_t k = 0;
  std::vector<ProtocolCell> cells;
  std::size_t completed = 0;
  double macro_f1_mean = 0.0, macro_f1_std = 0.0;
  double micro_f1_mean = 0.0, micro_f1_std = 0.0;
};

struct ProtocolTable {
  std::vector<ProtocolRow> rows;
  nlohmann::json metadata;
};

/// Seed of run `run` at shot count k, derived from the base seed.
std::uint64_t derive_seed(std::uint64_t base, std::size_t k, std::size_t run);

/// For each k, samples runs_per_k splits from `train_pool`, trains the head,
/// and scores the full `test` set. Infeasible splits are recorded per cell.
ProtocolTable run_protocol(const enc::Checkpoint& checkpoint, const NerDataset& train_pool, const NerDataset& test,
                           const ProtocolConfig& config);

nlohmann::json protocol_to_json(const ProtocolTable& table);
std::string protocol_to_text(const ProtocolTable& table);

/// Mean and sample standard deviation (0 for fewer than two values).
std::pair<double, double> mean_std(std::span<const double> values);

}  // namespace nuner::fs
