#include "nuner/pretrain/pretrain.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "nuner/encoder/vocab.hpp"

namespace nuner::pre {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

void PretrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("pretrain: batch_size must be positive");
  if (!(lr_max >= 0.0)) throw std::invalid_argument("pretrain: lr_max must be non-negative");
  if (!(tau > 0.0)) throw std::invalid_argument("pretrain: tau must be positive");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) {
    throw std::invalid_argument("pretrain: warmup_fraction must be in (0, 1)");
  }
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("pretrain: validation_fraction must be in (0, 1)");
  }
  if (max_vocab < 3) throw std::invalid_argument("pretrain: max_vocab must be at least 3");
}

nlohmann::json pretrain_config_to_json(const PretrainConfig& c) {
  nlohmann::json j = {
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"lr_max", c.lr_max},
      {"tau", c.tau},
      {"warmup_fraction", c.warmup_fraction},
      {"validation_fraction", c.validation_fraction},
      {"seed", c.seed},
      {"beta1", c.adamw.beta1},
      {"beta2", c.adamw.beta2},
      {"adam_eps", c.adamw.eps},
      {"weight_decay", c.adamw.weight_decay},
      {"max_vocab", c.max_vocab},
      {"freeze_embeddings", c.freeze_embeddings},
  };
  j["freeze_bottom"] = c.freeze_bottom ? nlohmann::json(*c.freeze_bottom) : nlohmann::json(nullptr);
  return j;
}

PretrainConfig pretrain_config_from_json(const nlohmann::json& j) {
  PretrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "epochs") c.epochs = v.get<std::size_t>();
    else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
    else if (key == "lr_max") c.lr_max = v.get<double>();
    else if (key == "tau") c.tau = v.get<double>();
    else if (key == "warmup_fraction") c.warmup_fraction = v.get<double>();
    else if (key == "validation_fraction") c.validation_fraction = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "beta1") c.adamw.beta1 = v.get<double>();
    else if (key == "beta2") c.adamw.beta2 = v.get<double>();
    else if (key == "adam_eps") c.adamw.eps = v.get<double>();
    else if (key == "weight_decay") c.adamw.weight_decay = v.get<double>();
    else if (key == "max_vocab") c.max_vocab = v.get<std::size_t>();
    else if (key == "freeze_embeddings") c.freeze_embeddings = v.get<bool>();
    else if (key == "freeze_bottom") {
      if (v.is_null()) c.freeze_bottom.reset();
      else c.freeze_bottom = v.get<std::size_t>();
    } else {
      throw std::invalid_argument("pretrain config: unknown key " + key);
    }
  }
  return c;
}

std::vector<std::string> collect_batch_concepts(std::span<const AnnotatedSentence> batch) {
  std::vector<std::string> out;
  for (const auto& s : batch) {
    for (const auto& a : s.annotations) {
      if (std::find(out.begin(), out.end(), a.concept_name) == out.end()) out.push_back(a.concept_name);
    }
  }
  return out;
}

TargetArray build_target_array(std::span<const AnnotatedSentence> batch, const std::vector<std::string>& concepts) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < concepts.size(); ++c) index.emplace(concepts[c], c);
  TargetArray out;
  out.sentences = batch.size();
  out.concepts = concepts.size();
  for (const auto& s : batch) out.max_tokens = std::max(out.max_tokens, s.tokens.size());
  out.cells.assign(out.sentences * out.max_tokens * out.concepts, 0);
  out.mask.assign(out.sentences * out.max_tokens, 0);
  for (std::size_t si = 0; si < batch.size(); ++si) {
    const auto& s = batch[si];
    for (std::size_t t = 0; t < s.tokens.size(); ++t) out.mask[si * out.max_tokens + t] = 1;
    for (const auto& a : s.annotations) {
      auto it = index.find(a.concept_name);
      if (it == index.end()) {
        throw std::logic_error("build_target_array: concept '" + a.concept_name + "' is not in the batch list");
      }
      if (a.token_end > s.tokens.size() || a.token_start > a.token_end) {
        throw std::logic_error("build_target_array: annotation token span out of range in " + s.id);
      }
      for (std::size_t t = a.token_start; t < a.token_end; ++t) {
        out.cells[(si * out.max_tokens + t) * out.concepts + it->second] = 1;
      }
    }
  }
  return out;
}

template <typename Real>
std::optional<num::Var<Real>> contrastive_loss(num::Tape<Real>& tape, enc::TransformerEncoder<Real>& text,
                                               enc::ConceptEncoder<Real>& concept_encoder,
                                               std::span<const AnnotatedSentence> batch, Real tau,
                                               const enc::ForwardOptions& options) {
  const std::vector<std::string> concepts = collect_batch_concepts(batch);
  if (concepts.empty()) return std::nullopt;
  const TargetArray targets = build_target_array(batch, concepts);
  const std::size_t T = targets.max_tokens, C = concepts.size();
  const std::size_t max_len = text.config().max_sequence_length;

  std::vector<num::Var<Real>> concept_rows;
  concept_rows.reserve(C);
  for (const auto& name : concepts) concept_rows.push_back(concept_encoder.encode_concept(tape, name, options));
  num::Var<Real> concept_vecs = C == 1 ? concept_rows[0] : num::concat(concept_rows, 0);

  std::vector<num::Var<Real>> blocks;
  std::vector<std::uint8_t> row_mask(batch.size() * T, 0);
  num::Tensor<Real> target_matrix({batch.size() * T, C});
  for (std::size_t si = 0; si < batch.size(); ++si) {
    const auto& s = batch[si];
    const std::size_t used = std::min(s.tokens.size(), max_len);
    if (used > 0) {
      const std::vector<int> ids = text.vocab().encode(s.tokens);
      num::Var<Real> vecs = text.encode(tape, std::span<const int>(ids).first(used), options);
      blocks.push_back(enc::score_concepts(vecs, concept_vecs, tau));
    }
    if (used < T) blocks.push_back(tape.constant(num::Tensor<Real>({T - used, C})));
    for (std::size_t t = 0; t < T; ++t) {
      row_mask[si * T + t] = t < used && targets.valid(si, t) ? 1 : 0;
      for (std::size_t c = 0; c < C; ++c) target_matrix.at(si * T + t, c) = static_cast<Real>(targets.at(si, t, c));
    }
  }
  num::Var<Real> probs = blocks.size() == 1 ? blocks[0] : num::concat(blocks, 0);
  return num::bce_loss(probs, target_matrix, row_mask);
}

template <typename Real>
std::optional<double> contrastive_step(enc::TransformerEncoder<Real>& text, enc::ConceptEncoder<Real>& concepts,
                                       std::span<const AnnotatedSentence> batch, Real tau,
                                       const enc::ForwardOptions& options) {
  num::Tape<Real> tape;
  auto loss = contrastive_loss(tape, text, concepts, batch, tau, options);
  if (!loss) return std::nullopt;
  tape.backward(*loss);
  return static_cast<double>(loss->value()[0]);
}

template std::optional<num::Var<float>> contrastive_loss(num::Tape<float>&, enc::TransformerEncoder<float>&,
                                                         enc::ConceptEncoder<float>&,
                                                         std::span<const AnnotatedSentence>, float,
                                                         const enc::ForwardOptions&);
template std::optional<num::Var<double>> contrastive_loss(num::Tape<double>&, enc::TransformerEncoder<double>&,
                                                          enc::ConceptEncoder<double>&,
                                                          std::span<const AnnotatedSentence>, double,
                                                          const enc::ForwardOptions&);
template std::optional<double> contrastive_step(enc::TransformerEncoder<float>&, enc::ConceptEncoder<float>&,
                                                std::span<const AnnotatedSentence>, float,
                                                const enc::ForwardOptions&);
template std::optional<double> contrastive_step(enc::TransformerEncoder<double>&, enc::ConceptEncoder<double>&,
                                                std::span<const AnnotatedSentence>, double,
                                                const enc::ForwardOptions&);

nlohmann::json epoch_metrics_to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},
          {"train_loss", m.train_loss},
          {"val_loss", m.val_loss},
          {"lr_end", m.lr_end},
          {"wall_time_s", m.wall_time_s}};
}

void write_metrics_jsonl(const std::filesystem::path& path, const std::vector<EpochMetrics>& metrics) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& m : metrics) out << epoch_metrics_to_json(m).dump() << "\n";
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double validation_fraction,
                                                                            std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(n)));
  if (n >= 2) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  else n_val = 0;
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

namespace {

template <typename Real>
double evaluate_loss(enc::TransformerEncoder<Real>& text, enc::ConceptEncoder<Real>& concepts,
                     const std::vector<AnnotatedSentence>& sentences, std::size_t batch_size, Real tau) {
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t b = 0; b < sentences.size(); b += batch_size) {
    const std::size_t end = std::min(sentences.size(), b + batch_size);
    std::span<const AnnotatedSentence> batch(sentences.data() + b, end - b);
    num::Tape<Real> tape;
    auto loss = contrastive_loss(tape, text, concepts, batch, tau);
    if (!loss) continue;
    total += static_cast<double>(loss->value()[0]);
    ++counted;
  }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

}  // namespace

PretrainResult pretrain_run(const corpus::Dataset& dataset, const PretrainConfig& config,
                            const enc::EncoderConfig& encoder_config, const std::optional<enc::Checkpoint>& init,
                            const EpochCallback& on_epoch) {
  config.validate();
  if (dataset.sentences.empty()) throw std::invalid_argument("pretrain_run: empty dataset");

  auto [train_idx, val_idx] = split_indices(dataset.size(), config.validation_fraction, config.seed);
  std::vector<AnnotatedSentence> train, validation;
  PretrainResult result;
  for (std::size_t i : train_idx) {
    train.push_back(dataset.sentences[i]);
    result.train_ids.push_back(dataset.sentences[i].id);
  }
  for (std::size_t i : val_idx) {
    validation.push_back(dataset.sentences[i]);
    result.validation_ids.push_back(dataset.sentences[i].id);
  }

  std::optional<enc::TextEncoder<float>> text;
  std::optional<enc::ConceptEncoder<float>> concepts;
  if (init) {
    text.emplace(enc::encoder_from_checkpoint<float>(*init, "text"));
    concepts.emplace(enc::encoder_from_checkpoint<float>(*init, "concept"));
  } else {
    enc::EncoderConfig ec = encoder_config;
    enc::Vocab vocab = enc::build_vocab(dataset, config.max_vocab);
    ec.vocab_size = vocab.size();
    text.emplace(ec, vocab, config.seed * 2 + 1);
    concepts.emplace(ec, vocab, config.seed * 2 + 2);
  }
  const std::size_t freeze = config.freeze_bottom.value_or(text->config().resolved_freeze_bottom());
  text->freeze_bottom_layers(freeze, config.freeze_embeddings);
  concepts->freeze_bottom_layers(0);

  std::vector<num::Parameter<float>*> params = text->parameters();
  for (auto* p : concepts->parameters()) params.push_back(p);

  std::mt19937_64 rng(config.seed ^ 0x9E3779B97F4A7C15ull);
  const enc::ForwardOptions train_options{.training = true, .rng = &rng};
  const std::size_t steps_per_epoch = train.empty() ? 0 : ceil_div(train.size(), config.batch_size);
  const std::size_t total_steps = steps_per_epoch * config.epochs;
  const float tau = static_cast<float>(config.tau);
  std::size_t step = 0;
  double lr = 0.0;
  const auto start = Clock::now();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<AnnotatedSentence> batch;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    std::size_t epoch_counted = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      batch.clear();
      for (std::size_t i = b; i < std::min(order.size(), b + config.batch_size); ++i) batch.push_back(train[order[i]]);
      lr = num::lr_schedule(step, total_steps, config.warmup_fraction, config.lr_max);
      auto loss = contrastive_step<float>(*text, *concepts, batch, tau, train_options);
      if (loss) {
        num::adamw_step<float>(params, lr, config.adamw);
        epoch_total += *loss;
        ++epoch_counted;
        result.step_losses.push_back(*loss);
      }
      ++step;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = epoch_counted ? epoch_total / static_cast<double>(epoch_counted) : 0.0;
    m.val_loss = evaluate_loss<float>(*text, *concepts, validation, config.batch_size, tau);
    m.lr_end = lr;
    m.wall_time_s = seconds_since(start);
    result.metrics.push_back(m);
    if (on_epoch && !on_epoch(m)) break;
  }

  enc::TrainingMetadata meta{.step = static_cast<std::int64_t>(step),
                             .seed = config.seed,
                             .loss_history_digest = enc::loss_history_digest(result.step_losses),
                             .stage = "pretrain"};
  result.text = enc::make_checkpoint<float>(*text, meta);
  result.concept_encoder = enc::make_checkpoint<float>(*concepts, meta);
  return result;
}

}  // namespace nuner::pre
