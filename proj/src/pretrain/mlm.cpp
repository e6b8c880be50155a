#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "nuner/numerics/ops.hpp"
#include "nuner/pretrain/pretrain.hpp"

namespace nuner::pre {

void MlmConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("mlm: batch_size must be positive");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) {
    throw std::invalid_argument("mlm: warmup_fraction must be in (0, 1)");
  }
  if (!(mask_probability > 0.0 && mask_probability < 1.0)) {
    throw std::invalid_argument("mlm: mask_probability must be in (0, 1)");
  }
  if (max_vocab < 3) throw std::invalid_argument("mlm: max_vocab must be at least 3");
}

nlohmann::json mlm_config_to_json(const MlmConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr_max", c.lr_max},
          {"warmup_fraction", c.warmup_fraction},
          {"mask_probability", c.mask_probability},
          {"seed", c.seed},
          {"beta1", c.adamw.beta1},
          {"beta2", c.adamw.beta2},
          {"adam_eps", c.adamw.eps},
          {"weight_decay", c.adamw.weight_decay},
          {"max_vocab", c.max_vocab}};
}

MlmConfig mlm_config_from_json(const nlohmann::json& j) {
  MlmConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "epochs") c.epochs = v.get<std::size_t>();
    else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
    else if (key == "lr_max") c.lr_max = v.get<double>();
    else if (key == "warmup_fraction") c.warmup_fraction = v.get<double>();
    else if (key == "mask_probability") c.mask_probability = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "beta1") c.adamw.beta1 = v.get<double>();
    else if (key == "beta2") c.adamw.beta2 = v.get<double>();
    else if (key == "adam_eps") c.adamw.eps = v.get<double>();
    else if (key == "weight_decay") c.adamw.weight_decay = v.get<double>();
    else if (key == "max_vocab") c.max_vocab = v.get<std::size_t>();
    else throw std::invalid_argument("mlm config: unknown key " + key);
  }
  return c;
}

MaskedSequence mask_tokens(std::span<const int> ids, std::size_t vocab_size, double p, std::mt19937_64& rng) {
  if (vocab_size < 3) throw std::invalid_argument("mask_tokens: vocabulary too small");
  MaskedSequence out{std::vector<int>(ids.begin(), ids.end()), std::vector<int>(ids.size(), -1)};
  const std::uint64_t regular = vocab_size - 2;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (num::uniform01(rng) >= p) continue;
    out.labels[i] = ids[i];
    const double r = num::uniform01(rng);
    if (r < 0.8) {
      out.inputs[i] = enc::Vocab::kMask;
    } else if (r < 0.9) {
      out.inputs[i] = 2 + static_cast<int>(rng() % regular);
    }
  }
  return out;
}

num::Var<float> mlm_loss(num::Tape<float>& tape, enc::TransformerEncoder<float>& encoder,
                         num::Parameter<float>& output_bias, std::span<const MaskedSequence> batch,
                         const enc::ForwardOptions& options, std::size_t* correct) {
  const std::size_t max_len = encoder.config().max_sequence_length;
  num::Var<float> embedding_t = num::transpose(tape.leaf(encoder.parameter("embed.tokens")));
  num::Var<float> bias = tape.leaf(output_bias);
  std::vector<num::Var<float>> blocks;
  std::vector<int> labels;
  for (const auto& seq : batch) {
    const std::size_t used = std::min(seq.inputs.size(), max_len);
    bool any = false;
    for (std::size_t i = 0; i < used; ++i) any = any || seq.labels[i] >= 0;
    if (!any) continue;
    // Only masked rows reach the output layer.
    std::vector<int> rows;
    for (std::size_t i = 0; i < used; ++i) {
      if (seq.labels[i] >= 0) rows.push_back(static_cast<int>(i));
    }
    num::Var<float> h = encoder.encode(tape, std::span<const int>(seq.inputs).first(used), options);
    num::Var<float> picked = num::embedding_lookup(h, std::span<const int>(rows));
    blocks.push_back(num::add(num::matmul(picked, embedding_t), bias));
    for (int r : rows) labels.push_back(seq.labels[static_cast<std::size_t>(r)]);
  }
  if (blocks.empty()) return tape.constant(num::Tensor<float>({1}));
  num::Var<float> logits = blocks.size() == 1 ? blocks[0] : num::concat(blocks, 0);
  if (correct) {
    const auto& lv = logits.value();
    for (std::size_t i = 0; i < lv.rows(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < lv.cols(); ++j) {
        if (lv.at(i, j) > lv.at(i, best)) best = j;
      }
      *correct += static_cast<int>(best) == labels[i] ? 1 : 0;
    }
  }
  return num::softmax_cross_entropy(logits, std::span<const int>(labels));
}

MlmResult mlm_run(const std::vector<std::string>& texts, const MlmConfig& config,
                  const enc::EncoderConfig& encoder_config) {
  config.validate();
  if (texts.empty()) throw std::invalid_argument("mlm_run: empty corpus");
  enc::Vocab vocab = enc::build_vocab(texts, config.max_vocab);
  enc::EncoderConfig ec = encoder_config;
  ec.vocab_size = vocab.size();
  enc::TextEncoder<float> encoder(ec, vocab, config.seed * 2 + 1);
  encoder.freeze_bottom_layers(0);
  num::Parameter<float> output_bias("mlm.output_bias", num::Tensor<float>({1, vocab.size()}));

  std::vector<std::vector<int>> corpus_ids;
  for (const auto& t : texts) {
    auto ids = vocab.encode(t);
    if (!ids.empty()) corpus_ids.push_back(std::move(ids));
  }
  std::vector<num::Parameter<float>*> params = encoder.parameters();
  params.push_back(&output_bias);

  std::mt19937_64 rng(config.seed ^ 0xD1B54A32D192ED03ull);
  const enc::ForwardOptions train_options{.training = true, .rng = &rng};
  const std::size_t steps_per_epoch = (corpus_ids.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs;

  MlmResult result;
  {
    // Loss of the untrained model on one masked pass, in eval mode.
    std::mt19937_64 probe_rng(config.seed);
    std::vector<MaskedSequence> probe;
    for (std::size_t i = 0; i < std::min<std::size_t>(corpus_ids.size(), 256); ++i) {
      probe.push_back(mask_tokens(corpus_ids[i], vocab.size(), config.mask_probability, probe_rng));
    }
    num::Tape<float> tape;
    result.initial_loss = mlm_loss(tape, encoder, output_bias, probe, {}).value()[0];
  }

  std::vector<std::size_t> order(corpus_ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> losses;
  std::size_t step = 0;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t counted = 0, masked = 0, correct = 0;
    std::vector<MaskedSequence> batch;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      batch.clear();
      for (std::size_t i = b; i < std::min(order.size(), b + config.batch_size); ++i) {
        batch.push_back(mask_tokens(corpus_ids[order[i]], vocab.size(), config.mask_probability, rng));
        for (int l : batch.back().labels) masked += l >= 0 ? 1 : 0;
      }
      const double lr = num::lr_schedule(step, total_steps, config.warmup_fraction, config.lr_max);
      num::Tape<float> tape;
      num::Var<float> loss = mlm_loss(tape, encoder, output_bias, batch, train_options, &correct);
      tape.backward(loss);
      num::adamw_step<float>(params, lr, config.adamw);
      total += loss.value()[0];
      losses.push_back(loss.value()[0]);
      ++counted;
      ++step;
    }
    MlmEpoch e;
    e.epoch = epoch;
    e.train_loss = counted ? total / static_cast<double>(counted) : 0.0;
    e.masked_accuracy = masked ? static_cast<double>(correct) / static_cast<double>(masked) : 0.0;
    e.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.epochs.push_back(e);
  }
  result.base = enc::make_checkpoint<float>(
      encoder, {.step = static_cast<std::int64_t>(step),
                .seed = config.seed,
                .loss_history_digest = enc::loss_history_digest(losses),
                .stage = "mlm"});
  return result;
}

}  // namespace nuner::pre
