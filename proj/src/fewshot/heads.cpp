#include <algorithm>
#include <numeric>

#include "nuner/fewshot/fewshot.hpp"
#include "nuner/numerics/ops.hpp"

namespace nuner::fs {

namespace {

constexpr double kHeadInitStd = 0.02;

num::Parameter<float> random_param(const std::string& name, num::Shape shape, std::mt19937_64& rng) {
  num::Tensor<float> t(std::move(shape));
  std::normal_distribution<double> normal(0.0, kHeadInitStd);
  for (float& v : t.storage()) v = static_cast<float>(normal(rng));
  return num::Parameter<float>(name, std::move(t));
}

num::Parameter<float> zero_param(const std::string& name, num::Shape shape) {
  return num::Parameter<float>(name, num::Tensor<float>(std::move(shape)));
}

void check_split(const NerDataset& dataset, const FewShotSplit& split) {
  if (split.indices.empty()) throw std::invalid_argument("few-shot split is empty");
  for (std::size_t i : split.indices) {
    if (i >= dataset.sentences.size()) throw std::out_of_range("few-shot split index outside the dataset");
  }
}

std::vector<int> truncated_labels(const NerSentence& s, std::size_t rows) {
  return std::vector<int>(s.labels.begin(), s.labels.begin() + static_cast<std::ptrdiff_t>(rows));
}

}  // namespace

TokenHead TokenHead::make(HeadKind kind, std::size_t dim, std::size_t classes, double dropout_p, std::uint64_t seed) {
  TokenHead head;
  head.kind = kind;
  head.dropout_p = dropout_p;
  std::mt19937_64 rng(seed);
  if (kind == HeadKind::kLinear) {
    head.params.push_back(random_param("head.w", {dim, classes}, rng));
    head.params.push_back(zero_param("head.b", {1, classes}));
  } else {
    head.params.push_back(random_param("head.w1", {dim, dim}, rng));
    head.params.push_back(zero_param("head.b1", {1, dim}));
    head.params.push_back(random_param("head.w2", {dim, classes}, rng));
    head.params.push_back(zero_param("head.b2", {1, classes}));
  }
  return head;
}

num::Var<float> TokenHead::forward(num::Tape<float>& tape, num::Var<float> x, bool training, std::mt19937_64* rng) {
  auto linear = [&](num::Var<float> in, std::size_t w) {
    return num::add(num::matmul(in, tape.leaf(params[w])), tape.leaf(params[w + 1]));
  };
  if (kind == HeadKind::kLinear) return linear(x, 0);
  num::Var<float> h = num::relu(linear(x, 0));
  if (training && dropout_p > 0.0) {
    if (!rng) throw std::invalid_argument("TokenHead: training dropout needs a random generator");
    h = num::dropout(h, dropout_p, *rng, true);
  }
  return linear(h, 2);
}

num::Tensor<float> TokenHead::logits(const num::Tensor<float>& features) {
  num::Tape<float> tape;
  return forward(tape, tape.constant(features), false, nullptr).value();
}

std::vector<num::Parameter<float>*> TokenHead::parameters() {
  std::vector<num::Parameter<float>*> out;
  for (auto& p : params) out.push_back(&p);
  return out;
}

num::Tensor<float> sentence_features(enc::TransformerEncoder<float>& encoder, const NerSentence& sentence) {
  const std::vector<int> ids = encoder.vocab().encode(sentence.tokens);
  const std::size_t used = std::min(ids.size(), encoder.config().max_sequence_length);
  if (used == 0) return num::Tensor<float>({0, encoder.config().model_dim});
  return encoder.encode(std::span<const int>(ids).first(used));
}

HeadTraining train_frozen_head(const std::vector<num::Tensor<float>>& features, const NerDataset& dataset,
                               const FewShotSplit& split, const HeadConfig& config) {
  check_split(dataset, split);
  if (features.size() != dataset.sentences.size()) {
    throw std::invalid_argument("train_frozen_head: one feature matrix per sentence is required");
  }
  std::vector<num::Tensor<float>> rows;
  std::vector<int> labels;
  std::size_t dim = 0;
  for (std::size_t i : split.indices) {
    const auto& f = features[i];
    dim = f.cols();
    if (f.rows() == 0) continue;
    rows.push_back(f);
    const auto l = truncated_labels(dataset.sentences[i], f.rows());
    labels.insert(labels.end(), l.begin(), l.end());
  }
  if (labels.empty()) throw std::invalid_argument("train_frozen_head: split has no tokens");
  std::vector<float> stacked;
  for (const auto& r : rows) stacked.insert(stacked.end(), r.storage().begin(), r.storage().end());
  const num::Tensor<float> x({labels.size(), dim}, std::move(stacked));

  HeadTraining out{TokenHead::make(HeadKind::kLinear, dim, dataset.num_classes(), 0.0, config.seed), {}};
  auto params = out.head.parameters();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    num::Tape<float> tape;
    num::Var<float> loss = num::softmax_cross_entropy(out.head.forward(tape, tape.constant(x), false, nullptr),
                                                      std::span<const int>(labels));
    tape.backward(loss);
    num::adamw_step<float>(params, config.lr, config.adamw);
    out.losses.push_back(loss.value()[0]);
  }
  return out;
}

HeadTraining train_frozen_head(enc::TransformerEncoder<float>& encoder, const NerDataset& dataset,
                               const FewShotSplit& split, const HeadConfig& config) {
  check_split(dataset, split);
  std::vector<num::Tensor<float>> features(dataset.sentences.size());
  for (std::size_t i : split.indices) features[i] = sentence_features(encoder, dataset.sentences[i]);
  return train_frozen_head(features, dataset, split, config);
}

FinetuneResult finetune_full(const enc::TransformerEncoder<float>& encoder, const NerDataset& dataset,
                             const FewShotSplit& split, const FinetuneConfig& config) {
  check_split(dataset, split);
  if (config.batch_size == 0) throw std::invalid_argument("finetune_full: batch_size must be positive");
  FinetuneResult out{enc::TextEncoder<float>(encoder),
                     TokenHead::make(HeadKind::kTwoLayer, encoder.config().model_dim, dataset.num_classes(),
                                     config.dropout_p, config.seed),
                     {}};
  out.encoder.freeze_bottom_layers(0);
  const auto params = out.encoder.parameters();
  const auto head_params = out.head.parameters();

  std::mt19937_64 rng(config.seed ^ 0xA0761D6478BD642Full);
  const enc::ForwardOptions options{.training = true, .rng = &rng};
  const std::size_t max_len = out.encoder.config().max_sequence_length;
  std::vector<std::size_t> order = split.indices;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      num::Tape<float> tape;
      std::vector<num::Var<float>> blocks;
      std::vector<int> labels;
      for (std::size_t i = b; i < std::min(order.size(), b + config.batch_size); ++i) {
        const NerSentence& s = dataset.sentences[order[i]];
        const std::vector<int> ids = out.encoder.vocab().encode(s.tokens);
        const std::size_t used = std::min(ids.size(), max_len);
        if (used == 0) continue;
        num::Var<float> h = out.encoder.encode(tape, std::span<const int>(ids).first(used), options);
        blocks.push_back(out.head.forward(tape, h, true, &rng));
        const auto l = truncated_labels(s, used);
        labels.insert(labels.end(), l.begin(), l.end());
      }
      if (blocks.empty()) continue;
      num::Var<float> logits = blocks.size() == 1 ? blocks[0] : num::concat(blocks, 0);
      num::Var<float> loss = num::softmax_cross_entropy(logits, std::span<const int>(labels));
      tape.backward(loss);
      num::adamw_step<float>(params, config.lr, config.adamw);
      num::adamw_step<float>(head_params, config.head_lr, config.adamw);
      total += loss.value()[0];
      ++batches;
    }
    out.epoch_losses.push_back(batches ? total / static_cast<double>(batches) : 0.0);
  }
  return out;
}

std::vector<int> argmax_labels(const num::Tensor<float>& logits) {
  std::vector<int> out(logits.rows(), kNone);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c) {
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

std::vector<std::vector<int>> predict_labels(enc::TransformerEncoder<float>& encoder, TokenHead& head,
                                             std::span<const NerSentence> sentences) {
  std::vector<std::vector<int>> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) {
    std::vector<int> labels(s.tokens.size(), kNone);
    const num::Tensor<float> f = sentence_features(encoder, s);
    if (f.rows() > 0) {
      const auto predicted = argmax_labels(head.logits(f));
      std::copy(predicted.begin(), predicted.end(), labels.begin());
    }
    out.push_back(std::move(labels));
  }
  return out;
}

}  // namespace nuner::fs
