#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "nuner/corpus/annotations.hpp"
#include "nuner/corpus/synth.hpp"
#include "nuner/corpus/text.hpp"
#include "nuner/numerics/gradcheck.hpp"
#include "nuner/pretrain/pretrain.hpp"

using namespace nuner;
using namespace nuner::pre;

namespace {

const std::string kExampleText =
    "Steven Means has signed a one-year contract extension with the Falcons after making "
    "four starts in 2018.";
const std::string kExampleCompletion =
    "Steven Means <> NFL player <> professional athlete\n"
    "Falcons <> NFL team <> professional sports team\n"
    "2018 <> year <> unit of time\n";

// Sentences with arbitrary tokens and random (possibly overlapping) spans.
std::vector<AnnotatedSentence> random_batch(std::mt19937_64& rng, const std::vector<std::string>& names) {
  std::vector<AnnotatedSentence> batch(1 + rng() % 8);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    auto& sent = batch[s];
    sent.id = "r" + std::to_string(s);
    const std::size_t n = 1 + rng() % 20;
    for (std::size_t t = 0; t < n; ++t) sent.tokens.push_back({"t" + std::to_string(t), t, t + 1});
    const std::size_t anns = rng() % 5;
    for (std::size_t a = 0; a < anns; ++a) {
      corpus::AlignedAnnotation ann;
      ann.concept_name = names[rng() % names.size()];
      ann.token_start = rng() % n;
      ann.token_end = ann.token_start + 1 + rng() % (n - ann.token_start);
      sent.annotations.push_back(ann);
    }
  }
  return batch;
}

int brute_force_cell(const std::vector<AnnotatedSentence>& batch, const std::vector<std::string>& concepts,
                     std::size_t s, std::size_t t, std::size_t c) {
  if (t >= batch[s].tokens.size()) return 0;
  for (const auto& a : batch[s].annotations) {
    if (a.concept_name == concepts[c] && a.token_start <= t && t < a.token_end) return 1;
  }
  return 0;
}

enc::EncoderConfig tiny_config() {
  enc::EncoderConfig c;
  c.num_layers = 2;
  c.model_dim = 16;
  c.num_heads = 2;
  c.feedforward_dim = 32;
  c.max_sequence_length = 32;
  return c;
}

}  // namespace

TEST_CASE("collect_batch_concepts examples") {
  CHECK(collect_batch_concepts({}).empty());
  std::vector<AnnotatedSentence> none(2);
  CHECK(collect_batch_concepts(none).empty());

  const auto example = corpus::ingest_completion("example", kExampleText, kExampleCompletion).sentence;
  std::vector<AnnotatedSentence> batch{example};
  CHECK(collect_batch_concepts(batch) == std::vector<std::string>{"NFL player", "NFL team", "year"});
  batch.push_back(example);
  CHECK(collect_batch_concepts(batch).size() == 3);
}

TEST_CASE("build_target_array on the example sentence") {
  const auto example = corpus::ingest_completion("example", kExampleText, kExampleCompletion).sentence;
  std::vector<AnnotatedSentence> batch{example};
  const auto concepts = collect_batch_concepts(batch);
  const TargetArray a = build_target_array(batch, concepts);
  CHECK(a.sentences == 1);
  CHECK(a.max_tokens == example.tokens.size());
  CHECK(a.concepts == 3);
  REQUIRE(example.tokens[0].text == "Steven");
  REQUIRE(example.tokens[1].text == "Means");
  for (std::size_t t : {0u, 1u}) {
    CHECK(a.at(0, t, 0) == 1);
    CHECK(a.at(0, t, 2) == 0);
  }
  std::size_t ones = 0;
  for (auto v : a.cells) ones += v;
  CHECK(ones == 4);  // Steven, Means, Falcons, 2018

  std::vector<AnnotatedSentence> plain(2);
  plain[0].tokens = corpus::tokenize("a b c");
  plain[1].tokens = corpus::tokenize("d");
  const TargetArray zero = build_target_array(plain, {"x"});
  CHECK(std::all_of(zero.cells.begin(), zero.cells.end(), [](auto v) { return v == 0; }));
  CHECK(zero.valid(1, 0));
  CHECK_FALSE(zero.valid(1, 1));

  CHECK_THROWS_AS(build_target_array(batch, {"NFL player"}), std::logic_error);
}

TEST_CASE("build_target_array equals a brute-force oracle") {
  std::mt19937_64 rng(2024);
  std::vector<std::string> pool;
  for (int i = 0; i < 10; ++i) pool.push_back("concept" + std::to_string(i));
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> names(pool.begin(), pool.begin() + 1 + static_cast<long>(rng() % 10));
    const auto batch = random_batch(rng, names);
    auto concepts = collect_batch_concepts(batch);
    std::shuffle(concepts.begin(), concepts.end(), rng);
    const TargetArray a = build_target_array(batch, concepts);
    std::size_t max_tokens = 0;
    for (const auto& s : batch) max_tokens = std::max(max_tokens, s.tokens.size());
    REQUIRE(a.max_tokens == max_tokens);
    for (std::size_t s = 0; s < batch.size(); ++s)
      for (std::size_t t = 0; t < max_tokens; ++t) {
        CHECK(a.valid(s, t) == (t < batch[s].tokens.size()));
        for (std::size_t c = 0; c < concepts.size(); ++c)
          CHECK(a.at(s, t, c) == brute_force_cell(batch, concepts, s, t, c));
      }
  }
}

TEST_CASE("contrastive loss basics and concept-order invariance") {
  const auto world = corpus::make_world({.num_concepts = 4, .seed = 1});
  const auto data = corpus::make_pretrain_corpus(world, 16, 3);
  const auto vocab = enc::build_vocab(data, 1000);
  auto cfg = tiny_config();
  cfg.vocab_size = vocab.size();
  enc::TextEncoder<double> text(cfg, vocab, 1);
  enc::ConceptEncoder<double> concepts(cfg, vocab, 2);

  std::vector<AnnotatedSentence> batch(data.sentences.begin(), data.sentences.begin() + 8);
  num::Tape<double> tape;
  auto loss = contrastive_loss<double>(tape, text, concepts, batch, 5.0);
  REQUIRE(loss);
  CHECK(std::isfinite(loss->value()[0]));
  CHECK(loss->value()[0] > 0.0);

  // Reversing every sentence's annotation list changes the first-appearance
  // order of the batch concepts without changing any target.
  auto reordered = batch;
  for (auto& s : reordered) std::reverse(s.annotations.begin(), s.annotations.end());
  std::reverse(reordered.begin(), reordered.end());
  REQUIRE(collect_batch_concepts(reordered) != collect_batch_concepts(batch));
  num::Tape<double> tape2;
  auto loss2 = contrastive_loss<double>(tape2, text, concepts, reordered, 5.0);
  CHECK(std::abs(loss2->value()[0] - loss->value()[0]) < 1e-6);

  std::vector<AnnotatedSentence> empty_batch(2);
  empty_batch[0].tokens = corpus::tokenize("no labels");
  num::Tape<double> tape3;
  CHECK_FALSE(contrastive_loss<double>(tape3, text, concepts, empty_batch, 5.0).has_value());
  CHECK_FALSE(contrastive_step<double>(text, concepts, empty_batch, 5.0).has_value());
}

TEST_CASE("bce with probabilities at epsilon and zero targets is near zero") {
  num::Tape<double> tape;
  num::Tensor<double> probs({3, 2}, 1e-7);
  auto loss = num::bce_loss(tape.constant(probs), num::Tensor<double>({3, 2}));
  CHECK(loss.value()[0] < 1e-6);
}

TEST_CASE("padding cells never change the loss") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 20; ++trial) {
    num::Tensor<double> probs({6, 3}), targets({6, 3});
    for (double& v : probs.storage()) v = u(rng);
    for (double& v : targets.storage()) v = rng() % 2;
    std::vector<std::uint8_t> mask = {1, 1, 0, 1, 0, 0};
    num::Tape<double> t1;
    const double base = num::bce_loss(t1.constant(probs), targets, mask).value()[0];
    for (std::size_t r : {2u, 4u, 5u})
      for (std::size_t c = 0; c < 3; ++c) probs.at(r, c) = u(rng);
    num::Tape<double> t2;
    CHECK(num::bce_loss(t2.constant(probs), targets, mask).value()[0] == base);
  }
}

TEST_CASE("contrastive loss gradient check") {
  const auto world = corpus::make_world({.num_concepts = 3, .forms_per_concept = 4, .seed = 2});
  const auto data = corpus::make_pretrain_corpus(world, 3, 1);
  const auto vocab = enc::build_vocab(data, 1000);
  enc::EncoderConfig cfg;
  cfg.num_layers = 1;
  cfg.model_dim = 4;
  cfg.num_heads = 2;
  cfg.feedforward_dim = 6;
  cfg.max_sequence_length = 32;
  cfg.vocab_size = vocab.size();
  enc::TextEncoder<double> text(cfg, vocab, 3);
  enc::ConceptEncoder<double> concepts(cfg, vocab, 4);
  text.freeze_bottom_layers(0);
  std::vector<num::Parameter<double>*> params = text.parameters();
  for (auto* p : concepts.parameters()) params.push_back(p);
  // Check at a generic point rather than at the near-symmetric initialization.
  std::mt19937_64 rng(1);
  std::normal_distribution<double> noise(0.0, 0.3);
  for (auto* p : params)
    for (double& v : p->value.storage()) v += noise(rng);
  auto build = [&](num::Tape<double>& tape) {
    return *contrastive_loss<double>(tape, text, concepts, data.sentences, 5.0);
  };
  const auto report = num::grad_check(build, params, {.tolerance = 1e-4});
  CHECK(report.passed);
  MESSAGE("contrastive max relative error " << report.max_relative_error << " at " << report.worst_parameter << "[" << report.worst_index << "] analytic " << report.worst_analytic << " numeric " << report.worst_numeric);
}

TEST_CASE("200 contrastive steps halve the loss") {
  const auto world = corpus::make_world({.num_concepts = 4, .seed = 3});
  const auto data = corpus::make_pretrain_corpus(world, 400, 4);
  const auto vocab = enc::build_vocab(data, 1000);
  auto cfg = tiny_config();
  cfg.vocab_size = vocab.size();
  double first = 0.0, last = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    enc::TextEncoder<float> text(cfg, vocab, 10 + seed);
    enc::ConceptEncoder<float> concepts(cfg, vocab, 20 + seed);
    std::vector<num::Parameter<float>*> params = text.parameters();
    for (auto* p : concepts.parameters()) params.push_back(p);
    std::mt19937_64 rng(seed);
    std::vector<double> losses;
    for (std::size_t step = 0; step < 200; ++step) {
      std::vector<AnnotatedSentence> batch;
      for (int i = 0; i < 8; ++i) batch.push_back(data.sentences[rng() % data.size()]);
      auto loss = contrastive_step<float>(text, concepts, batch, 5.0f, {.training = true, .rng = &rng});
      REQUIRE(loss);
      losses.push_back(*loss);
      num::adamw_step<float>(params, 1e-3);
    }
    first += losses.front() / 3.0;
    double tail = 0.0;
    for (std::size_t i = 190; i < 200; ++i) tail += losses[i] / 10.0;
    last += tail / 3.0;
  }
  MESSAGE("step-1 loss " << first << ", last-10 mean " << last);
  CHECK(last <= 0.5 * first);
}

TEST_CASE("split_indices") {
  for (std::size_t n : {1u, 2u, 10u, 101u}) {
    auto [train, val] = split_indices(n, 0.1, 7);
    CHECK(train.size() + val.size() == n);
    std::set<std::size_t> all(train.begin(), train.end());
    all.insert(val.begin(), val.end());
    CHECK(all.size() == n);
    if (n >= 2) CHECK(!val.empty());
    auto again = split_indices(n, 0.1, 7);
    CHECK(again.first == train);
  }
  CHECK(split_indices(100, 0.1, 1).second.size() == 10);
  CHECK(split_indices(100, 0.1, 1).second != split_indices(100, 0.1, 2).second);
}

TEST_CASE("pretrain_run contracts") {
  const auto world = corpus::make_world({.num_concepts = 6, .seed = 5});
  const auto data = corpus::make_pretrain_corpus(world, 120, 9);
  PretrainConfig pc;
  pc.epochs = 0;
  pc.batch_size = 16;
  pc.lr_max = 1e-3;
  pc.seed = 3;
  auto cfg = tiny_config();

  CHECK_THROWS_AS(pretrain_run(corpus::Dataset{}, pc, cfg), std::invalid_argument);

  const auto untrained = pretrain_run(data, pc, cfg);
  CHECK(untrained.metrics.empty());
  CHECK(untrained.text.metadata.step == 0);
  const auto vocab = enc::build_vocab(data, pc.max_vocab);
  auto init_cfg = cfg;
  init_cfg.vocab_size = vocab.size();
  const auto fresh = enc::make_checkpoint<float>(enc::TextEncoder<float>(init_cfg, vocab, pc.seed * 2 + 1));
  CHECK(untrained.text.tensors == fresh.tensors);

  pc.epochs = 2;
  const auto a = pretrain_run(data, pc, cfg);
  const auto b = pretrain_run(data, pc, cfg);
  CHECK(a.text == b.text);
  CHECK(a.concept_encoder == b.concept_encoder);
  REQUIRE(a.metrics.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(a.metrics[i].train_loss == b.metrics[i].train_loss);
    CHECK(a.metrics[i].val_loss == b.metrics[i].val_loss);
    CHECK(a.metrics[i].lr_end == b.metrics[i].lr_end);
  }
  CHECK(a.text.metadata.step == 2 * 7);  // 108 training sentences / 16
  CHECK(a.train_ids.size() == 108);
  CHECK(a.validation_ids.size() == 12);
  CHECK(a.text.metadata.loss_history_digest == enc::loss_history_digest(a.step_losses));
  CHECK(a.concept_encoder.prefix == "concept");

  // Embeddings and the lowest L/2 layers are bit-identical to initialization.
  std::size_t frozen = 0, moved = 0;
  for (std::size_t i = 0; i < a.text.tensors.size(); ++i) {
    const auto& name = a.text.tensors[i].name;
    const bool bottom = name.find(".embed.") != std::string::npos || name.find(".layers.0.") != std::string::npos;
    if (bottom) {
      CHECK(a.text.tensors[i] == fresh.tensors[i]);
      ++frozen;
    } else if (a.text.tensors[i].data != fresh.tensors[i].data) {
      ++moved;
    }
  }
  CHECK(frozen == 2 + 15);
  CHECK(moved > 0);

  pc.seed = 4;
  CHECK_FALSE(pretrain_run(data, pc, cfg).text == a.text);

  // Starting from a checkpoint reuses its vocabulary and architecture.
  pc.epochs = 1;
  const auto continued = pretrain_run(data, pc, {}, a.text);
  CHECK(continued.text.vocab == a.text.vocab);
  CHECK(continued.text.config == a.text.config);
}

TEST_CASE("pretraining lowers validation loss") {
  const auto world = corpus::make_world({.num_concepts = 8, .seed = 6});
  const auto data = corpus::make_pretrain_corpus(world, 600, 2);
  PretrainConfig pc;
  pc.epochs = 3;
  pc.batch_size = 16;
  pc.lr_max = 1e-3;
  const auto r = pretrain_run(data, pc, tiny_config());
  REQUIRE(r.metrics.size() == 3);
  MESSAGE("val loss " << r.metrics[0].val_loss << " -> " << r.metrics[2].val_loss);
  CHECK(r.metrics[2].val_loss < r.metrics[0].val_loss);
}

TEST_CASE("mask_tokens rates") {
  std::mt19937_64 rng(11);
  const std::size_t vocab = 50;
  std::vector<int> ids(200);
  for (int& id : ids) id = 2 + static_cast<int>(rng() % 48);
  std::size_t positions = 0, selected = 0, masked = 0, replaced = 0, kept = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const auto m = mask_tokens(ids, vocab, 0.15, rng);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      ++positions;
      if (m.labels[i] < 0) {
        CHECK(m.inputs[i] == ids[i]);
        continue;
      }
      ++selected;
      CHECK(m.labels[i] == ids[i]);
      if (m.inputs[i] == enc::Vocab::kMask) ++masked;
      else if (m.inputs[i] == ids[i]) ++kept;
      else ++replaced;
      CHECK(m.inputs[i] != enc::Vocab::kUnk);
    }
  }
  const double rate = static_cast<double>(selected) / positions;
  CHECK(std::abs(rate - 0.15) < 0.005);
  CHECK(std::abs(static_cast<double>(masked) / selected - 0.8) < 0.01);
  // A random replacement can coincide with the original id (1 in 48).
  const double p_same = 0.1 / 48.0;
  CHECK(std::abs(static_cast<double>(kept) / selected - (0.1 + p_same)) < 0.01);
  CHECK(std::abs(static_cast<double>(replaced) / selected - (0.1 - p_same)) < 0.01);
}

TEST_CASE("mlm_run") {
  CHECK_THROWS_AS(mlm_run({}, {}), std::invalid_argument);
  const auto world = corpus::make_world({.seed = 8});
  const auto data = corpus::make_pretrain_corpus(world, 800, 1);
  std::vector<std::string> texts;
  for (const auto& s : data.sentences) texts.push_back(s.text);
  MlmConfig mc;
  mc.epochs = 3;
  mc.batch_size = 16;
  mc.lr_max = 2e-3;
  auto cfg = tiny_config();
  const auto r = mlm_run(texts, mc, cfg);
  const double v = static_cast<double>(r.base.vocab.size());
  MESSAGE("vocab " << v << ", initial loss " << r.initial_loss << " vs ln V " << std::log(v)
                   << ", final accuracy " << r.epochs.back().masked_accuracy);
  CHECK(std::abs(r.initial_loss - std::log(v)) < 0.1 * std::log(v));
  REQUIRE(r.epochs.size() == 3);
  CHECK(r.epochs.back().train_loss < r.epochs.front().train_loss);
  CHECK(r.epochs.back().masked_accuracy >= 10.0 / v);
  CHECK(r.base.metadata.stage == "mlm");
  // The base checkpoint initializes contrastive pre-training.
  PretrainConfig pc;
  pc.epochs = 1;
  pc.batch_size = 32;
  const auto p = pretrain_run(data, pc, {}, r.base);
  CHECK(p.text.vocab == r.base.vocab);
}
