#include <cmath>
#include <cstdio>
#include <sstream>

#include "nuner/fewshot/fewshot.hpp"

namespace nuner::fs {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

const char* mode_name(SplitMode m) { return m == SplitMode::kK2K ? "k~2k" : "k_w"; }
const char* head_name(HeadKind h) { return h == HeadKind::kLinear ? "frozen-linear" : "finetune-2layer"; }

}  // namespace

nlohmann::json protocol_config_to_json(const ProtocolConfig& c) {
  return {{"mode", c.mode == SplitMode::kK2K ? "k2k" : "words"},
          {"k_values", c.k_values},
          {"runs_per_k", c.runs_per_k},
          {"head", c.head == HeadKind::kLinear ? "linear" : "finetune"},
          {"head_epochs", c.frozen.epochs},
          {"head_lr", c.frozen.lr},
          {"finetune_epochs", c.finetune.epochs},
          {"finetune_lr", c.finetune.lr},
          {"finetune_head_lr", c.finetune.head_lr},
          {"finetune_batch_size", c.finetune.batch_size},
          {"finetune_dropout", c.finetune.dropout_p},
          {"max_attempts", c.max_attempts},
          {"seed", c.seed}};
}

ProtocolConfig protocol_config_from_json(const nlohmann::json& j) {
  ProtocolConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "mode") {
      const auto m = v.get<std::string>();
      if (m == "k2k") c.mode = SplitMode::kK2K;
      else if (m == "words") c.mode = SplitMode::kWords;
      else throw std::invalid_argument("fewshot config: mode must be k2k or words, got " + m);
    } else if (key == "k_values") {
      c.k_values = v.get<std::vector<std::size_t>>();
    } else if (key == "runs_per_k") {
      c.runs_per_k = v.get<std::size_t>();
    } else if (key == "head") {
      const auto h = v.get<std::string>();
      if (h == "linear") c.head = HeadKind::kLinear;
      else if (h == "finetune") c.head = HeadKind::kTwoLayer;
      else throw std::invalid_argument("fewshot config: head must be linear or finetune, got " + h);
    } else if (key == "head_epochs") c.frozen.epochs = v.get<std::size_t>();
    else if (key == "head_lr") c.frozen.lr = v.get<double>();
    else if (key == "finetune_epochs") c.finetune.epochs = v.get<std::size_t>();
    else if (key == "finetune_lr") c.finetune.lr = v.get<double>();
    else if (key == "finetune_head_lr") c.finetune.head_lr = v.get<double>();
    else if (key == "finetune_batch_size") c.finetune.batch_size = v.get<std::size_t>();
    else if (key == "finetune_dropout") c.finetune.dropout_p = v.get<double>();
    else if (key == "max_attempts") c.max_attempts = v.get<std::size_t>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("fewshot config: unknown key " + key);
  }
  return c;
}

void validate(const ProtocolConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("fewshot config: ") + what);
  };
  require(!c.k_values.empty(), "k_values must not be empty");
  for (std::size_t k : c.k_values) require(k >= 1, "every k must be at least 1");
  require(c.runs_per_k >= 1, "runs_per_k must be at least 1");
  require(c.frozen.lr > 0 && c.finetune.lr > 0 && c.finetune.head_lr > 0, "learning rates must be positive");
  require(c.finetune.batch_size >= 1, "finetune_batch_size must be at least 1");
  require(c.finetune.dropout_p >= 0 && c.finetune.dropout_p < 1, "finetune_dropout must be in [0, 1)");
  require(c.max_attempts >= 1, "max_attempts must be at least 1");
}

std::uint64_t derive_seed(std::uint64_t base, std::size_t k, std::size_t run) {
  return splitmix(splitmix(base ^ splitmix(k)) + run);
}

std::pair<double, double> mean_std(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

ProtocolTable run_protocol(const enc::Checkpoint& checkpoint, const NerDataset& train_pool, const NerDataset& test,
                           const ProtocolConfig& config) {
  if (train_pool.types != test.types) throw std::invalid_argument("run_protocol: train and test type sets differ");
  if (config.k_values.empty()) throw std::invalid_argument("run_protocol: no k values");
  if (config.runs_per_k == 0) throw std::invalid_argument("run_protocol: runs_per_k must be positive");
  enc::TextEncoder<float> encoder(enc::encoder_from_checkpoint<float>(checkpoint));

  // Frozen features are a pure function of the checkpoint, so compute them once.
  std::vector<num::Tensor<float>> pool_features, test_features;
  if (config.head == HeadKind::kLinear) {
    for (const auto& s : train_pool.sentences) pool_features.push_back(sentence_features(encoder, s));
    for (const auto& s : test.sentences) test_features.push_back(sentence_features(encoder, s));
  }

  ProtocolTable table;
  table.metadata = {{"mode", mode_name(config.mode)},
                    {"head", head_name(config.head)},
                    {"runs_per_k", config.runs_per_k},
                    {"seed", config.seed},
                    {"types", test.types},
                    {"test_sentences", test.sentences.size()},
                    {"checkpoint_stage", checkpoint.metadata.stage}};
  for (std::size_t k : config.k_values) {
    ProtocolRow row;
    row.k = k;
    std::vector<double> macro, micro;
    for (std::size_t run = 0; run < config.runs_per_k; ++run) {
      ProtocolCell cell;
      cell.run = run;
      cell.seed = derive_seed(config.seed, k, run);
      FewShotSplit split;
      try {
        split = config.mode == SplitMode::kK2K ? sample_k_2k(train_pool, k, cell.seed, config.max_attempts)
                                               : sample_k_words(train_pool, k, cell.seed);
      } catch (const InfeasibleSplit& e) {
        cell.error = e.what();
        row.cells.push_back(std::move(cell));
        continue;
      }
      nlohmann::json meta = {{"k", k},
                             {"run", run},
                             {"seed", cell.seed},
                             {"head", head_name(config.head)},
                             {"train_sentences", split.indices.size()}};
      LabelSequences pred;
      if (config.head == HeadKind::kLinear) {
        HeadConfig hc = config.frozen;
        hc.seed = cell.seed;
        HeadTraining trained = train_frozen_head(pool_features, train_pool, split, hc);
        meta["epochs"] = hc.epochs;
        for (std::size_t i = 0; i < test.sentences.size(); ++i) {
          std::vector<int> labels(test.sentences[i].tokens.size(), kNone);
          if (test_features[i].rows() > 0) {
            const auto p = argmax_labels(trained.head.logits(test_features[i]));
            std::copy(p.begin(), p.end(), labels.begin());
          }
          pred.push_back(std::move(labels));
        }
      } else {
        FinetuneConfig fc = config.finetune;
        fc.seed = cell.seed;
        FinetuneResult tuned = finetune_full(encoder, train_pool, split, fc);
        meta["epochs"] = fc.epochs;
        pred = predict_labels(tuned.encoder, tuned.head, test.sentences);
      }
      cell.report = evaluate(pred, test, std::move(meta));
      macro.push_back(cell.report->tokens.macro_f1);
      micro.push_back(cell.report->entities.f1);
      row.cells.push_back(std::move(cell));
    }
    row.completed = macro.size();
    std::tie(row.macro_f1_mean, row.macro_f1_std) = mean_std(macro);
    std::tie(row.micro_f1_mean, row.micro_f1_std) = mean_std(micro);
    table.rows.push_back(std::move(row));
  }
  return table;
}

nlohmann::json protocol_to_json(const ProtocolTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : table.rows) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : r.cells) {
      nlohmann::json cj = {{"run", c.run}, {"seed", c.seed}};
      if (c.report) cj["report"] = eval_report_to_json(*c.report);
      else cj["infeasible"] = c.error;
      cells.push_back(std::move(cj));
    }
    rows.push_back({{"k", r.k},
                    {"completed", r.completed},
                    {"macro_f1_mean", r.macro_f1_mean},
                    {"macro_f1_std", r.macro_f1_std},
                    {"micro_f1_mean", r.micro_f1_mean},
                    {"micro_f1_std", r.micro_f1_std},
                    {"cells", std::move(cells)}});
  }
  return {{"metadata", table.metadata}, {"rows", std::move(rows)}};
}

std::string protocol_to_text(const ProtocolTable& table) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%6s  %9s  %-17s  %-17s\n", "k", "completed", "token macro-F1", "entity micro-F1");
  out << line;
  for (const auto& r : table.rows) {
    std::snprintf(line, sizeof line, "%6zu  %5zu/%-3zu  %6.2f +- %-6.2f  %6.2f +- %-6.2f\n", r.k, r.completed,
                  r.cells.size(), 100.0 * r.macro_f1_mean, 100.0 * r.macro_f1_std, 100.0 * r.micro_f1_mean,
                  100.0 * r.micro_f1_std);
    out << line;
  }
  return out.str();
}

}  // namespace nuner::fs
