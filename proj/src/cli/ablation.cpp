#include "nuner/cli/ablation.hpp"

#include <cstdio>

#include "nuner/corpus/dataset.hpp"

namespace nuner::cli {

namespace {

AblationRow run_row(const corpus::Dataset& data, std::size_t value, const AblationInputs& inputs) {
  AblationRow row;
  row.value = value;
  row.sentences = data.size();
  row.annotations = data.annotation_count();
  row.concepts = corpus::build_concept_vocab(data).size();
  const auto trained = pre::pretrain_run(data, inputs.pretrain, inputs.encoder, inputs.init);
  row.metrics = trained.metrics;
  fs::ProtocolConfig protocol = inputs.protocol;
  protocol.k_values = {inputs.k};
  row.result = fs::run_protocol(trained.text, inputs.train_pool, inputs.test, protocol).rows.at(0);
  return row;
}

void report_row(const Progress& progress, const std::string& label, const AblationRow& row) {
  if (!progress) return;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s: %zu sentences, %zu concepts, macro-F1 %.4f", label.c_str(), row.sentences,
                row.concepts, row.result.macro_f1_mean);
  progress(buf);
}

}  // namespace

AblationReport ablate_concepts(const corpus::Dataset& corpus, const std::vector<std::size_t>& concept_n,
                               const AblationInputs& inputs, const Progress& progress) {
  AblationReport report;
  report.kind = "concepts";
  report.k = inputs.k;
  const auto vocab = corpus::build_concept_vocab(corpus);
  for (std::size_t n : concept_n) {
    const corpus::Dataset data = n == 0 ? corpus : corpus::top_n_filter(corpus, vocab, n);
    report.rows.push_back(run_row(data, n, inputs));
    report_row(progress, n == 0 ? std::string("all concepts") : "top-" + std::to_string(n), report.rows.back());
  }
  report.metadata = {{"corpus_sentences", corpus.size()}, {"corpus_concepts", vocab.size()}};
  return report;
}

AblationReport ablate_size(const corpus::Dataset& corpus, const std::vector<std::size_t>& sizes,
                           const AblationInputs& inputs, const Progress& progress) {
  AblationReport report;
  report.kind = "size";
  report.k = inputs.k;
  for (std::size_t size : sizes) {
    const corpus::Dataset data = corpus::subsample(corpus, size, inputs.pretrain.seed);
    report.rows.push_back(run_row(data, size, inputs));
    report_row(progress, std::to_string(size) + " sentences", report.rows.back());
  }
  report.metadata = {{"corpus_sentences", corpus.size()}};
  return report;
}

nlohmann::json ablation_to_json(const AblationReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json metrics = nlohmann::json::array();
    for (const auto& m : r.metrics) metrics.push_back(pre::epoch_metrics_to_json(m));
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& c : r.result.cells) {
      nlohmann::json cell = {{"run", c.run}, {"seed", c.seed}};
      if (c.report) {
        cell["macro_f1"] = c.report->tokens.macro_f1;
        cell["micro_f1"] = c.report->entities.f1;
      } else {
        cell["infeasible"] = c.error;
      }
      runs.push_back(cell);
    }
    rows.push_back({{report.kind == "concepts" ? "concept_n" : "size", r.value},
                    {"sentences", r.sentences},
                    {"annotations", r.annotations},
                    {"concepts", r.concepts},
                    {"completed", r.result.completed},
                    {"macro_f1_mean", r.result.macro_f1_mean},
                    {"macro_f1_std", r.result.macro_f1_std},
                    {"micro_f1_mean", r.result.micro_f1_mean},
                    {"micro_f1_std", r.result.micro_f1_std},
                    {"pretrain_metrics", metrics},
                    {"runs", runs}});
  }
  nlohmann::json j = {{"ablation", report.kind}, {"k", report.k}, {"rows", rows}};
  j["metadata"] = report.metadata;
  return j;
}

std::string ablation_to_text(const AblationReport& report) {
  std::string out;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-12s %9s %11s %8s %9s %15s %15s\n",
                report.kind == "concepts" ? "concepts" : "size", "sentences", "annotations", "concepts", "runs",
                "macro-F1", "micro-F1");
  out += buf;
  for (const auto& r : report.rows) {
    const std::string label =
        report.kind == "concepts" && r.value == 0 ? std::string("all") : std::to_string(r.value);
    const std::string runs = std::to_string(r.result.completed) + "/" + std::to_string(r.result.cells.size());
    std::snprintf(buf, sizeof buf, "%-12s %9zu %11zu %8zu %9s %7.2f +- %5.2f %7.2f +- %5.2f\n", label.c_str(),
                  r.sentences, r.annotations, r.concepts, runs.c_str(), 100 * r.result.macro_f1_mean,
                  100 * r.result.macro_f1_std, 100 * r.result.micro_f1_mean, 100 * r.result.micro_f1_std);
    out += buf;
  }
  return out;
}

}  // namespace nuner::cli
