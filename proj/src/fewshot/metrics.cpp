#include <algorithm>
#include <set>
#include <tuple>

#include "nuner/fewshot/fewshot.hpp"

namespace nuner::fs {

namespace {

void check_aligned(const LabelSequences& pred, const LabelSequences& gold, std::size_t num_types) {
  if (pred.size() != gold.size()) throw std::invalid_argument("metrics: prediction and gold sentence counts differ");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != gold[i].size()) {
      throw std::invalid_argument("metrics: length mismatch in sentence " + std::to_string(i));
    }
    for (const auto* seq : {&pred[i], &gold[i]}) {
      for (int l : *seq) {
        if (l < 0 || static_cast<std::size_t>(l) > num_types) {
          throw std::invalid_argument("metrics: label " + std::to_string(l) + " outside the type set");
        }
      }
    }
  }
}

void fill_prf(std::size_t tp, std::size_t fp, std::size_t fn, double& p, double& r, double& f1) {
  p = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  r = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  f1 = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

}  // namespace

TokenScores token_macro_f1(const LabelSequences& pred, const LabelSequences& gold,
                           const std::vector<std::string>& types) {
  check_aligned(pred, gold, types.size());
  TokenScores out;
  out.per_type.resize(types.size());
  for (std::size_t t = 0; t < types.size(); ++t) out.per_type[t].type = types[t];
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = 0; j < pred[i].size(); ++j) {
      const int p = pred[i][j], g = gold[i][j];
      if (p == g) {
        if (p != kNone) ++out.per_type[static_cast<std::size_t>(p - 1)].tp;
        continue;
      }
      if (p != kNone) ++out.per_type[static_cast<std::size_t>(p - 1)].fp;
      if (g != kNone) ++out.per_type[static_cast<std::size_t>(g - 1)].fn;
    }
  }
  double total = 0.0;
  for (auto& s : out.per_type) {
    fill_prf(s.tp, s.fp, s.fn, s.precision, s.recall, s.f1);
    total += s.f1;
  }
  out.macro_f1 = types.empty() ? 0.0 : total / static_cast<double>(types.size());
  return out;
}

std::vector<EntitySpan> decode_spans(std::span<const int> labels) {
  std::vector<EntitySpan> out;
  std::size_t i = 0;
  while (i < labels.size()) {
    if (labels[i] == kNone) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < labels.size() && labels[j] == labels[i]) ++j;
    out.push_back({labels[i], i, j});
    i = j;
  }
  return out;
}

EntityScores entity_micro_f1(const LabelSequences& pred, const LabelSequences& gold,
                             const std::vector<std::string>& types) {
  check_aligned(pred, gold, types.size());
  EntityScores out;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = decode_spans(pred[i]);
    const auto g = decode_spans(gold[i]);
    std::set<std::tuple<int, std::size_t, std::size_t>> gold_set;
    for (const auto& e : g) gold_set.emplace(e.label, e.token_start, e.token_end);
    std::size_t matched = 0;
    for (const auto& e : p) matched += gold_set.count({e.label, e.token_start, e.token_end});
    out.tp += matched;
    out.fp += p.size() - matched;
    out.fn += g.size() - matched;
  }
  fill_prf(out.tp, out.fp, out.fn, out.precision, out.recall, out.f1);
  return out;
}

EvalReport evaluate(const LabelSequences& pred, const NerDataset& test, nlohmann::json metadata) {
  LabelSequences gold;
  gold.reserve(test.sentences.size());
  for (const auto& s : test.sentences) gold.push_back(s.labels);
  return {token_macro_f1(pred, gold, test.types), entity_micro_f1(pred, gold, test.types), std::move(metadata)};
}

nlohmann::json eval_report_to_json(const EvalReport& report) {
  nlohmann::json per_type = nlohmann::json::array();
  for (const auto& s : report.tokens.per_type) {
    per_type.push_back({{"type", s.type},
                        {"tp", s.tp},
                        {"fp", s.fp},
                        {"fn", s.fn},
                        {"precision", s.precision},
                        {"recall", s.recall},
                        {"f1", s.f1}});
  }
  const auto& e = report.entities;
  return {{"token_macro_f1", report.tokens.macro_f1},
          {"per_type", per_type},
          {"entity_micro",
           {{"tp", e.tp}, {"fp", e.fp}, {"fn", e.fn}, {"precision", e.precision}, {"recall", e.recall},
            {"f1", e.f1}}},
          {"metadata", report.metadata}};
}

}  // namespace nuner::fs
