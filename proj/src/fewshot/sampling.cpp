#include <algorithm>
#include <numeric>
#include <unordered_map>

#include "nuner/fewshot/fewshot.hpp"

namespace nuner::fs {

NerDataset to_ner_dataset(const corpus::Dataset& dataset) {
  if (dataset.entity_types.empty()) {
    throw std::invalid_argument("to_ner_dataset: the dataset declares no entity types");
  }
  NerDataset out;
  out.types = dataset.entity_types;
  std::unordered_map<std::string, int> label_of;
  for (std::size_t i = 0; i < out.types.size(); ++i) label_of.emplace(out.types[i], static_cast<int>(i) + 1);

  for (const auto& s : dataset.sentences) {
    NerSentence ns;
    ns.id = s.id;
    ns.tokens = s.tokens;
    ns.labels.assign(s.tokens.size(), kNone);
    std::vector<std::size_t> order(s.annotations.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const auto& x = s.annotations[a];
      const auto& y = s.annotations[b];
      const std::size_t lx = x.token_end - x.token_start, ly = y.token_end - y.token_start;
      if (lx != ly) return lx > ly;
      return x.token_start < y.token_start;
    });
    for (std::size_t i : order) {
      const auto& a = s.annotations[i];
      auto it = label_of.find(a.concept_name);
      if (it == label_of.end()) {
        throw std::invalid_argument("to_ner_dataset: sentence " + s.id + " has type '" + a.concept_name +
                                    "' outside the declared entity types");
      }
      if (a.token_start >= a.token_end || a.token_end > s.tokens.size()) {
        throw std::invalid_argument("to_ner_dataset: bad token span in sentence " + s.id);
      }
      const bool clash = std::any_of(ns.labels.begin() + static_cast<std::ptrdiff_t>(a.token_start),
                                     ns.labels.begin() + static_cast<std::ptrdiff_t>(a.token_end),
                                     [](int l) { return l != kNone; });
      if (clash) {
        ++out.dropped_overlaps;
        continue;
      }
      std::fill(ns.labels.begin() + static_cast<std::ptrdiff_t>(a.token_start),
                ns.labels.begin() + static_cast<std::ptrdiff_t>(a.token_end), it->second);
      ns.entities.push_back({it->second, a.token_start, a.token_end});
    }
    std::sort(ns.entities.begin(), ns.entities.end(),
              [](const EntitySpan& a, const EntitySpan& b) { return a.token_start < b.token_start; });
    out.sentences.push_back(std::move(ns));
  }
  return out;
}

std::vector<std::size_t> entity_counts(const NerSentence& sentence, std::size_t num_types) {
  std::vector<std::size_t> counts(num_types, 0);
  for (const auto& e : sentence.entities) ++counts.at(static_cast<std::size_t>(e.label - 1));
  return counts;
}

std::vector<std::size_t> word_counts(const NerSentence& sentence, std::size_t num_types) {
  std::vector<std::size_t> counts(num_types, 0);
  for (int l : sentence.labels) {
    if (l != kNone) ++counts.at(static_cast<std::size_t>(l - 1));
  }
  return counts;
}

namespace {

std::vector<std::vector<std::size_t>> all_counts(const NerDataset& dataset, bool words) {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(dataset.sentences.size());
  for (const auto& s : dataset.sentences) {
    out.push_back(words ? word_counts(s, dataset.types.size()) : entity_counts(s, dataset.types.size()));
  }
  return out;
}

void check_totals(const NerDataset& dataset, const std::vector<std::vector<std::size_t>>& counts, std::size_t k,
                  const char* what) {
  std::vector<std::size_t> totals(dataset.types.size(), 0);
  for (const auto& c : counts)
    for (std::size_t t = 0; t < c.size(); ++t) totals[t] += c[t];
  std::vector<std::string> blocking;
  for (std::size_t t = 0; t < totals.size(); ++t) {
    if (totals[t] < k) blocking.push_back(dataset.types[t]);
  }
  if (!blocking.empty()) {
    std::string msg = std::string(what) + ": fewer than " + std::to_string(k) + " available for";
    for (const auto& b : blocking) msg += " '" + b + "'";
    throw InfeasibleSplit(msg, blocking);
  }
}

FewShotSplit finish(const NerDataset& dataset, std::vector<std::size_t> chosen, std::vector<std::size_t> counts,
                    std::size_t k, std::uint64_t seed, SplitMode mode) {
  FewShotSplit split;
  std::sort(chosen.begin(), chosen.end());
  for (std::size_t i : chosen) split.ids.push_back(dataset.sentences[i].id);
  split.indices = std::move(chosen);
  split.counts = std::move(counts);
  split.k = k;
  split.seed = seed;
  split.mode = mode;
  return split;
}

}  // namespace

FewShotSplit sample_k_2k(const NerDataset& dataset, std::size_t k, std::uint64_t seed, std::size_t max_attempts) {
  if (k == 0) throw std::invalid_argument("sample_k_2k: k must be at least 1");
  if (dataset.types.empty()) throw std::invalid_argument("sample_k_2k: dataset has no entity types");
  const std::size_t n_types = dataset.types.size();
  const auto counts = all_counts(dataset, false);
  check_totals(dataset, counts, k, "sample_k_2k");

  std::vector<std::size_t> order(dataset.sentences.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> best_running;
  std::size_t best_deficit = static_cast<std::size_t>(-1);
  for (std::size_t attempt = 0; attempt < std::max<std::size_t>(max_attempts, 1); ++attempt) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> running(n_types, 0), chosen;
    auto satisfied = [&] {
      return std::all_of(running.begin(), running.end(), [k](std::size_t c) { return c >= k; });
    };
    for (std::size_t i : order) {
      if (satisfied()) break;
      const auto& c = counts[i];
      bool helps = false, fits = true;
      for (std::size_t t = 0; t < n_types; ++t) {
        if (c[t] > 0 && running[t] < k) helps = true;
        if (running[t] + c[t] > 2 * k) fits = false;
      }
      if (!helps || !fits) continue;
      for (std::size_t t = 0; t < n_types; ++t) running[t] += c[t];
      chosen.push_back(i);
    }
    if (satisfied()) return finish(dataset, std::move(chosen), std::move(running), k, seed, SplitMode::kK2K);
    std::size_t deficit = 0;
    for (std::size_t r : running) deficit += r < k ? k - r : 0;
    if (deficit < best_deficit) {
      best_deficit = deficit;
      best_running = running;
    }
  }
  std::vector<std::string> blocking;
  for (std::size_t t = 0; t < n_types; ++t) {
    if (best_running[t] < k) blocking.push_back(dataset.types[t]);
  }
  std::string msg = "sample_k_2k: no split with every type in [" + std::to_string(k) + ", " +
                    std::to_string(2 * k) + "] after " + std::to_string(max_attempts) + " attempts; blocking";
  for (const auto& b : blocking) msg += " '" + b + "'";
  throw InfeasibleSplit(msg, blocking);
}

FewShotSplit sample_k_words(const NerDataset& dataset, std::size_t k_w, std::uint64_t seed) {
  if (k_w == 0) throw std::invalid_argument("sample_k_words: k_w must be at least 1");
  if (dataset.types.empty()) throw std::invalid_argument("sample_k_words: dataset has no entity types");
  const std::size_t n_types = dataset.types.size();
  const auto counts = all_counts(dataset, true);
  check_totals(dataset, counts, k_w, "sample_k_words");

  std::vector<std::size_t> order(dataset.sentences.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> used(dataset.sentences.size(), false);
  std::vector<std::size_t> running(n_types, 0), chosen;
  while (true) {
    std::size_t target = n_types;
    std::size_t worst = 0;
    for (std::size_t t = 0; t < n_types; ++t) {
      if (running[t] < k_w && k_w - running[t] > worst) {
        worst = k_w - running[t];
        target = t;
      }
    }
    if (target == n_types) break;
    auto it = std::find_if(order.begin(), order.end(),
                           [&](std::size_t i) { return !used[i] && counts[i][target] > 0; });
    // Totals were checked up front, so an unused sentence always exists.
    const std::size_t pick = *it;
    used[pick] = true;
    chosen.push_back(pick);
    for (std::size_t t = 0; t < n_types; ++t) running[t] += counts[pick][t];
  }
  return finish(dataset, std::move(chosen), std::move(running), k_w, seed, SplitMode::kWords);
}

}  // namespace nuner::fs
