#include "nuner/encoder/vocab.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "nuner/corpus/text.hpp"

namespace nuner::enc {

Vocab::Vocab() : Vocab(std::vector<std::string>{kUnkToken, kMaskToken}) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2 || tokens_[0] != kUnkToken || tokens_[1] != kMaskToken) {
    throw std::invalid_argument("vocab: the first entries must be [UNK] and [MASK]");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("vocab: duplicate token " + tokens_[i]);
    }
  }
}

int Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocab::encode(const std::vector<corpus::Token>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t.text));
  return ids;
}

std::vector<int> Vocab::encode(std::string_view text) const {
  return encode(corpus::tokenize(text));
}

namespace {

Vocab from_counts(const std::map<std::string, std::size_t>& counts, std::size_t max_size) {
  if (max_size < 3) throw std::invalid_argument("build_vocab: max_size must be at least 3");
  if (counts.empty()) throw std::invalid_argument("build_vocab: corpus has no tokens");
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // The map is already lexicographic, so a stable sort keeps ties in that order.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens{Vocab::kUnkToken, Vocab::kMaskToken};
  for (const auto& [token, n] : ranked) {
    if (tokens.size() >= max_size) break;
    if (token == Vocab::kUnkToken || token == Vocab::kMaskToken) continue;
    tokens.push_back(token);
  }
  return Vocab(std::move(tokens));
}

}  // namespace

Vocab build_vocab(const std::vector<std::string>& texts, std::size_t max_size) {
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts) {
    for (const auto& t : corpus::tokenize(text)) ++counts[t.text];
  }
  return from_counts(counts, max_size);
}

Vocab build_vocab(const corpus::Dataset& dataset, std::size_t max_size) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : dataset.sentences) {
    for (const auto& t : s.tokens) ++counts[t.text];
    for (const auto& a : s.annotations) {
      for (const auto& t : corpus::tokenize(a.concept_name)) ++counts[t.text];
    }
  }
  return from_counts(counts, max_size);
}

}  // namespace nuner::enc
