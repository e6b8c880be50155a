#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nuner/corpus/types.hpp"

namespace nuner::enc {

/// Word-level vocabulary. Ids 0 and 1 are reserved for [UNK] and [MASK].
class Vocab {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kMask = 1;
  static constexpr const char* kUnkToken = "[UNK]";
  static constexpr const char* kMaskToken = "[MASK]";

  Vocab();
  /// `tokens` must start with the two reserved entries and hold no duplicates.
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  int id(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const std::vector<corpus::Token>& tokens) const;
  /// Tokenizes then encodes.
  std::vector<int> encode(std::string_view text) const;

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Keeps the max_size - 2 most frequent token strings, ties broken
/// lexicographically. Throws std::invalid_argument when no tokens are present
/// or max_size < 3.
Vocab build_vocab(const std::vector<std::string>& texts, std::size_t max_size);
/// Counts sentence tokens and the tokens of every annotation's concept name,
/// since the concept encoder shares this vocabulary.
Vocab build_vocab(const corpus::Dataset& dataset, std::size_t max_size);

}  // namespace nuner::enc
