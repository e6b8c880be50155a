#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nuner::corpus {

/// Offsets are Unicode code-point indices into the sentence text; end is
/// exclusive.
struct Token {
  std::string text;
  std::size_t char_start = 0;
  std::size_t char_end = 0;

  friend bool operator==(const Token&, const Token&) = default;
};

/// One line of LLM output: entity <> concept [<> description].
struct RawAnnotation {
  std::string entity_text;
  std::string concept_name;
  std::optional<std::string> description;

  friend bool operator==(const RawAnnotation&, const RawAnnotation&) = default;
};

struct AlignedAnnotation {
  std::string concept_name;
  std::string entity;
  std::optional<std::string> description;
  std::size_t char_start = 0;
  std::size_t char_end = 0;
  std::size_t token_start = 0;
  std::size_t token_end = 0;

  friend bool operator==(const AlignedAnnotation&, const AlignedAnnotation&) = default;
};

struct AnnotatedSentence {
  std::string id;
  std::string text;
  std::vector<Token> tokens;
  std::vector<AlignedAnnotation> annotations;

  friend bool operator==(const AnnotatedSentence&, const AnnotatedSentence&) = default;
};

/// Counters produced while turning raw LLM completions into a dataset.
struct IngestStats {
  std::size_t sentences = 0;
  std::size_t skipped_lines = 0;
  std::size_t unaligned_annotations = 0;
  std::size_t duplicate_annotations = 0;
  std::size_t removed_sentences = 0;

  friend bool operator==(const IngestStats&, const IngestStats&) = default;
};

struct Dataset {
  std::vector<AnnotatedSentence> sentences;
  /// Closed label set for downstream NER datasets; empty for pre-training data.
  std::vector<std::string> entity_types;
  std::optional<IngestStats> ingestion;

  std::size_t size() const { return sentences.size(); }
  std::size_t annotation_count() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.annotations.size();
    return n;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Concepts with exact annotation counts, sorted by count descending and then
/// lexicographically.
struct ConceptVocab {
  std::vector<std::pair<std::string, std::size_t>> entries;

  std::size_t size() const { return entries.size(); }
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.second;
    return n;
  }
  /// Zero-based rank of `name`, or size() when absent.
  std::size_t rank_of(const std::string& name) const;
};

}  // namespace nuner::corpus
