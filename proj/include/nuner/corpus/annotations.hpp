#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nuner/corpus/types.hpp"

namespace nuner::corpus {

struct ParsedCompletion {
  std::vector<RawAnnotation> annotations;
  std::size_t skipped_lines = 0;
};

/// Splits each line on the literal "<>" delimiter. Lines yielding fewer than
/// two non-empty fields are skipped and counted; empty lines are ignored.
ParsedCompletion parse_llm_output(std::string_view raw);

/// Character spans already claimed within one sentence.
using SpanSet = std::set<std::pair<std::size_t, std::size_t>>;

/// Leftmost exact occurrence of raw.entity_text whose character span is not in
/// `used_spans`, mapped to the minimal covering token span. The span is added
/// to `used_spans`. Returns nullopt when no unused occurrence exists.
std::optional<AlignedAnnotation> align_annotation(std::string_view sentence_text,
                                                  const std::vector<Token>& tokens,
                                                  const RawAnnotation& raw,
                                                  SpanSet& used_spans);

/// Per-sentence result of turning a completion into aligned annotations.
struct SentenceIngest {
  AnnotatedSentence sentence;
  std::size_t skipped_lines = 0;
  std::size_t unaligned = 0;
  std::size_t duplicates = 0;
};

/// Parses and aligns one completion against its sentence. Used spans are
/// tracked per concept, so one surface string may carry several concepts
/// while repeated (entity, concept) lines consume successive occurrences.
SentenceIngest ingest_completion(std::string id, std::string text,
                                 std::string_view completion);

/// Drops repeated (concept, char_start, char_end) annotations, keeping the
/// first. Returns the number removed.
std::size_t dedupe_annotations(AnnotatedSentence& sentence);

/// Token indices [first, last) whose character ranges intersect [start, end).
std::pair<std::size_t, std::size_t> covering_tokens(const std::vector<Token>& tokens,
                                                    std::size_t char_start,
                                                    std::size_t char_end);

}  // namespace nuner::corpus
