#include "nuner/corpus/annotations.hpp"

#include <map>
#include <tuple>

#include "nuner/corpus/text.hpp"

namespace nuner::corpus {

namespace {

constexpr std::string_view kDelimiter = "<>";

std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(kDelimiter, start);
    if (pos == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, pos - start)));
    start = pos + kDelimiter.size();
  }
  return fields;
}

}  // namespace

ParsedCompletion parse_llm_output(std::string_view raw) {
  ParsedCompletion out;
  std::size_t start = 0;
  while (start <= raw.size()) {
    std::size_t end = raw.find('\n', start);
    if (end == std::string_view::npos) end = raw.size();
    const std::string_view line = raw.substr(start, end - start);
    start = end + 1;
    if (trim(line).empty()) {
      if (end == raw.size()) break;
      continue;
    }
    const auto fields = split_fields(line);
    const bool usable = (fields.size() == 2 || fields.size() == 3) &&
                        !fields[0].empty() && !fields[1].empty();
    if (!usable) {
      ++out.skipped_lines;
    } else {
      RawAnnotation ann{fields[0], fields[1], std::nullopt};
      if (fields.size() == 3 && !fields[2].empty()) ann.description = fields[2];
      out.annotations.push_back(std::move(ann));
    }
    if (end == raw.size()) break;
  }
  return out;
}

std::pair<std::size_t, std::size_t> covering_tokens(const std::vector<Token>& tokens,
                                                    std::size_t char_start,
                                                    std::size_t char_end) {
  std::size_t first = tokens.size(), last = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].char_start < char_end && tokens[i].char_end > char_start) {
      first = std::min(first, i);
      last = i + 1;
    }
  }
  if (first == tokens.size()) return {0, 0};
  return {first, last};
}

std::optional<AlignedAnnotation> align_annotation(std::string_view sentence_text,
                                                  const std::vector<Token>& tokens,
                                                  const RawAnnotation& raw,
                                                  SpanSet& used_spans) {
  const std::string needle = trim(raw.entity_text);
  if (needle.empty()) return std::nullopt;
  const auto offsets = code_point_offsets(sentence_text);
  std::size_t from = 0;
  while (from <= sentence_text.size()) {
    const std::size_t byte_pos = sentence_text.find(needle, from);
    if (byte_pos == std::string_view::npos) return std::nullopt;
    from = byte_pos + 1;
    const auto it = std::lower_bound(offsets.begin(), offsets.end(), byte_pos);
    if (it == offsets.end() || *it != byte_pos) continue;  // mid-character hit
    const auto end_it =
        std::lower_bound(offsets.begin(), offsets.end(), byte_pos + needle.size());
    if (end_it == offsets.end() || *end_it != byte_pos + needle.size()) continue;
    const auto char_start = static_cast<std::size_t>(it - offsets.begin());
    const auto char_end = static_cast<std::size_t>(end_it - offsets.begin());
    if (used_spans.contains({char_start, char_end})) continue;
    const auto [tok_start, tok_end] = covering_tokens(tokens, char_start, char_end);
    if (tok_start == tok_end) continue;
    used_spans.insert({char_start, char_end});
    AlignedAnnotation out;
    out.concept_name = trim(raw.concept_name);
    out.entity = needle;
    out.description = raw.description;
    out.char_start = char_start;
    out.char_end = char_end;
    out.token_start = tok_start;
    out.token_end = tok_end;
    return out;
  }
  return std::nullopt;
}

std::size_t dedupe_annotations(AnnotatedSentence& sentence) {
  std::set<std::tuple<std::string, std::size_t, std::size_t>> seen;
  std::vector<AlignedAnnotation> kept;
  kept.reserve(sentence.annotations.size());
  for (auto& ann : sentence.annotations) {
    if (seen.insert({ann.concept_name, ann.char_start, ann.char_end}).second) {
      kept.push_back(std::move(ann));
    }
  }
  const std::size_t removed = sentence.annotations.size() - kept.size();
  sentence.annotations = std::move(kept);
  return removed;
}

SentenceIngest ingest_completion(std::string id, std::string text,
                                 std::string_view completion) {
  SentenceIngest result;
  result.sentence.id = std::move(id);
  result.sentence.text = std::move(text);
  result.sentence.tokens = tokenize(result.sentence.text);
  const ParsedCompletion parsed = parse_llm_output(completion);
  result.skipped_lines = parsed.skipped_lines;
  std::map<std::string, SpanSet> used_by_concept;
  for (const RawAnnotation& raw : parsed.annotations) {
    SpanSet& used = used_by_concept[trim(raw.concept_name)];
    auto aligned = align_annotation(result.sentence.text, result.sentence.tokens, raw, used);
    if (aligned) {
      result.sentence.annotations.push_back(std::move(*aligned));
    } else {
      ++result.unaligned;
    }
  }
  result.duplicates = dedupe_annotations(result.sentence);
  return result;
}

}  // namespace nuner::corpus
