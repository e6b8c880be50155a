#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "nuner/corpus/types.hpp"

namespace nuner::corpus {

inline constexpr const char* kDatasetFormat = "nuner-dataset";
inline constexpr int kDatasetVersion = 1;

/// Malformed dataset file. `line()` is 1-based; 0 when not line specific.
class DatasetFormatError : public std::runtime_error {
 public:
  DatasetFormatError(std::size_t line, const std::string& detail,
                     const std::string& source = {})
      : std::runtime_error((source.empty() ? "" : source + ":") + "line " +
                           std::to_string(line) + ": " + detail),
        line_(line),
        detail_(detail) {}
  std::size_t line() const { return line_; }
  const std::string& detail() const { return detail_; }

 private:
  std::size_t line_;
  std::string detail_;
};

/// Removes every sentence holding an annotation whose concept, trimmed and
/// lowercased, is "concept". Returns the filtered dataset and removed count.
std::pair<Dataset, std::size_t> filter_dataset(const Dataset& dataset);

ConceptVocab build_concept_vocab(const Dataset& dataset);

/// Keeps annotations whose concept ranks below n in `vocab`, then drops
/// sentences left without annotations.
Dataset top_n_filter(const Dataset& dataset, const ConceptVocab& vocab, std::size_t n);

/// Uniform sample of `size` sentences without replacement, in original order.
Dataset subsample(const Dataset& dataset, std::size_t size, std::uint64_t seed);

void write_dataset(std::ostream& out, const Dataset& dataset);
Dataset read_dataset(std::istream& in);
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& path);

nlohmann::json sentence_to_json(const AnnotatedSentence& sentence);
/// Rebuilds tokens and token spans from text and character offsets.
AnnotatedSentence sentence_from_json(const nlohmann::json& j);

/// One record of an annotation dump: the sentence and the raw completion.
struct DumpRecord {
  std::string id;
  std::string text;
  std::string completion;
};

std::vector<DumpRecord> read_dump(const std::filesystem::path& path);

/// Parses, aligns and filters a dump into a dataset with ingestion counters.
Dataset build_dataset(const std::vector<DumpRecord>& records);

/// Concept-frequency report: totals, ingestion counters, top concepts and a
/// log-log frequency/rank table sampled at powers of two.
nlohmann::json dataset_stats(const Dataset& dataset, std::size_t top = 50);

}  // namespace nuner::corpus
