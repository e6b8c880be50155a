#include "nuner/corpus/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <unordered_map>

#include "nuner/corpus/annotations.hpp"
#include "nuner/corpus/text.hpp"

namespace nuner::corpus {

using nlohmann::json;

std::size_t ConceptVocab::rank_of(const std::string& name) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].first == name) return i;
  }
  return entries.size();
}

namespace {

bool is_generic_concept(const std::string& name) {
  std::string norm = trim(name);
  std::transform(norm.begin(), norm.end(), norm.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return norm == "concept";
}

json ingest_to_json(const IngestStats& s) {
  return {{"sentences", s.sentences},
          {"skipped_lines", s.skipped_lines},
          {"unaligned_annotations", s.unaligned_annotations},
          {"duplicate_annotations", s.duplicate_annotations},
          {"removed_sentences", s.removed_sentences}};
}

IngestStats ingest_from_json(const json& j) {
  IngestStats s;
  s.sentences = j.at("sentences").get<std::size_t>();
  s.skipped_lines = j.at("skipped_lines").get<std::size_t>();
  s.unaligned_annotations = j.at("unaligned_annotations").get<std::size_t>();
  s.duplicate_annotations = j.at("duplicate_annotations").get<std::size_t>();
  s.removed_sentences = j.at("removed_sentences").get<std::size_t>();
  return s;
}

}  // namespace

std::pair<Dataset, std::size_t> filter_dataset(const Dataset& dataset) {
  Dataset out;
  out.entity_types = dataset.entity_types;
  out.ingestion = dataset.ingestion;
  std::size_t removed = 0;
  for (const auto& s : dataset.sentences) {
    const bool generic = std::any_of(s.annotations.begin(), s.annotations.end(),
                                     [](const auto& a) { return is_generic_concept(a.concept_name); });
    if (generic) {
      ++removed;
    } else {
      out.sentences.push_back(s);
    }
  }
  return {std::move(out), removed};
}

ConceptVocab build_concept_vocab(const Dataset& dataset) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& s : dataset.sentences)
    for (const auto& a : s.annotations) ++counts[trim(a.concept_name)];
  ConceptVocab vocab;
  vocab.entries.assign(counts.begin(), counts.end());
  std::sort(vocab.entries.begin(), vocab.entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return vocab;
}

Dataset top_n_filter(const Dataset& dataset, const ConceptVocab& vocab, std::size_t n) {
  if (n == 0) throw std::invalid_argument("top_n_filter: n must be positive");
  std::unordered_map<std::string, std::size_t> rank;
  for (std::size_t i = 0; i < vocab.entries.size(); ++i) rank.emplace(vocab.entries[i].first, i);
  Dataset out;
  out.entity_types = dataset.entity_types;
  out.ingestion = dataset.ingestion;
  for (const auto& s : dataset.sentences) {
    AnnotatedSentence kept = s;
    kept.annotations.clear();
    for (const auto& a : s.annotations) {
      const auto it = rank.find(trim(a.concept_name));
      if (it != rank.end() && it->second < n) kept.annotations.push_back(a);
    }
    if (!kept.annotations.empty()) out.sentences.push_back(std::move(kept));
  }
  return out;
}

Dataset subsample(const Dataset& dataset, std::size_t size, std::uint64_t seed) {
  if (size > dataset.size()) {
    throw std::invalid_argument("subsample: requested " + std::to_string(size) +
                                " sentences from a dataset of " +
                                std::to_string(dataset.size()));
  }
  Dataset out;
  out.entity_types = dataset.entity_types;
  out.ingestion = dataset.ingestion;
  std::mt19937_64 rng(seed);
  std::sample(dataset.sentences.begin(), dataset.sentences.end(),
              std::back_inserter(out.sentences), size, rng);
  return out;
}

json sentence_to_json(const AnnotatedSentence& sentence) {
  json anns = json::array();
  for (const auto& a : sentence.annotations) {
    anns.push_back({{"concept", a.concept_name},
                    {"start", a.char_start},
                    {"end", a.char_end},
                    {"entity", a.entity},
                    {"description", a.description ? json(*a.description) : json(nullptr)}});
  }
  return {{"id", sentence.id}, {"text", sentence.text}, {"annotations", std::move(anns)}};
}

AnnotatedSentence sentence_from_json(const json& j) {
  if (!j.is_object()) throw std::runtime_error("record is not a JSON object");
  for (const char* key : {"id", "text", "annotations"}) {
    if (!j.contains(key)) throw std::runtime_error(std::string("missing field \"") + key + "\"");
  }
  AnnotatedSentence s;
  s.id = j.at("id").get<std::string>();
  s.text = j.at("text").get<std::string>();
  s.tokens = tokenize(s.text);
  const std::size_t length = code_point_count(s.text);
  for (const auto& ja : j.at("annotations")) {
    AlignedAnnotation a;
    a.concept_name = ja.at("concept").get<std::string>();
    a.char_start = ja.at("start").get<std::size_t>();
    a.char_end = ja.at("end").get<std::size_t>();
    if (a.char_start >= a.char_end || a.char_end > length) {
      throw std::runtime_error("annotation span [" + std::to_string(a.char_start) + ", " +
                               std::to_string(a.char_end) + ") outside text of " +
                               std::to_string(length) + " characters");
    }
    const std::string slice = slice_chars(s.text, a.char_start, a.char_end);
    a.entity = ja.contains("entity") ? ja.at("entity").get<std::string>() : slice;
    if (a.entity != slice) {
      throw std::runtime_error("annotation entity \"" + a.entity +
                               "\" does not match text slice \"" + slice + "\"");
    }
    if (ja.contains("description") && !ja.at("description").is_null()) {
      a.description = ja.at("description").get<std::string>();
    }
    std::tie(a.token_start, a.token_end) = covering_tokens(s.tokens, a.char_start, a.char_end);
    if (a.token_start == a.token_end) {
      throw std::runtime_error("annotation \"" + a.entity + "\" covers no token");
    }
    s.annotations.push_back(std::move(a));
  }
  dedupe_annotations(s);
  return s;
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
  json header = {{"format", kDatasetFormat}, {"version", kDatasetVersion}};
  if (!dataset.entity_types.empty()) header["entity_types"] = dataset.entity_types;
  if (dataset.ingestion) header["ingestion"] = ingest_to_json(*dataset.ingestion);
  out << header.dump() << '\n';
  for (const auto& s : dataset.sentences) out << sentence_to_json(s).dump() << '\n';
}

Dataset read_dataset(std::istream& in) {
  Dataset dataset;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DatasetFormatError(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!have_header) {
      if (!j.is_object() || j.value("format", "") != kDatasetFormat) {
        throw DatasetFormatError(line_no, "missing nuner-dataset header line");
      }
      const int version = j.value("version", -1);
      if (version != kDatasetVersion) {
        throw DatasetFormatError(line_no, "schema version mismatch: file has " +
                                              std::to_string(version) + ", expected " +
                                              std::to_string(kDatasetVersion));
      }
      if (j.contains("entity_types")) {
        dataset.entity_types = j.at("entity_types").get<std::vector<std::string>>();
      }
      if (j.contains("ingestion")) {
        try {
          dataset.ingestion = ingest_from_json(j.at("ingestion"));
        } catch (const json::exception& e) {
          throw DatasetFormatError(line_no, std::string("bad ingestion block: ") + e.what());
        }
      }
      have_header = true;
      continue;
    }
    try {
      dataset.sentences.push_back(sentence_from_json(j));
    } catch (const DatasetFormatError&) {
      throw;
    } catch (const std::exception& e) {
      throw DatasetFormatError(line_no, e.what());
    }
  }
  if (!have_header) throw DatasetFormatError(0, "empty file: missing header line");
  return dataset;
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_dataset(out, dataset);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return read_dataset(in);
  } catch (const DatasetFormatError& e) {
    throw DatasetFormatError(e.line(), e.detail(), path.string());
  }
}

std::vector<DumpRecord> read_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<DumpRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      records.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>(),
                         j.value("completion", std::string())});
    } catch (const std::exception& e) {
      throw DatasetFormatError(line_no, e.what(), path.string());
    }
  }
  return records;
}

Dataset build_dataset(const std::vector<DumpRecord>& records) {
  Dataset raw;
  IngestStats stats;
  stats.sentences = records.size();
  for (const auto& r : records) {
    SentenceIngest ingest = ingest_completion(r.id, r.text, r.completion);
    stats.skipped_lines += ingest.skipped_lines;
    stats.unaligned_annotations += ingest.unaligned;
    stats.duplicate_annotations += ingest.duplicates;
    raw.sentences.push_back(std::move(ingest.sentence));
  }
  auto [filtered, removed] = filter_dataset(raw);
  stats.removed_sentences = removed;
  filtered.ingestion = stats;
  return std::move(filtered);
}

json dataset_stats(const Dataset& dataset, std::size_t top) {
  const ConceptVocab vocab = build_concept_vocab(dataset);
  json report;
  report["total_sentences"] = dataset.size();
  report["total_annotations"] = dataset.annotation_count();
  const IngestStats ingest = dataset.ingestion.value_or(IngestStats{});
  report["skipped_lines"] = ingest.skipped_lines;
  report["dropped_unaligned_annotations"] = ingest.unaligned_annotations;
  report["removed_sentences"] = ingest.removed_sentences;
  report["vocab_size"] = vocab.size();
  json top_list = json::array();
  for (std::size_t i = 0; i < std::min(top, vocab.size()); ++i) {
    top_list.push_back({{"concept", vocab.entries[i].first}, {"count", vocab.entries[i].second}});
  }
  report["top_concepts"] = std::move(top_list);
  json table = json::array();
  for (std::size_t rank = 1; rank <= vocab.size(); rank *= 2) {
    const std::size_t count = vocab.entries[rank - 1].second;
    table.push_back({{"rank", rank},
                     {"count", count},
                     {"log10_rank", std::log10(static_cast<double>(rank))},
                     {"log10_count", std::log10(static_cast<double>(count))}});
  }
  if (vocab.size() > 0 && (vocab.size() & (vocab.size() - 1)) != 0) {
    const std::size_t rank = vocab.size();
    const std::size_t count = vocab.entries.back().second;
    table.push_back({{"rank", rank},
                     {"count", count},
                     {"log10_rank", std::log10(static_cast<double>(rank))},
                     {"log10_count", std::log10(static_cast<double>(count))}});
  }
  report["frequency_rank"] = std::move(table);
  return report;
}

}  // namespace nuner::corpus
