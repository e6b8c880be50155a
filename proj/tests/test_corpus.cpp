#include <cctype>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "nuner/corpus/annotations.hpp"
#include "nuner/corpus/dataset.hpp"
#include "nuner/corpus/synth.hpp"
#include "nuner/corpus/text.hpp"

using namespace nuner::corpus;

namespace {

const std::string kExampleText =
    "Steven Means has signed a one-year contract extension with the Falcons after making "
    "four starts in 2018.";
const std::string kExampleCompletion =
    "Steven Means <> NFL player <> professional athlete\n"
    "Falcons <> NFL team <> professional sports team\n"
    "2018 <> year <> unit of time\n";

// Straight character scan for ASCII text, written independently of tokenize().
std::vector<Token> scan_ascii(const std::string& s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (std::isalnum(c)) {
      std::size_t j = i;
      while (j < s.size() && std::isalnum(static_cast<unsigned char>(s[j]))) ++j;
      out.push_back({s.substr(i, j - i), i, j});
      i = j;
    } else {
      out.push_back({s.substr(i, 1), i, i + 1});
      ++i;
    }
  }
  return out;
}

AnnotatedSentence make_sentence(const std::string& id, const std::string& text,
                                const std::vector<std::pair<std::string, std::string>>& anns) {
  AnnotatedSentence s;
  s.id = id;
  s.text = text;
  s.tokens = tokenize(text);
  std::map<std::string, SpanSet> used;
  for (const auto& [entity, concept_name] : anns) {
    auto a = align_annotation(text, s.tokens, {entity, concept_name, std::nullopt}, used[concept_name]);
    REQUIRE(a.has_value());
    s.annotations.push_back(*a);
  }
  return s;
}

Dataset example_dataset() {
  Dataset d;
  d.sentences.push_back(ingest_completion("example", kExampleText, kExampleCompletion).sentence);
  return d;
}

}  // namespace

TEST_CASE("tokenize examples") {
  CHECK(tokenize("").empty());
  CHECK(tokenize("Falcons.") == std::vector<Token>{{"Falcons", 0, 7}, {".", 7, 8}});
  const std::vector<Token> expected = {{"one", 0, 3}, {"-", 3, 4}, {"year", 4, 8}, {"contract", 9, 17}};
  CHECK(tokenize("one-year contract") == expected);
  CHECK(scan_ascii("one-year contract") == expected);
}

TEST_CASE("tokenize agrees with a character scan on random ASCII") {
  std::mt19937_64 rng(1);
  const std::string alphabet = "abcXYZ019 .,-!'\"()\t\n  ";
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    const std::size_t n = rng() % 40;
    for (std::size_t i = 0; i < n; ++i) s += alphabet[rng() % alphabet.size()];
    CHECK(tokenize(s) == scan_ascii(s));
  }
}

TEST_CASE("tokenizer partition property on unicode text") {
  const std::vector<std::string> samples = {
      "Zürich’s café — 3½ naïve “quotes”", "東京 is big.", "emoji 🙂 ok", "tab\there nbsp",
      "Ünïcödé-wörds, and — dashes"};
  for (const std::string& s : samples) {
    const auto tokens = tokenize(s);
    const auto offsets = code_point_offsets(s);
    const std::size_t n = offsets.size() - 1;
    std::vector<int> cover(n, 0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const Token& t = tokens[i];
      CHECK(t.char_start < t.char_end);
      if (i) CHECK(tokens[i - 1].char_end <= t.char_start);
      CHECK(slice_chars(s, t.char_start, t.char_end) == t.text);
      for (std::size_t c = t.char_start; c < t.char_end; ++c) ++cover[c];
    }
    for (std::size_t c = 0; c < n; ++c) {
      const std::string ch = slice_chars(s, c, c + 1);
      const bool space = ch == " " || ch == "\t" || ch == " ";
      CHECK(cover[c] == (space ? 0 : 1));
    }
  }
  // Offsets count characters, not bytes.
  const auto t = tokenize("café bar");
  REQUIRE(t.size() == 2);
  CHECK(t[1].char_start == 5);
  CHECK(t[1].char_end == 8);
}

TEST_CASE("parse_llm_output examples") {
  auto example = parse_llm_output("Steven Means <> NFL player <> professional athlete");
  REQUIRE(example.annotations.size() == 1);
  CHECK(example.annotations[0] == RawAnnotation{"Steven Means", "NFL player", "professional athlete"});
  CHECK(example.skipped_lines == 0);

  auto empty = parse_llm_output("");
  CHECK(empty.annotations.empty());
  CHECK(empty.skipped_lines == 0);

  auto mixed = parse_llm_output("garbage line\n2018 <> year <> unit of time");
  REQUIRE(mixed.annotations.size() == 1);
  CHECK(mixed.annotations[0] == RawAnnotation{"2018", "year", "unit of time"});
  CHECK(mixed.skipped_lines == 1);

  auto two = parse_llm_output("  Paris <>  city  \n <> x <> y\na <> b <> c <> d\n\n");
  REQUIRE(two.annotations.size() == 1);
  CHECK(two.annotations[0].entity_text == "Paris");
  CHECK(two.annotations[0].concept_name == "city");
  CHECK_FALSE(two.annotations[0].description.has_value());
  CHECK(two.skipped_lines == 2);
}

TEST_CASE("align_annotation examples") {
  const std::string text = "2018 was before 2018.";
  const auto tokens = tokenize(text);
  SpanSet used;
  auto first = align_annotation(text, tokens, {"2018", "year", std::nullopt}, used);
  REQUIRE(first);
  CHECK(first->char_start == 0);
  CHECK(first->char_end == 4);
  auto second = align_annotation(text, tokens, {"2018", "year", std::nullopt}, used);
  REQUIRE(second);
  CHECK(second->char_start == 16);
  CHECK(second->char_end == 20);
  CHECK(second->token_start == 3);
  CHECK(second->token_end == 4);
  CHECK_FALSE(align_annotation(text, tokens, {"2018", "year", std::nullopt}, used));

  SpanSet fresh;
  CHECK_FALSE(align_annotation("Falcons win", tokenize("Falcons win"), {"Eagles", "team", std::nullopt}, fresh));
}

TEST_CASE("second occurrence agrees with a linear scan") {
  const std::string text = "ab ab xab ab";
  std::vector<std::size_t> occurrences;
  for (std::size_t i = 0; i + 2 <= text.size(); ++i)
    if (text.compare(i, 2, "ab") == 0) occurrences.push_back(i);
  SpanSet used;
  const auto tokens = tokenize(text);
  for (std::size_t k = 0; k < occurrences.size(); ++k) {
    auto a = align_annotation(text, tokens, {"ab", "x", std::nullopt}, used);
    REQUIRE(a);
    CHECK(a->char_start == occurrences[k]);
  }
  // "xab" contains "ab" mid-token; the covering token is the whole word.
  SpanSet again;
  again.insert({0, 2});
  again.insert({3, 5});
  auto inner = align_annotation(text, tokens, {"ab", "x", std::nullopt}, again);
  REQUIRE(inner);
  CHECK(inner->char_start == 7);
  CHECK(tokens[inner->token_start].text == "xab");
}

TEST_CASE("example sentence ingests three aligned annotations") {
  auto ingest = ingest_completion("example", kExampleText, kExampleCompletion);
  REQUIRE(ingest.sentence.annotations.size() == 3);
  CHECK(ingest.unaligned == 0);
  CHECK(ingest.skipped_lines == 0);
  for (const auto& a : ingest.sentence.annotations) {
    CHECK(slice_chars(kExampleText, a.char_start, a.char_end) == a.entity);
  }
  const auto& steven = ingest.sentence.annotations[0];
  CHECK(steven.concept_name == "NFL player");
  CHECK(steven.token_end - steven.token_start == 2);
  CHECK(steven.description == "professional athlete");
}

TEST_CASE("alignment soundness over random completions") {
  std::mt19937_64 rng(9);
  const std::vector<std::string> words = {"alpha", "beta", "gamma", "beta gamma", "delta", "alp", "ta"};
  std::size_t total_aligned = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    for (int i = 0; i < 8; ++i) text += words[rng() % words.size()] + (rng() % 3 == 0 ? ", " : " ");
    std::string completion;
    for (int i = 0; i < 5; ++i) completion += words[rng() % words.size()] + " <> c" + std::to_string(rng() % 3) + "\n";
    auto ingest = ingest_completion("t", text, completion);
    for (const auto& a : ingest.sentence.annotations) {
      CHECK(slice_chars(text, a.char_start, a.char_end) == a.entity);
      CHECK(a.token_start < a.token_end);
      CHECK(a.token_end <= ingest.sentence.tokens.size());
      ++total_aligned;
    }
    CHECK(ingest.sentence.annotations.size() + ingest.unaligned == 5);
  }
  CHECK(total_aligned > 0);
}

TEST_CASE("filter_dataset removes generic concept sentences") {
  Dataset d;
  d.sentences.push_back(make_sentence("a", "Falcons win", {{"Falcons", "NFL team"}}));
  d.sentences.push_back(make_sentence("b", "x marks", {{"x", "concept"}}));
  d.sentences.push_back(make_sentence("c", "x marks", {{"x", "Concept "}}));
  d.sentences.push_back(make_sentence("d", "x y", {{"x", "letter"}, {"y", " CONCEPT"}}));
  auto [out, removed] = filter_dataset(d);
  CHECK(removed == 3);
  REQUIRE(out.size() == 1);
  CHECK(out.sentences[0] == d.sentences[0]);
  auto [twice, removed_again] = filter_dataset(out);
  CHECK(twice == out);
  CHECK(removed_again == 0);
}

TEST_CASE("build_concept_vocab counts and ordering") {
  CHECK(build_concept_vocab(Dataset{}).entries.empty());
  Dataset d;
  d.sentences.push_back(make_sentence("1", "a b c", {{"a", "person"}, {"b", "person"}, {"c", "year"}}));
  auto v = build_concept_vocab(d);
  REQUIRE(v.size() == 2);
  CHECK(v.entries[0] == std::pair<std::string, std::size_t>{"person", 2});
  CHECK(v.entries[1] == std::pair<std::string, std::size_t>{"year", 1});
  CHECK(v.total() == d.annotation_count());

  Dataset ties;
  ties.sentences.push_back(make_sentence("1", "p q", {{"q", "b"}, {"p", "a"}}));
  auto tv = build_concept_vocab(ties);
  CHECK(tv.entries[0].first == "a");
  CHECK(tv.entries[1].first == "b");
}

TEST_CASE("top_n_filter examples and monotonicity") {
  Dataset d;
  d.sentences.push_back(make_sentence("1", "a b", {{"a", "person"}, {"b", "year"}}));
  d.sentences.push_back(make_sentence("2", "c", {{"c", "person"}}));
  d.sentences.push_back(make_sentence("3", "y", {{"y", "year"}}));
  d.sentences.push_back(make_sentence("4", "e f g", {{"e", "person"}, {"f", "person"}, {"g", "person"}}));
  auto vocab = build_concept_vocab(d);
  REQUIRE(vocab.entries[0].first == "person");
  CHECK(top_n_filter(d, vocab, 2) == d);
  CHECK(top_n_filter(d, vocab, 50) == d);
  auto one = top_n_filter(d, vocab, 1);
  CHECK(one.size() == 3);
  for (const auto& s : one.sentences)
    for (const auto& a : s.annotations) CHECK(a.concept_name == "person");
  CHECK_THROWS_AS(top_n_filter(d, vocab, 0), std::invalid_argument);

  const auto world = make_world({});
  const auto corpus = make_pretrain_corpus(world, 300, 4);
  const auto cv = build_concept_vocab(corpus);
  std::size_t prev = 0;
  for (std::size_t n = 1; n <= cv.size(); ++n) {
    const std::size_t count = top_n_filter(corpus, cv, n).annotation_count();
    CHECK(count >= prev);
    prev = count;
  }
  CHECK(prev == corpus.annotation_count());
}

TEST_CASE("subsample contracts") {
  Dataset d;
  for (int i = 0; i < 3; ++i) d.sentences.push_back(make_sentence(std::to_string(i), "w", {}));
  CHECK(subsample(d, 3, 1) == d);
  CHECK(subsample(d, 2, 77) == subsample(d, 2, 77));
  CHECK_THROWS_AS(subsample(d, 4, 1), std::invalid_argument);

  std::map<std::string, int> hits;
  const int seeds = 10000;
  for (int seed = 0; seed < seeds; ++seed) ++hits[subsample(d, 1, seed).sentences.at(0).id];
  for (const auto& [id, n] : hits) CHECK(std::abs(n / double(seeds) - 1.0 / 3.0) < 0.05);
  CHECK(hits.size() == 3);

  Dataset big;
  for (int i = 0; i < 50; ++i) big.sentences.push_back(make_sentence(std::to_string(100 + i), "w", {}));
  auto s = subsample(big, 20, 5);
  for (std::size_t i = 1; i < s.size(); ++i) CHECK(s.sentences[i - 1].id < s.sentences[i].id);
}

TEST_CASE("dataset io round trip and errors") {
  std::stringstream buf;
  const Dataset example = example_dataset();
  write_dataset(buf, example);
  const Dataset back = read_dataset(buf);
  CHECK(back == example);
  CHECK(back.sentences[0].annotations.size() == 3);

  std::stringstream empty;
  write_dataset(empty, Dataset{});
  CHECK(read_dataset(empty).sentences.empty());

  std::stringstream missing(
      "{\"format\":\"nuner-dataset\",\"version\":1}\n"
      "{\"id\":\"a\",\"text\":\"x\",\"annotations\":[]}\n"
      "{\"id\":\"b\",\"annotations\":[]}\n");
  try {
    read_dataset(missing);
    FAIL("expected DatasetFormatError");
  } catch (const DatasetFormatError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("text") != std::string::npos);
  }

  std::stringstream version("{\"format\":\"nuner-dataset\",\"version\":2}\n");
  CHECK_THROWS_AS(read_dataset(version), DatasetFormatError);
  std::stringstream garbage("{\"format\":\"nuner-dataset\",\"version\":1}\nnot json\n");
  CHECK_THROWS_AS(read_dataset(garbage), DatasetFormatError);
  std::stringstream mismatch(
      "{\"format\":\"nuner-dataset\",\"version\":1}\n"
      "{\"id\":\"a\",\"text\":\"hello\",\"annotations\":[{\"concept\":\"c\",\"start\":0,\"end\":2,"
      "\"entity\":\"no\"}]}\n");
  CHECK_THROWS_AS(read_dataset(mismatch), DatasetFormatError);
}

TEST_CASE("io round trip on generated datasets") {
  const auto world = make_world({.num_concepts = 6, .forms_per_concept = 5, .seed = 3});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Dataset d = seed % 2 ? make_ner_task(world, 40, seed) : make_pretrain_corpus(world, 40, seed);
    if (seed == 4) d.ingestion = IngestStats{40, 1, 2, 3, 4};
    std::stringstream buf;
    write_dataset(buf, d);
    CHECK(read_dataset(buf) == d);
  }
}

TEST_CASE("build_dataset counts ingestion events") {
  std::vector<DumpRecord> dump = {
      {"1", kExampleText, kExampleCompletion + "junk\nEagles <> NFL team\n"},
      {"2", "An idea of things.", "idea <> concept <> x\n"},
      {"3", "Nothing here.", ""},
  };
  Dataset d = build_dataset(dump);
  REQUIRE(d.ingestion);
  CHECK(d.ingestion->sentences == 3);
  CHECK(d.ingestion->skipped_lines == 1);
  CHECK(d.ingestion->unaligned_annotations == 1);
  CHECK(d.ingestion->removed_sentences == 1);
  CHECK(d.size() == 2);
  const auto stats = dataset_stats(d);
  CHECK(stats["total_annotations"] == 3);
  CHECK(stats["vocab_size"] == 3);
  CHECK(stats["skipped_lines"] == 1);
  CHECK(stats["dropped_unaligned_annotations"] == 1);
  CHECK(stats["top_concepts"].size() == 3);
  CHECK(stats["frequency_rank"].size() == 3);  // ranks 1, 2 and the tail 3
}

TEST_CASE("synth_corpus contracts") {
  SynthSpec spec;
  spec.templates = {"{person} visited {city} ."};
  spec.concepts = {{"person", {"Ana", "Bo Lee"}}, {"city", {"Rome", "Oslo"}}};
  spec.sentence_count = 0;
  CHECK(synth_corpus(spec).sentences.empty());
  spec.sentence_count = 50;
  spec.seed = 3;
  const Dataset d = synth_corpus(spec);
  CHECK(d == synth_corpus(spec));
  for (const auto& s : d.sentences) {
    CHECK(s.annotations.size() == 2);
    for (const auto& a : s.annotations) CHECK(slice_chars(s.text, a.char_start, a.char_end) == a.entity);
  }
  SynthSpec bad = spec;
  bad.templates.clear();
  CHECK_THROWS_AS(synth_corpus(bad), std::invalid_argument);
  bad = spec;
  bad.concepts.clear();
  CHECK_THROWS_AS(synth_corpus(bad), std::invalid_argument);
  bad = spec;
  bad.concepts[1].surface_forms.push_back("Ana");
  CHECK_THROWS_AS(synth_corpus(bad), std::invalid_argument);
  bad = spec;
  bad.templates = {"{planet} ."};
  CHECK_THROWS_AS(synth_corpus(bad), std::invalid_argument);

  // Counting oracle: every generated annotation tallied by hand.
  const auto world = make_world({.num_concepts = 4, .seed = 11});
  const Dataset big = make_pretrain_corpus(world, 1000, 5);
  std::map<std::string, std::size_t> tally;
  std::size_t total = 0;
  for (const auto& s : big.sentences)
    for (const auto& a : s.annotations) {
      ++tally[a.concept_name];
      ++total;
    }
  const auto vocab = build_concept_vocab(big);
  CHECK(vocab.size() == 4);
  CHECK(vocab.total() == total);
  for (const auto& [name, count] : vocab.entries) CHECK(tally[name] == count);
}
