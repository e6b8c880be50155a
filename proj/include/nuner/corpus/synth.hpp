#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nuner/corpus/types.hpp"

namespace nuner::corpus {

struct SynthConcept {
  std::string name;
  std::vector<std::string> surface_forms;
};

/// Templates contain typed slots written as {concept name}; each slot is
/// filled with a random surface form of that concept.
struct SynthSpec {
  std::vector<std::string> templates;
  std::vector<SynthConcept> concepts;
  std::size_t sentence_count = 0;
  std::uint64_t seed = 0;
};

/// Deterministic templated corpus with gold annotations by construction.
/// Surface forms must be disjoint across concepts.
Dataset synth_corpus(const SynthSpec& spec);

struct WorldOptions {
  std::size_t num_concepts = 12;
  std::size_t forms_per_concept = 24;
  std::size_t pretrain_templates = 400;
  std::size_t task_templates = 24;
  std::size_t filler_words = 160;
  std::size_t task_types = 4;
  /// Exponent of the Zipf weights used to pick slot concepts.
  double zipf_exponent = 0.8;
  std::uint64_t seed = 7;
};

/// A reusable synthetic domain: concepts ordered by frequency weight, one
/// template family for pre-training and a disjoint family for a downstream
/// NER task whose entity types are a subset of the concepts.
struct SyntheticWorld {
  std::vector<SynthConcept> concepts;
  std::vector<std::string> pretrain_templates;
  std::vector<std::string> task_templates;
  std::vector<std::string> task_types;
};

SyntheticWorld make_world(const WorldOptions& options = {});

/// Unknown keys throw std::invalid_argument.
nlohmann::json world_options_to_json(const WorldOptions& options);
WorldOptions world_options_from_json(const nlohmann::json& j);

Dataset make_pretrain_corpus(const SyntheticWorld& world, std::size_t count, std::uint64_t seed);

/// Downstream NER data: only annotations of world.task_types are kept as gold
/// and entity_types is set.
Dataset make_ner_task(const SyntheticWorld& world, std::size_t count, std::uint64_t seed);

}  // namespace nuner::corpus
