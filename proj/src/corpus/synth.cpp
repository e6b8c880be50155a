#include "nuner/corpus/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <variant>

#include "nuner/corpus/annotations.hpp"
#include "nuner/corpus/text.hpp"

namespace nuner::corpus {

namespace {

struct Literal {
  std::string text;
};
struct Slot {
  std::size_t concept_index;
};
using Piece = std::variant<Literal, Slot>;

std::vector<Piece> parse_template(const std::string& tmpl,
                                  const std::map<std::string, std::size_t>& index) {
  std::vector<Piece> pieces;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const std::size_t open = tmpl.find('{', pos);
    if (open == std::string::npos) {
      pieces.push_back(Literal{tmpl.substr(pos)});
      break;
    }
    if (open > pos) pieces.push_back(Literal{tmpl.substr(pos, open - pos)});
    const std::size_t close = tmpl.find('}', open);
    if (close == std::string::npos) {
      throw std::invalid_argument("synth_corpus: unterminated slot in template \"" + tmpl + "\"");
    }
    const std::string name = tmpl.substr(open + 1, close - open - 1);
    const auto it = index.find(name);
    if (it == index.end()) {
      throw std::invalid_argument("synth_corpus: template slot {" + name +
                                  "} names no known concept");
    }
    pieces.push_back(Slot{it->second});
    pos = close + 1;
  }
  return pieces;
}

std::size_t pick(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

class WordMaker {
 public:
  explicit WordMaker(std::mt19937_64& rng) : rng_(rng) {}

  std::string make(std::size_t min_syllables, std::size_t max_syllables) {
    static constexpr std::string_view kOnsets = "bdfgklmnprstvz";
    static constexpr std::string_view kVowels = "aeiou";
    while (true) {
      const std::size_t n = min_syllables + pick(rng_, max_syllables - min_syllables + 1);
      std::string w;
      for (std::size_t i = 0; i < n; ++i) {
        w += kOnsets[pick(rng_, kOnsets.size())];
        w += kVowels[pick(rng_, kVowels.size())];
      }
      if (used_.insert(w).second) return w;
    }
  }

 private:
  std::mt19937_64& rng_;
  std::set<std::string> used_;
};

std::string capitalize(std::string w) {
  if (!w.empty() && w[0] >= 'a' && w[0] <= 'z') w[0] = static_cast<char>(w[0] - 'a' + 'A');
  return w;
}

std::string make_template(std::mt19937_64& rng, const std::vector<std::string>& fillers,
                          const std::vector<std::string>& slot_names) {
  const std::size_t n_words = 5 + pick(rng, 6);
  std::vector<std::string> words;
  for (std::size_t i = 0; i < n_words; ++i) words.push_back(fillers[pick(rng, fillers.size())]);
  for (const auto& name : slot_names) {
    const std::size_t at = pick(rng, words.size() + 1);
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), "{" + name + "}");
  }
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out + " .";
}

const std::vector<std::string>& concept_names() {
  static const std::vector<std::string> names = {
      "person",   "city",       "company", "food",    "animal",  "sport",
      "disease",  "instrument", "river",   "drug",    "vehicle", "language",
      "planet",   "film",       "mineral", "holiday"};
  return names;
}

}  // namespace

Dataset synth_corpus(const SynthSpec& spec) {
  if (spec.templates.empty()) throw std::invalid_argument("synth_corpus: no templates");
  if (spec.concepts.empty()) throw std::invalid_argument("synth_corpus: no concepts");
  std::map<std::string, std::size_t> index;
  std::map<std::string, std::string> form_owner;
  for (std::size_t i = 0; i < spec.concepts.size(); ++i) {
    const SynthConcept& c = spec.concepts[i];
    if (c.surface_forms.empty()) {
      throw std::invalid_argument("synth_corpus: concept \"" + c.name + "\" has no surface forms");
    }
    index.emplace(c.name, i);
    for (const auto& f : c.surface_forms) {
      const auto [it, inserted] = form_owner.emplace(f, c.name);
      if (!inserted && it->second != c.name) {
        throw std::invalid_argument("synth_corpus: surface form \"" + f +
                                    "\" shared by concepts \"" + it->second + "\" and \"" +
                                    c.name + "\"");
      }
    }
  }
  std::vector<std::vector<Piece>> templates;
  for (const auto& t : spec.templates) templates.push_back(parse_template(t, index));

  std::mt19937_64 rng(spec.seed);
  Dataset out;
  out.sentences.reserve(spec.sentence_count);
  for (std::size_t i = 0; i < spec.sentence_count; ++i) {
    AnnotatedSentence s;
    s.id = "synth-" + std::to_string(spec.seed) + "-" + std::to_string(i);
    std::size_t chars = 0;
    for (const Piece& piece : templates[pick(rng, templates.size())]) {
      if (const auto* lit = std::get_if<Literal>(&piece)) {
        s.text += lit->text;
        chars += code_point_count(lit->text);
        continue;
      }
      const SynthConcept& c = spec.concepts[std::get<Slot>(piece).concept_index];
      const std::string& form = c.surface_forms[pick(rng, c.surface_forms.size())];
      AlignedAnnotation a;
      a.concept_name = c.name;
      a.entity = form;
      a.char_start = chars;
      chars += code_point_count(form);
      a.char_end = chars;
      s.text += form;
      s.annotations.push_back(std::move(a));
    }
    s.tokens = tokenize(s.text);
    for (auto& a : s.annotations) {
      std::tie(a.token_start, a.token_end) = covering_tokens(s.tokens, a.char_start, a.char_end);
    }
    dedupe_annotations(s);
    out.sentences.push_back(std::move(s));
  }
  return out;
}

SyntheticWorld make_world(const WorldOptions& options) {
  if (options.num_concepts == 0) throw std::invalid_argument("make_world: no concepts");
  std::mt19937_64 rng(options.seed);
  WordMaker words(rng);
  SyntheticWorld world;
  for (std::size_t i = 0; i < options.num_concepts; ++i) {
    SynthConcept c;
    c.name = i < concept_names().size() ? concept_names()[i] : "concept" + std::to_string(i);
    for (std::size_t f = 0; f < options.forms_per_concept; ++f) {
      std::string form = capitalize(words.make(2, 3));
      if (pick(rng, 4) == 0) form += " " + capitalize(words.make(2, 3));
      c.surface_forms.push_back(std::move(form));
    }
    world.concepts.push_back(std::move(c));
  }
  std::vector<std::string> fillers;
  for (std::size_t i = 0; i < options.filler_words; ++i) fillers.push_back(words.make(1, 3));

  std::vector<double> zipf;
  for (std::size_t i = 0; i < options.num_concepts; ++i) {
    zipf.push_back(1.0 / std::pow(static_cast<double>(i + 1), options.zipf_exponent));
  }
  std::discrete_distribution<std::size_t> by_frequency(zipf.begin(), zipf.end());
  for (std::size_t t = 0; t < options.pretrain_templates; ++t) {
    std::vector<std::string> slots;
    const std::size_t n_slots = 1 + pick(rng, 3);
    for (std::size_t s = 0; s < n_slots; ++s) slots.push_back(world.concepts[by_frequency(rng)].name);
    world.pretrain_templates.push_back(make_template(rng, fillers, slots));
  }

  // Downstream types skip the most frequent concept so that concept-diversity
  // ablations have something to lose.
  std::vector<std::size_t> type_idx;
  for (std::size_t i : {1, 2, 4, 6, 3, 5, 7, 0}) {
    if (i < options.num_concepts && type_idx.size() < options.task_types) type_idx.push_back(i);
  }
  std::sort(type_idx.begin(), type_idx.end());
  std::vector<std::size_t> other_idx;
  for (std::size_t i = 0; i < options.num_concepts; ++i) {
    if (std::find(type_idx.begin(), type_idx.end(), i) == type_idx.end()) other_idx.push_back(i);
  }
  for (std::size_t i : type_idx) world.task_types.push_back(world.concepts[i].name);
  for (std::size_t t = 0; t < options.task_templates; ++t) {
    std::vector<std::string> slots;
    const std::size_t n_slots = 1 + pick(rng, 3);
    for (std::size_t s = 0; s < n_slots; ++s) {
      const bool distractor = !other_idx.empty() && pick(rng, 5) == 0;
      const std::size_t c = distractor ? other_idx[pick(rng, other_idx.size())]
                                       : type_idx[pick(rng, type_idx.size())];
      slots.push_back(world.concepts[c].name);
    }
    world.task_templates.push_back(make_template(rng, fillers, slots));
  }
  return world;
}

nlohmann::json world_options_to_json(const WorldOptions& o) {
  return {{"num_concepts", o.num_concepts},
          {"forms_per_concept", o.forms_per_concept},
          {"pretrain_templates", o.pretrain_templates},
          {"task_templates", o.task_templates},
          {"filler_words", o.filler_words},
          {"task_types", o.task_types},
          {"zipf_exponent", o.zipf_exponent},
          {"world_seed", o.seed}};
}

WorldOptions world_options_from_json(const nlohmann::json& j) {
  WorldOptions o;
  for (const auto& [key, v] : j.items()) {
    if (key == "num_concepts") o.num_concepts = v.get<std::size_t>();
    else if (key == "forms_per_concept") o.forms_per_concept = v.get<std::size_t>();
    else if (key == "pretrain_templates") o.pretrain_templates = v.get<std::size_t>();
    else if (key == "task_templates") o.task_templates = v.get<std::size_t>();
    else if (key == "filler_words") o.filler_words = v.get<std::size_t>();
    else if (key == "task_types") o.task_types = v.get<std::size_t>();
    else if (key == "zipf_exponent") o.zipf_exponent = v.get<double>();
    else if (key == "world_seed") o.seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("synthetic world: unknown key " + key);
  }
  return o;
}

Dataset make_pretrain_corpus(const SyntheticWorld& world, std::size_t count, std::uint64_t seed) {
  return synth_corpus({world.pretrain_templates, world.concepts, count, seed});
}

Dataset make_ner_task(const SyntheticWorld& world, std::size_t count, std::uint64_t seed) {
  Dataset ds = synth_corpus({world.task_templates, world.concepts, count, seed});
  const std::set<std::string> types(world.task_types.begin(), world.task_types.end());
  for (auto& s : ds.sentences) {
    std::erase_if(s.annotations, [&](const AlignedAnnotation& a) { return !types.contains(a.concept_name); });
  }
  ds.entity_types = world.task_types;
  return ds;
}

}  // namespace nuner::corpus
