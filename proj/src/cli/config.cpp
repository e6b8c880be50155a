#include "nuner/cli/config.hpp"

#include <charconv>
#include <ctime>
#include <fstream>
#include <regex>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace nuner::cli {

namespace {

template <typename F>
auto section(const char* name, F&& parse) {
  try {
    return parse();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    const std::string what = e.what();
    // Module validators already name their section.
    if (what.rfind(name, 0) == 0) throw ConfigError(what);
    throw ConfigError(std::string(name) + ": " + what);
  }
}

void reject_seed(const nlohmann::json& j, const char* name) {
  if (j.is_object() && j.contains("seed")) {
    throw ConfigError(std::string(name) + ".seed: module seeds derive from the top-level seed");
  }
}

nlohmann::json without_seed(nlohmann::json j) {
  j.erase("seed");
  return j;
}

nlohmann::json scalar_to_json(const YAML::Node& node) {
  const std::string& s = node.Scalar();
  if (node.Tag() == "!") return s;
  static const std::regex int_re(R"([-+]?[0-9]+)");
  static const std::regex float_re(R"([-+]?([0-9]+\.?[0-9]*|\.[0-9]+)([eE][-+]?[0-9]+)?)");
  if (s.empty() || s == "~" || s == "null" || s == "Null" || s == "NULL") return nullptr;
  if (s == "true" || s == "True" || s == "TRUE") return true;
  if (s == "false" || s == "False" || s == "FALSE") return false;
  if (std::regex_match(s, int_re)) {
    const char* first = s.data() + (s[0] == '+' ? 1 : 0);
    const char* last = s.data() + s.size();
    if (s[0] == '-') {
      std::int64_t v = 0;
      if (std::from_chars(first, last, v).ec == std::errc{}) return v;
    } else {
      std::uint64_t v = 0;
      if (std::from_chars(first, last, v).ec == std::errc{}) return v;
    }
    throw ConfigError("integer out of range: " + s);
  }
  if (std::regex_match(s, float_re)) return std::stod(s);
  return s;
}

nlohmann::json yaml_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Scalar:
      return scalar_to_json(node);
    case YAML::NodeType::Sequence: {
      nlohmann::json out = nlohmann::json::array();
      for (const auto& item : node) out.push_back(yaml_to_json(item));
      return out;
    }
    case YAML::NodeType::Map: {
      nlohmann::json out = nlohmann::json::object();
      for (const auto& kv : node) out[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return out;
    }
  }
  return nullptr;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

void emit(YAML::Emitter& out, const nlohmann::json& j) {
  switch (j.type()) {
    case nlohmann::json::value_t::object:
      out << YAML::BeginMap;
      for (const auto& [k, v] : j.items()) {
        out << YAML::Key << k << YAML::Value;
        emit(out, v);
      }
      out << YAML::EndMap;
      break;
    case nlohmann::json::value_t::array: {
      bool flat = true;
      for (const auto& v : j) flat = flat && v.is_primitive();
      if (flat) out << YAML::Flow;
      out << YAML::BeginSeq;
      for (const auto& v : j) emit(out, v);
      out << YAML::EndSeq;
      break;
    }
    case nlohmann::json::value_t::string:
      out << YAML::DoubleQuoted << j.get<std::string>();
      break;
    case nlohmann::json::value_t::boolean:
      out << j.get<bool>();
      break;
    case nlohmann::json::value_t::number_integer:
      out << j.get<std::int64_t>();
      break;
    case nlohmann::json::value_t::number_unsigned:
      out << j.get<std::uint64_t>();
      break;
    case nlohmann::json::value_t::number_float:
      out << format_double(j.get<double>());
      break;
    default:
      out << YAML::Null;
  }
}

}  // namespace

void RunConfig::resolve() {
  pretrain.seed = seed;
  mlm.seed = seed;
  fewshot.seed = seed;
  section("encoder", [&] {
    // vocab_size 0 means "size of the vocabulary built from the data".
    enc::EncoderConfig probe = encoder;
    if (probe.vocab_size == 0) probe.vocab_size = 3;
    probe.validate();
    return 0;
  });
  section("pretrain", [&] { pretrain.validate(); return 0; });
  section("mlm", [&] { mlm.validate(); return 0; });
  section("annotator", [&] { annotator.validate(); return 0; });
  section("fewshot", [&] { fs::validate(fewshot); return 0; });
  if (pretrain.freeze_bottom && *pretrain.freeze_bottom > encoder.num_layers) {
    throw ConfigError("pretrain.freeze_bottom exceeds encoder.num_layers");
  }
  if (ablation.k == 0) throw ConfigError("ablation.k must be at least 1");
  if (ablation.concept_n.empty() || ablation.sizes.empty()) {
    throw ConfigError("ablation: concept_n and sizes must not be empty");
  }
  for (std::size_t s : ablation.sizes) {
    if (s == 0) throw ConfigError("ablation.sizes entries must be positive");
  }
  if (world.task_types == 0 || world.task_types > world.num_concepts) {
    throw ConfigError("synth.task_types must be in [1, num_concepts]");
  }
}

RunConfig run_config_from_json(const nlohmann::json& doc) {
  if (doc.is_null()) return {};
  if (!doc.is_object()) throw ConfigError("config: expected a mapping of sections");
  RunConfig c;
  for (const auto& [key, v] : doc.items()) {
    if (key == "seed") {
      c.seed = section("seed", [&] { return v.get<std::uint64_t>(); });
    } else if (key == "encoder") {
      c.encoder = section("encoder", [&] { return enc::config_from_json(v); });
    } else if (key == "pretrain") {
      reject_seed(v, "pretrain");
      c.pretrain = section("pretrain", [&] { return pre::pretrain_config_from_json(v); });
    } else if (key == "mlm") {
      reject_seed(v, "mlm");
      c.mlm = section("mlm", [&] { return pre::mlm_config_from_json(v); });
    } else if (key == "annotator") {
      c.annotator = section("annotator", [&] { return ann::annotator_config_from_json(v); });
    } else if (key == "fewshot") {
      reject_seed(v, "fewshot");
      c.fewshot = section("fewshot", [&] { return fs::protocol_config_from_json(v); });
    } else if (key == "synth") {
      section("synth", [&] {
        nlohmann::json world = nlohmann::json::object();
        for (const auto& [k, x] : v.items()) {
          if (k == "pretrain_sentences") c.synth.pretrain_sentences = x.get<std::size_t>();
          else if (k == "ner_train_sentences") c.synth.ner_train_sentences = x.get<std::size_t>();
          else if (k == "ner_test_sentences") c.synth.ner_test_sentences = x.get<std::size_t>();
          else world[k] = x;
        }
        c.world = corpus::world_options_from_json(world);
        return 0;
      });
    } else if (key == "ablation") {
      section("ablation", [&] {
        for (const auto& [k, x] : v.items()) {
          if (k == "concept_n") c.ablation.concept_n = x.get<std::vector<std::size_t>>();
          else if (k == "sizes") c.ablation.sizes = x.get<std::vector<std::size_t>>();
          else if (k == "k") c.ablation.k = x.get<std::size_t>();
          else throw std::invalid_argument("unknown key " + k);
        }
        return 0;
      });
    } else if (key == "paths") {
      section("paths", [&] {
        for (const auto& [k, x] : v.items()) {
          if (!x.is_null()) c.paths[k] = x.get<std::string>();
        }
        return 0;
      });
    } else {
      throw ConfigError("config: unknown section " + key);
    }
  }
  return c;
}

nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json synth = corpus::world_options_to_json(c.world);
  synth["pretrain_sentences"] = c.synth.pretrain_sentences;
  synth["ner_train_sentences"] = c.synth.ner_train_sentences;
  synth["ner_test_sentences"] = c.synth.ner_test_sentences;
  return {{"seed", c.seed},
          {"encoder", enc::config_to_json(c.encoder)},
          {"pretrain", without_seed(pre::pretrain_config_to_json(c.pretrain))},
          {"mlm", without_seed(pre::mlm_config_to_json(c.mlm))},
          {"annotator", ann::annotator_config_to_json(c.annotator)},
          {"fewshot", without_seed(fs::protocol_config_to_json(c.fewshot))},
          {"synth", synth},
          {"ablation", {{"concept_n", c.ablation.concept_n}, {"sizes", c.ablation.sizes}, {"k", c.ablation.k}}},
          {"paths", c.paths}};
}

nlohmann::json parse_yaml(std::string_view text) {
  try {
    return yaml_to_json(YAML::Load(std::string(text)));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

nlohmann::json load_config_document(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_yaml(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_yaml(const nlohmann::json& doc) {
  YAML::Emitter out;
  emit(out, doc);
  return std::string(out.c_str()) + "\n";
}

void apply_override(nlohmann::json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("--set expects section.key=value, got '" + std::string(assignment) + "'");
  }
  const std::string path(assignment.substr(0, eq));
  const std::string value(assignment.substr(eq + 1));
  if (doc.is_null()) doc = nlohmann::json::object();
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("--set: empty path component in '" + path + "'");
    if (!node->is_object()) throw ConfigError("--set: '" + path + "' does not name a section key");
    if (dot == std::string::npos) {
      (*node)[part] = parse_yaml(value);
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

std::filesystem::path make_run_directory(const std::filesystem::path& base, const std::string& name) {
  std::filesystem::create_directories(base);
  const std::time_t now = std::time(nullptr);
  std::tm utc{};
  gmtime_r(&now, &utc);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &utc);
  const std::string stem = std::string(stamp) + "-" + name;
  for (int n = 1;; ++n) {
    const auto dir = base / (n == 1 ? stem : stem + "-" + std::to_string(n));
    if (std::filesystem::create_directory(dir)) return dir;
  }
}

}  // namespace nuner::cli
