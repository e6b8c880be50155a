#include "nuner/encoder/config.hpp"

#include <stdexcept>

namespace nuner::enc {

void EncoderConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("encoder config: " + msg); };
  if (num_layers == 0) fail("num_layers must be positive");
  if (model_dim == 0 || num_heads == 0) fail("model_dim and num_heads must be positive");
  if (model_dim % num_heads != 0) {
    fail("model_dim " + std::to_string(model_dim) + " is not divisible by num_heads " +
         std::to_string(num_heads));
  }
  if (feedforward_dim == 0) fail("feedforward_dim must be positive");
  if (vocab_size < 3) fail("vocab_size must be at least 3");
  if (max_sequence_length == 0) fail("max_sequence_length must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must be in [0, 1)");
  if (resolved_freeze_bottom() > num_layers) fail("freeze_bottom exceeds num_layers");
  if (precision != "float32" && precision != "float64") {
    fail("precision must be float32 or float64, got " + precision);
  }
}

std::size_t expected_parameter_count(const EncoderConfig& c) {
  const std::size_t d = c.model_dim, ff = c.feedforward_dim;
  const std::size_t per_layer = 2 * d + (4 * d * d + 3 * d) + 2 * d + (d * ff + ff) + (ff * d + d);
  return c.vocab_size * d + c.max_sequence_length * d + c.num_layers * per_layer + 2 * d;
}

nlohmann::json config_to_json(const EncoderConfig& c) {
  nlohmann::json j = {
      {"num_layers", c.num_layers},
      {"model_dim", c.model_dim},
      {"num_heads", c.num_heads},
      {"feedforward_dim", c.feedforward_dim},
      {"vocab_size", c.vocab_size},
      {"max_sequence_length", c.max_sequence_length},
      {"dropout_p", c.dropout_p},
      {"precision", c.precision},
  };
  j["freeze_bottom"] = c.freeze_bottom ? nlohmann::json(*c.freeze_bottom) : nlohmann::json(nullptr);
  return j;
}

EncoderConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("encoder config: expected a JSON object");
  EncoderConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "num_layers") c.num_layers = value.get<std::size_t>();
    else if (key == "model_dim") c.model_dim = value.get<std::size_t>();
    else if (key == "num_heads") c.num_heads = value.get<std::size_t>();
    else if (key == "feedforward_dim") c.feedforward_dim = value.get<std::size_t>();
    else if (key == "vocab_size") c.vocab_size = value.get<std::size_t>();
    else if (key == "max_sequence_length") c.max_sequence_length = value.get<std::size_t>();
    else if (key == "dropout_p") c.dropout_p = value.get<double>();
    else if (key == "precision") c.precision = value.get<std::string>();
    else if (key == "freeze_bottom") {
      if (value.is_null()) c.freeze_bottom.reset();
      else c.freeze_bottom = value.get<std::size_t>();
    } else {
      throw std::invalid_argument("encoder config: unknown key " + key);
    }
  }
  return c;
}

}  // namespace nuner::enc
