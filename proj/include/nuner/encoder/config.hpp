#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace nuner::enc {

struct EncoderConfig {
  std::size_t num_layers = 4;
  std::size_t model_dim = 64;
  std::size_t num_heads = 4;
  std::size_t feedforward_dim = 256;
  std::size_t vocab_size = 0;
  std::size_t max_sequence_length = 64;
  double dropout_p = 0.1;
  /// Number of bottom layers (plus embeddings) frozen during pre-training.
  /// Unset means num_layers / 2.
  std::optional<std::size_t> freeze_bottom;
  /// "float32" or "float64".
  std::string precision = "float32";

  std::size_t head_dim() const { return model_dim / num_heads; }
  std::size_t resolved_freeze_bottom() const {
    return freeze_bottom.value_or(num_layers / 2);
  }

  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Closed-form parameter count of one encoder with this configuration.
std::size_t expected_parameter_count(const EncoderConfig& config);

nlohmann::json config_to_json(const EncoderConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
EncoderConfig config_from_json(const nlohmann::json& j);

}  // namespace nuner::enc
