#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nuner/encoder/config.hpp"
#include "nuner/encoder/vocab.hpp"
#include "nuner/numerics/ops.hpp"

namespace nuner::enc {

using num::Parameter;
using num::Tape;
using num::Tensor;
using num::Var;

/// Dropout is active only when training is set; rng must then be non-null.
struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;
  /// When non-null, receives every head's post-softmax attention matrix.
  std::vector<Tensor<double>>* attention = nullptr;
};

/// Pre-norm transformer encoder with learned positional embeddings and
/// full bidirectional attention. Sentences are encoded one at a time.
/// The key projection has no bias: softmax is invariant to it, so its
/// gradient is identically zero.
template <typename Real>
class TransformerEncoder {
 public:
  /// Weights ~ N(0, 0.02), biases 0, layer-norm gains 1. Parameter names are
  /// prefixed with `prefix` (for example "text" or "concept").
  TransformerEncoder(EncoderConfig config, Vocab vocab, std::string prefix, std::uint64_t seed);

  TransformerEncoder(const TransformerEncoder& other);
  /// Copy carrying a different parameter-name prefix.
  TransformerEncoder(const TransformerEncoder& other, std::string prefix);
  TransformerEncoder& operator=(const TransformerEncoder& other);

  const EncoderConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }
  const std::string& prefix() const { return prefix_; }

  std::vector<Parameter<Real>*> parameters();
  std::vector<const Parameter<Real>*> parameters() const;
  /// Lookup by name without the prefix, e.g. "layers.0.attn.wq".
  Parameter<Real>& parameter(std::string_view local_name);
  std::size_t parameter_count() const;

  /// Token ids -> [T x d]. Inputs longer than max_sequence_length are
  /// truncated and counted in truncation_count(). Throws on empty input.
  Var<Real> encode(Tape<Real>& tape, std::span<const int> ids, const ForwardOptions& options = {});
  /// Eval-mode convenience returning a detached tensor.
  Tensor<Real> encode(std::span<const int> ids);

  /// Freezes the lowest n layers, plus the embeddings when n > 0 and
  /// `embeddings` is set; everything else becomes trainable. Throws
  /// std::invalid_argument when n > num_layers.
  void freeze_bottom_layers(std::size_t n, bool embeddings = true);

  std::size_t truncation_count() const { return truncations_.load(); }

 private:
  struct Layer {
    Parameter<Real> ln1_gamma, ln1_beta;
    Parameter<Real> wq, bq, wk, wv, bv, wo, bo;
    Parameter<Real> ln2_gamma, ln2_beta;
    Parameter<Real> w1, b1, w2, b2;
  };

  Var<Real> attention(Tape<Real>& tape, Layer& layer, Var<Real> h, const ForwardOptions& options);

  EncoderConfig config_;
  Vocab vocab_;
  std::string prefix_;
  Parameter<Real> token_embedding_;
  Parameter<Real> position_embedding_;
  std::vector<Layer> layers_;
  Parameter<Real> final_gamma_, final_beta_;
  std::atomic<std::size_t> truncations_{0};
};

template <typename Real>
class TextEncoder : public TransformerEncoder<Real> {
 public:
  TextEncoder(EncoderConfig config, Vocab vocab, std::uint64_t seed)
      : TransformerEncoder<Real>(std::move(config), std::move(vocab), "text", seed) {}
  explicit TextEncoder(const TransformerEncoder<Real>& base) : TransformerEncoder<Real>(base, "text") {}
};

/// Same architecture with independent parameters; a concept name becomes
/// the mean of its contextual token vectors.
template <typename Real>
class ConceptEncoder : public TransformerEncoder<Real> {
 public:
  ConceptEncoder(EncoderConfig config, Vocab vocab, std::uint64_t seed)
      : TransformerEncoder<Real>(std::move(config), std::move(vocab), "concept", seed) {}
  explicit ConceptEncoder(const TransformerEncoder<Real>& base)
      : TransformerEncoder<Real>(base, "concept") {}

  /// [1 x d]. Throws std::invalid_argument for a name with no tokens.
  Var<Real> encode_concept(Tape<Real>& tape, std::string_view name, const ForwardOptions& options = {});
  /// Eval-mode vector of shape [d].
  Tensor<Real> encode_concept(std::string_view name);
};

/// temp_sigmoid(token_vecs * concept_vecs^T, tau): [T x C] probabilities.
template <typename Real>
Var<Real> score_concepts(Var<Real> token_vecs, Var<Real> concept_vecs, Real tau);

template <typename Real>
Tensor<Real> score_concepts(const Tensor<Real>& token_vecs, const Tensor<Real>& concept_vecs, Real tau);

}  // namespace nuner::enc
