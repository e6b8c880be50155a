#include "nuner/encoder/model.hpp"

#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "nuner/corpus/text.hpp"

namespace nuner::enc {

namespace {

constexpr double kInitStd = 0.02;

template <typename Real>
Parameter<Real> make_param(const std::string& name, num::Shape shape) {
  return Parameter<Real>(name, Tensor<Real>(std::move(shape)));
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

template <typename Real>
Var<Real> linear(Tape<Real>& tape, Var<Real> x, Parameter<Real>& w, Parameter<Real>& b) {
  return num::add(num::matmul(x, tape.leaf(w)), tape.leaf(b));
}

}  // namespace

template <typename Real>
TransformerEncoder<Real>::TransformerEncoder(EncoderConfig config, Vocab vocab, std::string prefix,
                                             std::uint64_t seed)
    : config_(std::move(config)), vocab_(std::move(vocab)), prefix_(std::move(prefix)) {
  if (config_.vocab_size == 0) config_.vocab_size = vocab_.size();
  if (config_.vocab_size != vocab_.size()) {
    throw std::invalid_argument("encoder: config vocab_size " + std::to_string(config_.vocab_size) +
                                " does not match vocabulary size " + std::to_string(vocab_.size()));
  }
  config_.validate();
  const std::size_t d = config_.model_dim, ff = config_.feedforward_dim;
  const std::string& p = prefix_;
  token_embedding_ = make_param<Real>(p + ".embed.tokens", {config_.vocab_size, d});
  position_embedding_ = make_param<Real>(p + ".embed.positions", {config_.max_sequence_length, d});
  layers_.reserve(config_.num_layers);
  for (std::size_t i = 0; i < config_.num_layers; ++i) {
    const std::string lp = p + ".layers." + std::to_string(i) + ".";
    Layer l{
        make_param<Real>(lp + "ln1.gamma", {1, d}), make_param<Real>(lp + "ln1.beta", {1, d}),
        make_param<Real>(lp + "attn.wq", {d, d}),   make_param<Real>(lp + "attn.bq", {1, d}),
        make_param<Real>(lp + "attn.wk", {d, d}),
        make_param<Real>(lp + "attn.wv", {d, d}),   make_param<Real>(lp + "attn.bv", {1, d}),
        make_param<Real>(lp + "attn.wo", {d, d}),   make_param<Real>(lp + "attn.bo", {1, d}),
        make_param<Real>(lp + "ln2.gamma", {1, d}), make_param<Real>(lp + "ln2.beta", {1, d}),
        make_param<Real>(lp + "ff.w1", {d, ff}),    make_param<Real>(lp + "ff.b1", {1, ff}),
        make_param<Real>(lp + "ff.w2", {ff, d}),    make_param<Real>(lp + "ff.b2", {1, d}),
    };
    layers_.push_back(std::move(l));
  }
  final_gamma_ = make_param<Real>(p + ".final_ln.gamma", {1, d});
  final_beta_ = make_param<Real>(p + ".final_ln.beta", {1, d});

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kInitStd);
  for (Parameter<Real>* param : parameters()) {
    const std::string& name = param->name;
    if (ends_with(name, ".gamma")) {
      param->value.fill(Real(1));
    } else if (name.find(".embed.") != std::string::npos || ends_with(name, ".wq") ||
               ends_with(name, ".wk") || ends_with(name, ".wv") || ends_with(name, ".wo") ||
               ends_with(name, ".w1") || ends_with(name, ".w2")) {
      for (Real& v : param->value.storage()) v = static_cast<Real>(normal(rng));
    }
  }
}

template <typename Real>
TransformerEncoder<Real>::TransformerEncoder(const TransformerEncoder& other)
    : config_(other.config_),
      vocab_(other.vocab_),
      prefix_(other.prefix_),
      token_embedding_(other.token_embedding_),
      position_embedding_(other.position_embedding_),
      layers_(other.layers_),
      final_gamma_(other.final_gamma_),
      final_beta_(other.final_beta_),
      truncations_(other.truncations_.load()) {}

template <typename Real>
TransformerEncoder<Real>::TransformerEncoder(const TransformerEncoder& other, std::string prefix)
    : TransformerEncoder(other) {
  for (Parameter<Real>* param : parameters()) {
    param->name = prefix + param->name.substr(prefix_.size());
  }
  prefix_ = std::move(prefix);
}

template <typename Real>
TransformerEncoder<Real>& TransformerEncoder<Real>::operator=(const TransformerEncoder& other) {
  if (this == &other) return *this;
  config_ = other.config_;
  vocab_ = other.vocab_;
  prefix_ = other.prefix_;
  token_embedding_ = other.token_embedding_;
  position_embedding_ = other.position_embedding_;
  layers_ = other.layers_;
  final_gamma_ = other.final_gamma_;
  final_beta_ = other.final_beta_;
  truncations_ = other.truncations_.load();
  return *this;
}

template <typename Real>
std::vector<Parameter<Real>*> TransformerEncoder<Real>::parameters() {
  std::vector<Parameter<Real>*> out{&token_embedding_, &position_embedding_};
  for (Layer& l : layers_) {
    for (Parameter<Real>* p : {&l.ln1_gamma, &l.ln1_beta, &l.wq, &l.bq, &l.wk, &l.wv, &l.bv,
                               &l.wo, &l.bo, &l.ln2_gamma, &l.ln2_beta, &l.w1, &l.b1, &l.w2, &l.b2}) {
      out.push_back(p);
    }
  }
  out.push_back(&final_gamma_);
  out.push_back(&final_beta_);
  return out;
}

template <typename Real>
std::vector<const Parameter<Real>*> TransformerEncoder<Real>::parameters() const {
  auto mutable_params = const_cast<TransformerEncoder*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

template <typename Real>
Parameter<Real>& TransformerEncoder<Real>::parameter(std::string_view local_name) {
  const std::string full = prefix_ + "." + std::string(local_name);
  for (Parameter<Real>* p : parameters()) {
    if (p->name == full) return *p;
  }
  throw std::out_of_range("encoder: no parameter named " + full);
}

template <typename Real>
std::size_t TransformerEncoder<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter<Real>* p : parameters()) n += p->size();
  return n;
}

template <typename Real>
Var<Real> TransformerEncoder<Real>::attention(Tape<Real>& tape, Layer& layer, Var<Real> h,
                                              const ForwardOptions& options) {
  const std::size_t heads = config_.num_heads, dh = config_.head_dim();
  const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(dh));
  Var<Real> q = linear(tape, h, layer.wq, layer.bq);
  Var<Real> k = num::matmul(h, tape.leaf(layer.wk));
  Var<Real> v = linear(tape, h, layer.wv, layer.bv);
  std::vector<Var<Real>> outputs;
  outputs.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    Var<Real> qh = num::slice_cols(q, i * dh, dh);
    Var<Real> kh = num::slice_cols(k, i * dh, dh);
    Var<Real> vh = num::slice_cols(v, i * dh, dh);
    Var<Real> weights = num::softmax(num::scale(num::matmul(qh, num::transpose(kh)), inv_sqrt));
    if (options.attention) options.attention->push_back(num::tensor_cast<double>(weights.value()));
    outputs.push_back(num::matmul(weights, vh));
  }
  Var<Real> merged = heads == 1 ? outputs[0] : num::concat(outputs, 1);
  return linear(tape, merged, layer.wo, layer.bo);
}

template <typename Real>
Var<Real> TransformerEncoder<Real>::encode(Tape<Real>& tape, std::span<const int> ids,
                                           const ForwardOptions& options) {
  if (ids.empty()) throw std::invalid_argument("encode: empty token sequence");
  if (options.training && config_.dropout_p > 0.0 && options.rng == nullptr) {
    throw std::invalid_argument("encode: training mode needs a random generator");
  }
  if (ids.size() > config_.max_sequence_length) {
    if (truncations_.fetch_add(1) == 0) {
      std::cerr << "warning: " << prefix_ << " encoder truncated a sequence of " << ids.size()
                << " tokens to " << config_.max_sequence_length << "\n";
    }
    ids = ids.first(config_.max_sequence_length);
  }
  std::vector<int> positions(ids.size());
  std::iota(positions.begin(), positions.end(), 0);

  const double p = config_.dropout_p;
  std::mt19937_64 unused;
  std::mt19937_64& rng = options.rng ? *options.rng : unused;
  auto drop = [&](Var<Real> x) { return num::dropout(x, p, rng, options.training); };

  Var<Real> x = num::add(num::embedding_lookup(tape.leaf(token_embedding_), ids),
                         num::embedding_lookup(tape.leaf(position_embedding_),
                                               std::span<const int>(positions)));
  x = drop(x);
  for (Layer& l : layers_) {
    Var<Real> h = num::layer_norm(x, tape.leaf(l.ln1_gamma), tape.leaf(l.ln1_beta));
    x = num::add(x, drop(attention(tape, l, h, options)));
    h = num::layer_norm(x, tape.leaf(l.ln2_gamma), tape.leaf(l.ln2_beta));
    Var<Real> f = linear(tape, num::relu(linear(tape, h, l.w1, l.b1)), l.w2, l.b2);
    x = num::add(x, drop(f));
  }
  return num::layer_norm(x, tape.leaf(final_gamma_), tape.leaf(final_beta_));
}

template <typename Real>
Tensor<Real> TransformerEncoder<Real>::encode(std::span<const int> ids) {
  Tape<Real> tape;
  return encode(tape, ids).value();
}

template <typename Real>
void TransformerEncoder<Real>::freeze_bottom_layers(std::size_t n, bool embeddings) {
  if (n > config_.num_layers) {
    throw std::invalid_argument("freeze_bottom_layers: n = " + std::to_string(n) + " exceeds " +
                                std::to_string(config_.num_layers) + " layers");
  }
  for (Parameter<Real>* param : parameters()) param->frozen = false;
  token_embedding_.frozen = n > 0 && embeddings;
  position_embedding_.frozen = n > 0 && embeddings;
  for (std::size_t i = 0; i < n; ++i) {
    Layer& l = layers_[i];
    for (Parameter<Real>* p : {&l.ln1_gamma, &l.ln1_beta, &l.wq, &l.bq, &l.wk, &l.wv, &l.bv,
                               &l.wo, &l.bo, &l.ln2_gamma, &l.ln2_beta, &l.w1, &l.b1, &l.w2, &l.b2}) {
      p->frozen = true;
    }
  }
}

template <typename Real>
Var<Real> ConceptEncoder<Real>::encode_concept(Tape<Real>& tape, std::string_view name,
                                               const ForwardOptions& options) {
  const std::vector<int> ids = this->vocab().encode(name);
  if (ids.empty()) throw std::invalid_argument("encode_concept: empty concept name");
  return num::mean_pool(this->encode(tape, ids, options));
}

template <typename Real>
Tensor<Real> ConceptEncoder<Real>::encode_concept(std::string_view name) {
  Tape<Real> tape;
  Tensor<Real> pooled = encode_concept(tape, name).value();
  return Tensor<Real>({pooled.size()}, pooled.storage());
}

template <typename Real>
Var<Real> score_concepts(Var<Real> token_vecs, Var<Real> concept_vecs, Real tau) {
  if (token_vecs.cols() != concept_vecs.cols()) {
    throw num::ShapeError("score_concepts", token_vecs.shape(), concept_vecs.shape());
  }
  return num::temp_sigmoid(num::matmul(token_vecs, num::transpose(concept_vecs)), tau);
}

template <typename Real>
Tensor<Real> score_concepts(const Tensor<Real>& token_vecs, const Tensor<Real>& concept_vecs, Real tau) {
  Tape<Real> tape;
  return score_concepts(tape.constant(token_vecs), tape.constant(concept_vecs), tau).value();
}

#define NUNER_INSTANTIATE_ENCODER(Real)                                                  \
  template class TransformerEncoder<Real>;                                              \
  template class ConceptEncoder<Real>;                                                  \
  template Var<Real> score_concepts(Var<Real>, Var<Real>, Real);                        \
  template Tensor<Real> score_concepts(const Tensor<Real>&, const Tensor<Real>&, Real);

NUNER_INSTANTIATE_ENCODER(float)
NUNER_INSTANTIATE_ENCODER(double)

}  // namespace nuner::enc
