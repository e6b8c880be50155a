#include "nuner/encoder/gradcheck.hpp"

#include <random>
#include <string>
#include <vector>

#include "nuner/encoder/model.hpp"

namespace nuner::enc {

num::GradCheckReport block_gradient_check(EncoderConfig config, const num::GradCheckOptions& options,
                                          std::size_t sequence_length) {
  config.num_layers = 1;
  config.dropout_p = 0.0;
  config.precision = "float64";
  config.freeze_bottom = 0;
  config.max_sequence_length = std::max(config.max_sequence_length, sequence_length);
  std::vector<std::string> tokens{Vocab::kUnkToken, Vocab::kMaskToken};
  for (int i = 0; i < 14; ++i) tokens.push_back("w" + std::to_string(i));
  config.vocab_size = tokens.size();
  TextEncoder<double> encoder(config, Vocab(tokens), options.seed);

  std::mt19937_64 rng(options.seed ^ 0x626C6F636BULL);
  std::normal_distribution<double> noise(0.0, 0.1);
  for (auto* p : encoder.parameters())
    for (double& v : p->value.storage()) v += noise(rng);
  std::vector<int> ids(sequence_length);
  for (int& id : ids) id = 2 + static_cast<int>(rng() % (tokens.size() - 2));
  num::Tensor<double> weights({sequence_length, config.model_dim});
  for (double& v : weights.storage()) v = noise(rng);

  auto build = [&](num::Tape<double>& tape) {
    return num::sum(num::mul(encoder.encode(tape, ids), tape.constant(weights)));
  };
  return num::grad_check(build, encoder.parameters(), options);
}

}  // namespace nuner::enc
