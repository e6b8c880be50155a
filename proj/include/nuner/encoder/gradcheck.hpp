#pragma once

#include <cstdint>

#include "nuner/encoder/config.hpp"
#include "nuner/numerics/gradcheck.hpp"

namespace nuner::enc {

/// Gradient check of one transformer block at 64-bit: embeddings, a single
/// layer with `config`'s width, heads and feed-forward size, and the final
/// norm, with dropout off. Parameters are perturbed away from their init so
/// gains and biases carry non-trivial gradients. Coordinates are sampled per
/// options.max_coordinates.
num::GradCheckReport block_gradient_check(EncoderConfig config, const num::GradCheckOptions& options,
                                          std::size_t sequence_length = 8);

}  // namespace nuner::enc
