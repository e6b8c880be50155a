#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "nuner/numerics/tape.hpp"

// Differentiable building blocks. Every op records onto the tape of its
// inputs. Rank-2 tensors are [rows x cols]; scalars have shape [1].

namespace nuner::num {

/// Uniform double in [0, 1) from the top 53 bits of the generator.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename Real>
Var<Real> matmul(Var<Real> a, Var<Real> b);

template <typename Real>
Var<Real> transpose(Var<Real> a);

/// Elementwise sum. `b` may also be a single row broadcast over the rows of a.
template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b);

template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b);

template <typename Real>
Var<Real> scale(Var<Real> a, Real factor);

template <typename Real>
Var<Real> sum(Var<Real> a);

template <typename Real>
Var<Real> mean(Var<Real> a);

/// Gathers rows of `table` ([vocab x dim]) for each id.
template <typename Real>
Var<Real> embedding_lookup(Var<Real> table, std::span<const int> ids);

/// Normalizes each row to zero mean and unit variance, then applies
/// gamma * x + beta.
template <typename Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gamma, Var<Real> beta,
                     Real eps = Real(1e-5));

template <typename Real>
Var<Real> relu(Var<Real> x);

/// Row-wise softmax.
template <typename Real>
Var<Real> softmax(Var<Real> x);

/// Inverted dropout: kept activations are divided by (1 - p). Identity when
/// not training or p == 0.
template <typename Real>
Var<Real> dropout(Var<Real> x, double p, std::mt19937_64& rng, bool training);

/// Concatenation of rank-2 tensors along rows (axis 0) or columns (axis 1).
template <typename Real>
Var<Real> concat(const std::vector<Var<Real>>& parts, int axis);

/// Mean over rows; [rows x d] -> [1 x d].
template <typename Real>
Var<Real> mean_pool(Var<Real> x);

template <typename Real>
Var<Real> slice_cols(Var<Real> x, std::size_t start, std::size_t count);

/// Elementwise 1 / (1 + exp(-z / tau)).
template <typename Real>
Var<Real> temp_sigmoid(Var<Real> logits, Real tau);

/// Mean binary cross-entropy over the cells of the rows selected by
/// `row_mask` (all rows when empty). Probabilities are clamped to
/// [kBceEpsilon, 1 - kBceEpsilon].
template <typename Real>
Var<Real> bce_loss(Var<Real> probs, const Tensor<Real>& targets,
                   std::span<const std::uint8_t> row_mask = {});

/// Mean softmax cross-entropy over rows whose label is non-negative.
template <typename Real>
Var<Real> softmax_cross_entropy(Var<Real> logits, std::span<const int> labels);

inline constexpr double kBceEpsilon = 1e-7;

/// Forward-only helpers shared by ops and tests.
template <typename Real>
Real sigmoid_value(Real z, Real tau) {
  return Real(1) / (Real(1) + std::exp(-z / tau));
}

}  // namespace nuner::num
