#pragma once

#include <cstddef>
#include <span>

#include "nuner/numerics/tape.hpp"

namespace nuner::num {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.01;
};

/// Decoupled-weight-decay Adam with bias correction:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)
/// Frozen parameters are left bit-identical. All gradients are zeroed
/// afterwards.
template <typename Real>
void adamw_step(std::span<Parameter<Real>* const> params, double lr,
                const AdamWConfig& config = {});

/// Linear warm-up from 0 to lr_max over the first warmup_fraction of
/// total_steps, then linear decay to 0 at total_steps.
double lr_schedule(std::size_t step, std::size_t total_steps,
                   double warmup_fraction, double lr_max);

}  // namespace nuner::num
