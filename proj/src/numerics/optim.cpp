#include "nuner/numerics/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace nuner::num {

template <typename Real>
void adamw_step(std::span<Parameter<Real>* const> params, double lr,
                const AdamWConfig& config) {
  for (Parameter<Real>* p : params) {
    if (p->frozen) {
      p->zero_grad();
      continue;
    }
    p->step += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(p->step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(p->step));
    Real* theta = p->value.data();
    Real* g = p->grad.data();
    Real* m = p->first_moment.data();
    Real* v = p->second_moment.data();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double gi = g[i];
      const double mi = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
      const double vi = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
      m[i] = static_cast<Real>(mi);
      v[i] = static_cast<Real>(vi);
      const double m_hat = mi / bc1;
      const double v_hat = vi / bc2;
      const double update =
          m_hat / (std::sqrt(v_hat) + config.eps) + config.weight_decay * theta[i];
      theta[i] = static_cast<Real>(theta[i] - lr * update);
      g[i] = Real(0);
    }
  }
}

double lr_schedule(std::size_t step, std::size_t total_steps,
                   double warmup_fraction, double lr_max) {
  if (step > total_steps) {
    throw std::invalid_argument("lr_schedule: step " + std::to_string(step) +
                                " exceeds total_steps " +
                                std::to_string(total_steps));
  }
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) {
    throw std::invalid_argument("lr_schedule: warmup_fraction must be in (0, 1)");
  }
  const double warmup = warmup_fraction * static_cast<double>(total_steps);
  const double s = static_cast<double>(step);
  if (s <= warmup) return warmup > 0.0 ? lr_max * s / warmup : lr_max;
  return lr_max * (static_cast<double>(total_steps) - s) /
         (static_cast<double>(total_steps) - warmup);
}

template void adamw_step(std::span<Parameter<float>* const>, double,
                         const AdamWConfig&);
template void adamw_step(std::span<Parameter<double>* const>, double,
                         const AdamWConfig&);

}  // namespace nuner::num
