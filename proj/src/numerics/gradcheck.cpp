#include "nuner/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace nuner::num {

namespace {

double evaluate(const LossBuilder& build) {
  Tape<double> tape;
  return build(tape).value()[0];
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& build,
                           std::span<Parameter<double>* const> params,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  report.tolerance = options.tolerance;

  // Frozen flags would hide analytic gradients; check everything.
  std::vector<bool> was_frozen;
  for (Parameter<double>* p : params) {
    was_frozen.push_back(p->frozen);
    p->frozen = false;
    p->zero_grad();
    report.total_coordinates += p->size();
  }
  {
    Tape<double> tape;
    tape.backward(build(tape));
  }

  // Per-tensor quota so that small tensors are always covered completely.
  std::vector<std::vector<std::size_t>> chosen(params.size());
  std::mt19937_64 rng(options.seed);
  if (report.total_coordinates <= options.max_coordinates) {
    for (std::size_t k = 0; k < params.size(); ++k) {
      chosen[k].resize(params[k]->size());
      std::iota(chosen[k].begin(), chosen[k].end(), std::size_t{0});
    }
  } else {
    const std::size_t quota =
        std::max<std::size_t>(1, options.max_coordinates / std::max<std::size_t>(1, params.size()));
    for (std::size_t k = 0; k < params.size(); ++k) {
      std::vector<std::size_t> all(params[k]->size());
      std::iota(all.begin(), all.end(), std::size_t{0});
      if (all.size() > quota) {
        std::shuffle(all.begin(), all.end(), rng);
        all.resize(quota);
        std::sort(all.begin(), all.end());
      }
      chosen[k] = std::move(all);
    }
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<double>& p = *params[k];
    for (std::size_t idx : chosen[k]) {
      const double original = p.value[idx];
      p.value[idx] = original + options.step;
      const double plus = evaluate(build);
      p.value[idx] = original - options.step;
      const double minus = evaluate(build);
      p.value[idx] = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double analytic = p.grad[idx];
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.coordinates_checked;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_parameter = p.name;
        report.worst_index = idx;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    params[k]->zero_grad();
    params[k]->frozen = was_frozen[k];
  }
  report.passed = report.max_relative_error < options.tolerance;
  return report;
}

}  // namespace nuner::num
