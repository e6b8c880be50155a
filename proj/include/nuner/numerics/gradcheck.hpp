#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nuner/numerics/tape.hpp"

namespace nuner::num {

struct GradCheckOptions {
  double tolerance = 1e-6;
  double step = 1e-5;
  /// Upper bound on checked coordinates. Larger fragments are checked on a
  /// seeded subset that always includes every parameter tensor.
  std::size_t max_coordinates = 10000;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::size_t total_coordinates = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Builds a scalar loss on a fresh tape. Must be a deterministic function of
/// the parameter values.
using LossBuilder = std::function<Var<double>(Tape<double>&)>;

/// Compares reverse-mode gradients with central finite differences. The
/// relative error of a coordinate is |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport grad_check(const LossBuilder& build,
                           std::span<Parameter<double>* const> params,
                           const GradCheckOptions& options = {});

struct OpCheck {
  std::string op;
  GradCheckReport report;
};

/// Checks every differentiable op on small random 64-bit inputs, one report
/// per op. Relu inputs are kept away from the kink.
std::vector<OpCheck> op_gradient_suite(double tolerance = 1e-6, std::uint64_t seed = 0);

}  // namespace nuner::num
