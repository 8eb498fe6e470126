#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "tunnelwave/tensor.hpp"

namespace tw::ad {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  std::size_t max_coords_per_input = 64;  // sampled when an input is larger
  std::uint64_t seed = 0;
  /// Denominator floor for the relative error, so gradients that are zero on
  /// both sides do not divide by zero.
  double scale_floor = 1e-3;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  bool passed = false;
};

/// Compares reverse-mode gradients of `fn` against central differences.
/// `fn` must rebuild its graph from the current values of `inputs` on every
/// call and return a single-element tensor.
GradCheckResult finite_difference_check(const std::function<Tensor()>& fn, std::vector<Tensor> inputs,
                                        const GradCheckOptions& options = {});

/// Contracts an arbitrary-shape output with fixed pseudo-random weights so a
/// whole Jacobian can be probed through one scalar.
Tensor random_projection(const Tensor& output, std::uint64_t seed);

}  // namespace tw::ad
