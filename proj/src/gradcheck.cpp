#include "tunnelwave/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace tw::ad {

GradCheckResult finite_difference_check(const std::function<Tensor()>& fn, std::vector<Tensor> inputs,
                                        const GradCheckOptions& options) {
  for (auto& in : inputs) in.zero_grad();
  backward(fn());

  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  for (auto& in : inputs) {
    const std::vector<double> analytic(in.grad().begin(), in.grad().end());
    std::vector<std::size_t> coords(in.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_input);
    }
    auto values = in.mutable_values();
    for (std::size_t i : coords) {
      const double saved = values[i];
      double plus = 0.0;
      double minus = 0.0;
      {
        NoGradGuard guard;
        values[i] = saved + options.step;
        plus = fn().item();
        values[i] = saved - options.step;
        minus = fn().item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), options.scale_floor});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(numeric - analytic[i]) / denom);
      ++result.coords_checked;
    }
  }
  result.passed = result.max_rel_error <= options.tolerance;
  return result;
}

Tensor random_projection(const Tensor& output, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> weights(output.numel());
  for (double& w : weights) w = dist(rng);
  return sum(mul(output, Tensor::from(output.shape(), std::move(weights))));
}

}  // namespace tw::ad
