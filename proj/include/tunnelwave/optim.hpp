#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tunnelwave/tensor.hpp"

namespace tw::ad {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are tensors so they can be
/// written to checkpoints next to the parameters.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);

  void step();
  void zero_grad();

  const AdamOptions& options() const noexcept { return options_; }
  std::uint64_t steps_taken() const noexcept { return t_; }
  void set_steps_taken(std::uint64_t t) noexcept { t_ = t; }

  const std::vector<Tensor>& params() const noexcept { return params_; }
  std::vector<Tensor>& first_moments() noexcept { return m_; }
  std::vector<Tensor>& second_moments() noexcept { return v_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

 private:
  std::vector<Tensor> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamOptions options_;
  std::uint64_t t_ = 0;
};

}  // namespace tw::ad
