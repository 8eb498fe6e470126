#pragma once

// Training objectives on (N, 1, H, W) image tensors. Rows are height, so the
// first and last rows are the tunnel walls.

#include <string>

#include "tunnelwave/tensor.hpp"

namespace tw::loss {

using ad::Tensor;

struct LossWeights {
  double adv = 1.0;
  double l1 = 100.0;
  double mse = 10.0;
  double ssim = 5.0;
  double physics = 10.0;  // gamma

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// mean(relu(-e)).
Tensor loss_nonneg(const Tensor& e_hat);

/// Mean over the first and last row of every plane.
Tensor loss_boundary(const Tensor& e_hat);

/// mean |forward difference along W| + mean |forward difference along H|.
/// An axis of length 1 contributes 0.
Tensor loss_smooth(const Tensor& e_hat);

/// nonneg + boundary + smooth, unweighted.
Tensor loss_physics(const Tensor& e_hat);

Tensor loss_l1(const Tensor& e_hat, const Tensor& e);
Tensor loss_mse(const Tensor& e_hat, const Tensor& e);

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

/// Mean local SSIM over valid window positions. Planes smaller than the window
/// in either direction use one global-statistics SSIM per plane instead.
Tensor ssim(const Tensor& x, const Tensor& y, const SsimOptions& options = {});
Tensor loss_ssim(const Tensor& x, const Tensor& y, const SsimOptions& options = {});

/// Least squares: mean (D(fake) - 1)^2.
Tensor adversarial_g(const Tensor& d_fake);
/// 0.5 mean (D(real) - 1)^2 + 0.5 mean D(fake)^2.
Tensor adversarial_d(const Tensor& d_real, const Tensor& d_fake);

/// The unweighted generator terms; `ssim` holds 1 - SSIM.
struct LossTerms {
  Tensor adv;
  Tensor l1;
  Tensor mse;
  Tensor ssim;
  Tensor nonneg;
  Tensor boundary;
  Tensor smooth;
};

LossTerms generator_terms(const Tensor& fake, const Tensor& target, const Tensor& d_fake);

struct LossReport {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double adv = 0.0;
  double l1 = 0.0;
  double mse = 0.0;
  double ssim = 0.0;
  double nonneg = 0.0;
  double boundary = 0.0;
  double smooth = 0.0;
  double total = 0.0;
  double disc = 0.0;  // discriminator loss of the same step; not part of the CSV

  double physics() const { return nonneg + boundary + smooth; }
  /// Weighted sum recomputed from the stored terms.
  double weighted_sum(const LossWeights& w) const;
  bool operator==(const LossReport&) const = default;
};

struct WeightedLoss {
  Tensor total;
  LossReport report;
};

WeightedLoss total_generator_loss(const LossTerms& terms, const LossWeights& weights);

std::string loss_csv_header();
std::string loss_csv_row(const LossReport& report);

}  // namespace tw::loss
