#pragma once

// Inception-enhanced U-Net generator and spectrally normalized PatchGAN
// discriminator.
//
// Generator (depth 3, default widths):
//   stem 3x3 conv 2->64 | Inception 64 | down | Inception 128 | down | Inception 256 | down
//   bottleneck Inception 256, 256
//   up x2 + skip | Inception 256 | up x2 + skip | Inception 128 | up x2 + skip | Inception 64
//   1x1 conv -> 1, ReLU
// "down" is a 4x4 stride-2 conv; "up" is nearest x2 upsampling whose first
// convolution is the following Inception block. Inputs whose sides are not
// multiples of 2^depth are reflect-padded and the output is cropped back.

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tunnelwave/tensor.hpp"

namespace tw::gan {

using ad::Mode;
using ad::Tensor;

/// min(5, floor(log2(min(h, w))) - 2); rejects min(h, w) < 8.
std::size_t adaptive_depth(std::size_t h, std::size_t w);

struct GeneratorConfig {
  std::size_t input_channels = 2;
  std::vector<std::size_t> encoder_channels{64, 128, 256};
  std::vector<std::size_t> bottleneck_channels{256, 256};
  std::vector<std::size_t> decoder_channels{256, 128, 64};
  std::size_t output_channels = 1;
  std::size_t depth = 3;
  std::size_t attention_reduction = 4;

  void validate() const;
  bool operator==(const GeneratorConfig&) const = default;
};

/// Level count from adaptive_depth, except at the 101 x 1001 field grid where
/// the three-level layout is used. Channels double from `base_channels` and
/// saturate at `max_channels`; the bottleneck runs at `max_channels`.
GeneratorConfig generator_config_for(std::size_t height, std::size_t width, std::size_t base_channels = 64,
                                     std::size_t max_channels = 256);

struct DiscriminatorConfig {
  std::size_t input_channels = 2;
  std::vector<std::size_t> channels{32, 64, 128};
  std::size_t output_channels = 1;
  double leaky_slope = 0.2;
  int power_iterations = 1;     // per training forward
  int warmup_iterations = 20;   // at construction, so the first forward starts near the fixpoint

  void validate() const;
  bool operator==(const DiscriminatorConfig&) const = default;
};

using NamedTensor = std::pair<std::string, Tensor>;

// ---- building blocks -------------------------------------------------------------

struct Conv {
  Tensor weight;
  Tensor bias;  // undefined when the conv feeds a normalization layer
  ad::Conv2dOptions options;

  Tensor operator()(const Tensor& x) const { return ad::conv2d(x, weight, bias, options); }
};

struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  ad::BatchNormStats stats;

  Tensor operator()(const Tensor& x, Mode mode) { return ad::batch_norm(x, gamma, beta, stats, mode); }
};

/// a = sigmoid(W2 relu(W1 GAP(f))); output f * a per channel.
struct ChannelAttention {
  Tensor w1;  // (C/r, C)
  Tensor w2;  // (C, C/r)
  std::size_t channels = 0;
  std::size_t reduction = 4;

  Tensor weights(const Tensor& f) const;
  Tensor operator()(const Tensor& f) const;
};

/// Four same-padded branches (1x1, 1x7, 7x1, 3x3), each conv -> BN -> ReLU
/// producing Cout/4 channels, concatenated and gated by channel attention.
struct InceptionBlock {
  static constexpr std::size_t kBranches = 4;
  std::array<Conv, kBranches> convs;
  std::array<BatchNorm, kBranches> norms;
  ChannelAttention attention;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;

  Tensor operator()(const Tensor& x, Mode mode);
};

/// Deterministic parameter factory; records every tensor under a dotted name.
class ParameterFactory {
 public:
  explicit ParameterFactory(std::uint64_t seed) : rng_(seed) {}

  Conv conv(const std::string& name, std::size_t in, std::size_t out, std::size_t kh, std::size_t kw,
            ad::Conv2dOptions options, bool with_bias);
  BatchNorm batch_norm(const std::string& name, std::size_t channels);
  ChannelAttention attention(const std::string& name, std::size_t channels, std::size_t reduction);
  InceptionBlock inception(const std::string& name, std::size_t in, std::size_t out, std::size_t reduction);
  Tensor buffer(const std::string& name, ad::Shape shape, double fill);
  std::mt19937_64& rng() { return rng_; }

  std::vector<NamedTensor> take_parameters() { return std::move(params_); }
  std::vector<NamedTensor> take_buffers() { return std::move(buffers_); }

 private:
  Tensor kaiming_uniform(const std::string& name, ad::Shape shape, std::size_t fan_in);

  std::mt19937_64 rng_;
  std::vector<NamedTensor> params_;
  std::vector<NamedTensor> buffers_;
};

struct LayerInfo {
  std::string name;
  std::size_t out_channels;
};

class Generator {
 public:
  Generator(GeneratorConfig config, std::uint64_t seed);

  /// (N, 2, H, W) -> (N, 1, H, W), non-negative.
  Tensor forward(const Tensor& input, Mode mode);

  const GeneratorConfig& config() const noexcept { return config_; }
  const std::vector<NamedTensor>& parameters() const noexcept { return params_; }
  const std::vector<NamedTensor>& buffers() const noexcept { return buffers_; }
  std::vector<Tensor> parameter_tensors() const;
  std::size_t parameter_count() const;

  /// Layer-by-layer channel progression, encoder to output.
  std::vector<LayerInfo> layers() const;

 private:
  GeneratorConfig config_;
  Conv stem_conv_;
  BatchNorm stem_norm_;
  std::vector<InceptionBlock> encoder_;
  std::vector<Conv> down_convs_;
  std::vector<BatchNorm> down_norms_;
  std::vector<InceptionBlock> bottleneck_;
  std::vector<InceptionBlock> decoder_;
  Conv head_;
  std::vector<NamedTensor> params_;
  std::vector<NamedTensor> buffers_;
};

/// W / sigma_hat with sigma_hat = u^T W v from `n_iters` warm-started power
/// iterations over the (O x C*kh*kw) reshape. `u` is updated in place. With
/// n_iters == 0 the stored u is used as is. sigma_hat is floored at 1e-12.
/// Gradients treat u and v as constants.
Tensor spectral_normalize(const Tensor& weight, std::vector<double>& u, int n_iters, double* sigma_out = nullptr);

/// Verification-mode estimate of the largest singular value of a row-major
/// (rows x cols) matrix by power iteration from a fixed start vector.
double power_iteration_sigma(std::span<const double> matrix, std::size_t rows, std::size_t cols, int n_iters);

class Discriminator {
 public:
  Discriminator(DiscriminatorConfig config, std::uint64_t seed);

  /// (N,1,H,W) condition and (N,1,H,W) candidate -> (N,1,H/8,W/8) raw patch scores.
  Tensor forward(const Tensor& condition, const Tensor& candidate, Mode mode);

  const DiscriminatorConfig& config() const noexcept { return config_; }
  const std::vector<NamedTensor>& parameters() const noexcept { return params_; }
  std::vector<Tensor> parameter_tensors() const;
  std::size_t parameter_count() const;
  std::vector<LayerInfo> layers() const;

  std::size_t n_convs() const noexcept { return convs_.size(); }
  const Conv& conv(std::size_t i) const { return convs_.at(i); }
  std::vector<double>& sn_vector(std::size_t i) { return sn_u_.at(i); }
  const std::vector<double>& sn_vector(std::size_t i) const { return sn_u_.at(i); }

  /// Normalized weight values used by the most recent forward pass.
  const std::vector<double>& last_normalized_weight(std::size_t i) const { return last_normalized_.at(i); }

 private:
  DiscriminatorConfig config_;
  std::vector<Conv> convs_;
  std::vector<std::vector<double>> sn_u_;
  std::vector<std::vector<double>> last_normalized_;
  std::vector<NamedTensor> params_;
};

}  // namespace tw::gan
