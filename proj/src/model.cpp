#include "tunnelwave/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "tunnelwave/errors.hpp"

namespace tw::gan {

namespace {

std::size_t round_up(std::size_t v, std::size_t multiple) { return (v + multiple - 1) / multiple * multiple; }

std::size_t sum_numel(const std::vector<NamedTensor>& ts) {
  std::size_t n = 0;
  for (const auto& [name, t] : ts) n += t.numel();
  return n;
}

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& ts) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : ts) out.push_back(t);
  return out;
}

void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  const double inv = 1.0 / std::max(n, 1e-12);
  for (double& x : v) x *= inv;
}

// v = normalize(W^T u); W is rows x cols row-major.
void right_vector(std::span<const double> w, std::size_t rows, std::size_t cols, const std::vector<double>& u,
                  std::vector<double>& v) {
  v.assign(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double ur = u[r];
    const double* row = w.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) v[c] += row[c] * ur;
  }
  normalize(v);
}

// u = W v, returned unnormalized.
void left_product(std::span<const double> w, std::size_t rows, std::size_t cols, const std::vector<double>& v,
                  std::vector<double>& u) {
  u.assign(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = w.data() + r * cols;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += row[c] * v[c];
    u[r] = s;
  }
}

}  // namespace

std::size_t adaptive_depth(std::size_t h, std::size_t w) {
  const std::size_t m = std::min(h, w);
  if (m < 8) throw ConfigError("image side " + std::to_string(m) + " is too small for a U-Net level (need >= 8)");
  const std::size_t log2m = static_cast<std::size_t>(std::bit_width(m)) - 1;
  return std::min<std::size_t>(5, log2m - 2);
}

void GeneratorConfig::validate() const {
  if (depth < 1) throw ConfigError("generator depth must be >= 1");
  if (encoder_channels.size() != depth || decoder_channels.size() != depth) {
    throw ConfigError("encoder/decoder channel lists must have one entry per level");
  }
  if (bottleneck_channels.empty()) throw ConfigError("bottleneck needs at least one block");
  if (input_channels == 0 || output_channels == 0) throw ConfigError("channel counts must be positive");
  auto check = [&](std::size_t c) {
    if (c % InceptionBlock::kBranches != 0) {
      throw ConfigError("Inception width " + std::to_string(c) + " is not divisible by 4");
    }
    if (attention_reduction == 0 || c % attention_reduction != 0) {
      throw ConfigError("attention reduction " + std::to_string(attention_reduction) + " does not divide " +
                        std::to_string(c));
    }
  };
  for (auto c : encoder_channels) check(c);
  for (auto c : bottleneck_channels) check(c);
  for (auto c : decoder_channels) check(c);
}

GeneratorConfig generator_config_for(std::size_t height, std::size_t width, std::size_t base_channels,
                                     std::size_t max_channels) {
  GeneratorConfig cfg;
  cfg.depth = (height == 101 && width == 1001) ? 3 : adaptive_depth(height, width);
  cfg.encoder_channels.clear();
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    cfg.encoder_channels.push_back(std::min(base_channels << i, max_channels));
  }
  cfg.bottleneck_channels = {max_channels, max_channels};
  cfg.decoder_channels.assign(cfg.encoder_channels.rbegin(), cfg.encoder_channels.rend());
  cfg.validate();
  return cfg;
}

void DiscriminatorConfig::validate() const {
  if (channels.empty()) throw ConfigError("discriminator needs at least one stride-2 layer");
  if (input_channels == 0 || output_channels == 0) throw ConfigError("channel counts must be positive");
  if (power_iterations < 0 || warmup_iterations < 0) throw ConfigError("power iteration counts must be >= 0");
}

// ---- blocks ------------------------------------------------------------------------

Tensor ChannelAttention::weights(const Tensor& f) const {
  if (f.rank() != 4 || f.dim(1) != channels) {
    throw std::invalid_argument("channel attention configured for " + std::to_string(channels) +
                                " channels, got input " + ad::shape_string(f.shape()));
  }
  return ad::sigmoid(ad::dense(ad::relu(ad::dense(ad::global_avg_pool(f), w1, {})), w2, {}));
}

Tensor ChannelAttention::operator()(const Tensor& f) const { return ad::scale_channels(f, weights(f)); }

Tensor InceptionBlock::operator()(const Tensor& x, Mode mode) {
  std::array<Tensor, kBranches> branches;
  for (std::size_t b = 0; b < kBranches; ++b) branches[b] = ad::relu(norms[b](convs[b](x), mode));
  return attention(ad::concat_channels(std::span<const Tensor>(branches)));
}

Tensor ParameterFactory::kaiming_uniform(const std::string& name, ad::Shape shape, std::size_t fan_in) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(ad::numel(shape));
  for (double& v : values) v = dist(rng_);
  Tensor t = Tensor::from(std::move(shape), std::move(values), true);
  params_.emplace_back(name, t);
  return t;
}

Tensor ParameterFactory::buffer(const std::string& name, ad::Shape shape, double fill) {
  Tensor t = Tensor::full(std::move(shape), fill);
  buffers_.emplace_back(name, t);
  return t;
}

Conv ParameterFactory::conv(const std::string& name, std::size_t in, std::size_t out, std::size_t kh, std::size_t kw,
                            ad::Conv2dOptions options, bool with_bias) {
  Conv c;
  c.weight = kaiming_uniform(name + ".weight", {out, in, kh, kw}, in * kh * kw);
  if (with_bias) {
    c.bias = Tensor::zeros({out}, true);
    params_.emplace_back(name + ".bias", c.bias);
  }
  c.options = options;
  return c;
}

BatchNorm ParameterFactory::batch_norm(const std::string& name, std::size_t channels) {
  BatchNorm bn;
  bn.gamma = Tensor::full({channels}, 1.0, true);
  bn.beta = Tensor::zeros({channels}, true);
  params_.emplace_back(name + ".gamma", bn.gamma);
  params_.emplace_back(name + ".beta", bn.beta);
  bn.stats.mean = buffer(name + ".running_mean", {channels}, 0.0);
  bn.stats.var = buffer(name + ".running_var", {channels}, 1.0);
  return bn;
}

ChannelAttention ParameterFactory::attention(const std::string& name, std::size_t channels, std::size_t reduction) {
  ChannelAttention a;
  a.channels = channels;
  a.reduction = reduction;
  const std::size_t hidden = channels / reduction;
  a.w1 = kaiming_uniform(name + ".w1", {hidden, channels}, channels);
  a.w2 = kaiming_uniform(name + ".w2", {channels, hidden}, hidden);
  return a;
}

InceptionBlock ParameterFactory::inception(const std::string& name, std::size_t in, std::size_t out,
                                           std::size_t reduction) {
  static constexpr std::array<std::pair<std::size_t, std::size_t>, InceptionBlock::kBranches> kKernels{
      {{1, 1}, {1, 7}, {7, 1}, {3, 3}}};
  static constexpr std::array<const char*, InceptionBlock::kBranches> kNames{"b1x1", "b1x7", "b7x1", "b3x3"};
  if (out % InceptionBlock::kBranches != 0) {
    throw ConfigError("Inception output width " + std::to_string(out) + " is not divisible by 4");
  }
  InceptionBlock block;
  block.in_channels = in;
  block.out_channels = out;
  const std::size_t per_branch = out / InceptionBlock::kBranches;
  for (std::size_t b = 0; b < InceptionBlock::kBranches; ++b) {
    const auto [kh, kw] = kKernels[b];
    const std::string branch = name + "." + kNames[b];
    block.convs[b] = conv(branch + ".conv", in, per_branch, kh, kw, ad::Conv2dOptions::same(kh, kw), false);
    block.norms[b] = batch_norm(branch + ".bn", per_branch);
  }
  block.attention = attention(name + ".attention", out, reduction);
  return block;
}

// ---- generator ---------------------------------------------------------------------

Generator::Generator(GeneratorConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  ParameterFactory f(seed);
  const std::size_t r = config_.attention_reduction;
  const auto& enc = config_.encoder_channels;

  stem_conv_ = f.conv("gen.stem.conv", config_.input_channels, enc[0], 3, 3, ad::Conv2dOptions::same(3, 3), false);
  stem_norm_ = f.batch_norm("gen.stem.bn", enc[0]);

  std::size_t channels = enc[0];
  for (std::size_t i = 0; i < config_.depth; ++i) {
    const std::string level = "gen.enc" + std::to_string(i);
    encoder_.push_back(f.inception(level + ".inception", channels, enc[i], r));
    channels = enc[i];
    down_convs_.push_back(f.conv(level + ".down.conv", channels, channels, 4, 4, {2, 1, 1}, false));
    down_norms_.push_back(f.batch_norm(level + ".down.bn", channels));
  }
  for (std::size_t i = 0; i < config_.bottleneck_channels.size(); ++i) {
    const std::size_t out = config_.bottleneck_channels[i];
    bottleneck_.push_back(f.inception("gen.bottleneck" + std::to_string(i), channels, out, r));
    channels = out;
  }
  for (std::size_t j = 0; j < config_.depth; ++j) {
    const std::size_t skip = enc[config_.depth - 1 - j];
    const std::size_t out = config_.decoder_channels[j];
    decoder_.push_back(f.inception("gen.dec" + std::to_string(j) + ".inception", channels + skip, out, r));
    channels = out;
  }
  head_ = f.conv("gen.head.conv", channels, config_.output_channels, 1, 1, {}, true);

  params_ = f.take_parameters();
  buffers_ = f.take_buffers();
}

Tensor Generator::forward(const Tensor& input, Mode mode) {
  if (input.rank() != 4 || input.dim(1) != config_.input_channels) {
    throw std::invalid_argument("generator expects (N, " + std::to_string(config_.input_channels) +
                                ", H, W) input, got " + ad::shape_string(input.shape()));
  }
  const std::size_t h = input.dim(2);
  const std::size_t w = input.dim(3);
  const std::size_t multiple = std::size_t{1} << config_.depth;
  const std::size_t hp = round_up(h, multiple);
  const std::size_t wp = round_up(w, multiple);
  if (hp - h >= h || wp - w >= w) {
    throw std::invalid_argument("input " + ad::shape_string(input.shape()) + " is too small to pad to a multiple of " +
                                std::to_string(multiple));
  }

  Tensor x = ad::reflect_pad(input, hp - h, wp - w);
  x = ad::relu(stem_norm_(stem_conv_(x), mode));
  std::vector<Tensor> skips;
  for (std::size_t i = 0; i < config_.depth; ++i) {
    x = encoder_[i](x, mode);
    skips.push_back(x);
    x = ad::relu(down_norms_[i](down_convs_[i](x), mode));
  }
  for (auto& block : bottleneck_) x = block(x, mode);
  for (std::size_t j = 0; j < config_.depth; ++j) {
    x = ad::concat_channels({ad::upsample_nearest2x(x), skips[config_.depth - 1 - j]});
    x = decoder_[j](x, mode);
  }
  x = ad::relu(head_(x));
  if (hp != h || wp != w) x = ad::crop(x, 0, h, 0, w);
  return x;
}

std::vector<Tensor> Generator::parameter_tensors() const { return tensors_of(params_); }
std::size_t Generator::parameter_count() const { return sum_numel(params_); }

std::vector<LayerInfo> Generator::layers() const {
  std::vector<LayerInfo> out;
  out.push_back({"input", config_.input_channels});
  out.push_back({"input_processing", config_.encoder_channels[0]});
  for (std::size_t i = 0; i < config_.depth; ++i) {
    out.push_back({"inception_" + std::to_string(i + 1), encoder_[i].out_channels});
    out.push_back({"downsample_" + std::to_string(i + 1), down_norms_[i].gamma.numel()});
  }
  for (std::size_t i = 0; i < bottleneck_.size(); ++i) {
    out.push_back({"bottleneck_" + std::to_string(i + 1), bottleneck_[i].out_channels});
  }
  for (std::size_t j = 0; j < config_.depth; ++j) {
    out.push_back({"inception_up_" + std::to_string(config_.depth - j), decoder_[j].out_channels});
  }
  out.push_back({"output", config_.output_channels});
  return out;
}

// ---- spectral normalization ---------------------------------------------------------

Tensor spectral_normalize(const Tensor& weight, std::vector<double>& u, int n_iters, double* sigma_out) {
  const std::size_t rows = weight.dim(0);
  const std::size_t cols = weight.numel() / rows;
  if (u.size() != rows) throw std::invalid_argument("spectral_normalize: u has the wrong length");
  const auto w = weight.values();

  std::vector<double> v;
  std::vector<double> wv;
  for (int it = 0; it < n_iters; ++it) {
    right_vector(w, rows, cols, u, v);
    left_product(w, rows, cols, v, u);
    normalize(u);
  }
  right_vector(w, rows, cols, u, v);
  left_product(w, rows, cols, v, wv);
  double sigma = 0.0;
  for (std::size_t r = 0; r < rows; ++r) sigma += u[r] * wv[r];
  sigma = std::max(sigma, 1e-12);
  if (sigma_out) *sigma_out = sigma;

  std::vector<double> out(w.begin(), w.end());
  for (double& x : out) x /= sigma;
  return ad::make_result(
      weight.shape(), std::move(out), {weight},
      [u_fixed = u, v = std::move(v), sigma, rows, cols](ad::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& gw = p.ensure_grad();
        double inner = 0.0;
        for (std::size_t i = 0; i < gw.size(); ++i) inner += self.grad[i] * p.value[i];
        const double coeff = inner / (sigma * sigma);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            gw[i] += self.grad[i] / sigma - coeff * u_fixed[r] * v[c];
          }
        }
      },
      "spectral_normalize");
}

double power_iteration_sigma(std::span<const double> matrix, std::size_t rows, std::size_t cols, int n_iters) {
  if (matrix.size() != rows * cols) throw std::invalid_argument("power_iteration_sigma: size mismatch");
  std::vector<double> u(rows, 1.0);
  // A deterministic, non-degenerate start vector.
  for (std::size_t r = 0; r < rows; ++r) u[r] = 1.0 + 0.1 * std::sin(static_cast<double>(r) + 1.0);
  normalize(u);
  std::vector<double> v;
  for (int it = 0; it < n_iters; ++it) {
    right_vector(matrix, rows, cols, u, v);
    left_product(matrix, rows, cols, v, u);
    normalize(u);
  }
  right_vector(matrix, rows, cols, u, v);
  std::vector<double> wv;
  left_product(matrix, rows, cols, v, wv);
  double sigma = 0.0;
  for (std::size_t r = 0; r < rows; ++r) sigma += u[r] * wv[r];
  return sigma;
}

// ---- discriminator --------------------------------------------------------------------

Discriminator::Discriminator(DiscriminatorConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  ParameterFactory f(seed);
  std::size_t channels = config_.input_channels;
  for (std::size_t i = 0; i < config_.channels.size(); ++i) {
    convs_.push_back(f.conv("disc.layer" + std::to_string(i + 1), channels, config_.channels[i], 4, 4, {2, 1, 1}, true));
    channels = config_.channels[i];
  }
  convs_.push_back(f.conv("disc.head", channels, config_.output_channels, 3, 3, ad::Conv2dOptions::same(3, 3), true));
  params_ = f.take_parameters();

  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& c : convs_) {
    std::vector<double> u(c.weight.dim(0));
    for (double& x : u) x = normal(f.rng());
    normalize(u);
    spectral_normalize(c.weight, u, config_.warmup_iterations);
    sn_u_.push_back(std::move(u));
  }
  last_normalized_.resize(convs_.size());
}

Tensor Discriminator::forward(const Tensor& condition, const Tensor& candidate, Mode mode) {
  Tensor x = ad::concat_channels({condition, candidate});
  if (x.dim(1) != config_.input_channels) {
    throw std::invalid_argument("discriminator expects " + std::to_string(config_.input_channels) +
                                " stacked channels, got " + std::to_string(x.dim(1)));
  }
  const std::size_t halvings = config_.channels.size();
  const std::size_t multiple = std::size_t{1} << halvings;
  const std::size_t h = x.dim(2);
  const std::size_t w = x.dim(3);
  if (std::min(h, w) < multiple) {
    throw std::invalid_argument("discriminator input " + ad::shape_string(x.shape()) + " is too small for " +
                                std::to_string(halvings) + " halvings");
  }
  x = ad::reflect_pad(x, round_up(h, multiple) - h, round_up(w, multiple) - w);

  const int iters = mode == Mode::train ? config_.power_iterations : 0;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const Tensor w_sn = spectral_normalize(convs_[i].weight, sn_u_[i], iters);
    last_normalized_[i].assign(w_sn.values().begin(), w_sn.values().end());
    x = ad::conv2d(x, w_sn, convs_[i].bias, convs_[i].options);
    if (i + 1 < convs_.size()) x = ad::leaky_relu(x, config_.leaky_slope);
  }
  return x;
}

std::vector<Tensor> Discriminator::parameter_tensors() const { return tensors_of(params_); }
std::size_t Discriminator::parameter_count() const { return sum_numel(params_); }

std::vector<LayerInfo> Discriminator::layers() const {
  std::vector<LayerInfo> out{{"input", config_.input_channels}};
  for (std::size_t i = 0; i < config_.channels.size(); ++i) {
    out.push_back({"disc_layer_" + std::to_string(i + 1), config_.channels[i]});
  }
  out.push_back({"disc_output", config_.output_channels});
  return out;
}

}  // namespace tw::gan
