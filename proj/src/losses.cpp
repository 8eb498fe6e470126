#include "tunnelwave/losses.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "tunnelwave/errors.hpp"

namespace tw::loss {

namespace {

void require_image(const Tensor& t, const char* what) {
  if (!t.defined() || t.rank() != 4) {
    throw std::invalid_argument(std::string(what) + ": expected an (N, C, H, W) tensor");
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + ad::shape_string(a.shape()) + " vs " +
                                ad::shape_string(b.shape()));
  }
}

Tensor gaussian_window(const SsimOptions& o) {
  std::vector<double> g(o.window);
  const double c = (static_cast<double>(o.window) - 1.0) / 2.0;
  double s = 0.0;
  for (std::size_t i = 0; i < o.window; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2.0 * o.sigma * o.sigma));
    s += g[i];
  }
  std::vector<double> w(o.window * o.window);
  for (std::size_t i = 0; i < o.window; ++i) {
    for (std::size_t j = 0; j < o.window; ++j) w[i * o.window + j] = g[i] * g[j] / (s * s);
  }
  return Tensor::from({1, 1, o.window, o.window}, std::move(w));
}

// (N, C, H, W) -> (N*C, 1, H, W); a pure relabeling of the same buffer order.
Tensor as_planes(const Tensor& x) {
  if (x.dim(1) == 1) return x;
  const std::size_t planes = x.dim(0) * x.dim(1);
  std::vector<double> v(x.values().begin(), x.values().end());
  return ad::make_result(
      {planes, 1, x.dim(2), x.dim(3)}, std::move(v), {x},
      [](ad::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      },
      "as_planes");
}

Tensor ssim_map(const Tensor& mx, const Tensor& my, const Tensor& exx, const Tensor& eyy, const Tensor& exy,
                const SsimOptions& o) {
  const Tensor vx = ad::sub(exx, ad::square(mx));
  const Tensor vy = ad::sub(eyy, ad::square(my));
  const Tensor cxy = ad::sub(exy, ad::mul(mx, my));
  const Tensor num = ad::mul(ad::add_scalar(ad::mul_scalar(ad::mul(mx, my), 2.0), o.c1),
                             ad::add_scalar(ad::mul_scalar(cxy, 2.0), o.c2));
  const Tensor den = ad::mul(ad::add_scalar(ad::add(ad::square(mx), ad::square(my)), o.c1),
                             ad::add_scalar(ad::add(vx, vy), o.c2));
  return ad::div(num, den);
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {adv, l1, mse, ssim, physics}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and non-negative");
  }
}

Tensor loss_nonneg(const Tensor& e_hat) { return ad::mean(ad::relu(ad::mul_scalar(e_hat, -1.0))); }

Tensor loss_boundary(const Tensor& e_hat) {
  require_image(e_hat, "loss_boundary");
  const std::size_t planes = e_hat.dim(0) * e_hat.dim(1);
  const std::size_t h = e_hat.dim(2);
  const std::size_t w = e_hat.dim(3);
  const std::size_t n_rows = h > 1 ? 2 : 1;
  const double inv = 1.0 / static_cast<double>(planes * n_rows * w);
  const auto x = e_hat.values();
  double s = 0.0;
  for (std::size_t p = 0; p < planes; ++p) {
    const double* plane = x.data() + p * h * w;
    for (std::size_t c = 0; c < w; ++c) s += plane[c];
    if (h > 1) {
      for (std::size_t c = 0; c < w; ++c) s += plane[(h - 1) * w + c];
    }
  }
  return ad::make_result(
      {}, {s * inv}, {e_hat},
      [planes, h, w, inv](ad::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        const double d = self.grad[0] * inv;
        for (std::size_t k = 0; k < planes; ++k) {
          double* plane = g.data() + k * h * w;
          for (std::size_t c = 0; c < w; ++c) plane[c] += d;
          if (h > 1) {
            for (std::size_t c = 0; c < w; ++c) plane[(h - 1) * w + c] += d;
          }
        }
      },
      "loss_boundary");
}

Tensor loss_smooth(const Tensor& e_hat) {
  require_image(e_hat, "loss_smooth");
  const std::size_t planes = e_hat.dim(0) * e_hat.dim(1);
  const std::size_t h = e_hat.dim(2);
  const std::size_t w = e_hat.dim(3);
  const std::size_t nx = planes * h * (w - 1);
  const std::size_t ny = planes * (h - 1) * w;
  const double inv_x = nx ? 1.0 / static_cast<double>(nx) : 0.0;
  const double inv_y = ny ? 1.0 / static_cast<double>(ny) : 0.0;
  const auto x = e_hat.values();
  double sx = 0.0;
  double sy = 0.0;
  for (std::size_t p = 0; p < planes; ++p) {
    const double* a = x.data() + p * h * w;
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c + 1 < w; ++c) sx += std::abs(a[r * w + c + 1] - a[r * w + c]);
    }
    for (std::size_t r = 0; r + 1 < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) sy += std::abs(a[(r + 1) * w + c] - a[r * w + c]);
    }
  }
  return ad::make_result(
      {}, {sx * inv_x + sy * inv_y}, {e_hat},
      [planes, h, w, inv_x, inv_y](ad::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        const auto& a_all = p.value;
        const double gx = self.grad[0] * inv_x;
        const double gy = self.grad[0] * inv_y;
        auto sgn = [](double d) { return static_cast<double>((d > 0.0) - (d < 0.0)); };
        for (std::size_t k = 0; k < planes; ++k) {
          const double* a = a_all.data() + k * h * w;
          double* ga = g.data() + k * h * w;
          for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c + 1 < w; ++c) {
              const double s = gx * sgn(a[r * w + c + 1] - a[r * w + c]);
              ga[r * w + c + 1] += s;
              ga[r * w + c] -= s;
            }
          }
          for (std::size_t r = 0; r + 1 < h; ++r) {
            for (std::size_t c = 0; c < w; ++c) {
              const double s = gy * sgn(a[(r + 1) * w + c] - a[r * w + c]);
              ga[(r + 1) * w + c] += s;
              ga[r * w + c] -= s;
            }
          }
        }
      },
      "loss_smooth");
}

Tensor loss_physics(const Tensor& e_hat) {
  return ad::add(ad::add(loss_nonneg(e_hat), loss_boundary(e_hat)), loss_smooth(e_hat));
}

Tensor loss_l1(const Tensor& e_hat, const Tensor& e) {
  require_same_shape(e_hat, e, "loss_l1");
  return ad::mean(ad::abs(ad::sub(e_hat, e)));
}

Tensor loss_mse(const Tensor& e_hat, const Tensor& e) {
  require_same_shape(e_hat, e, "loss_mse");
  return ad::mean(ad::square(ad::sub(e_hat, e)));
}

Tensor ssim(const Tensor& x, const Tensor& y, const SsimOptions& options) {
  require_image(x, "ssim");
  require_same_shape(x, y, "ssim");
  if (options.window == 0 || options.sigma <= 0.0) throw std::invalid_argument("ssim: bad window");
  const Tensor px = as_planes(x);
  const Tensor py = as_planes(y);
  const std::size_t h = px.dim(2);
  const std::size_t w = px.dim(3);

  if (h < options.window || w < options.window) {
    const Tensor mx = ad::global_avg_pool(px);
    const Tensor my = ad::global_avg_pool(py);
    const Tensor exx = ad::global_avg_pool(ad::square(px));
    const Tensor eyy = ad::global_avg_pool(ad::square(py));
    const Tensor exy = ad::global_avg_pool(ad::mul(px, py));
    return ad::mean(ssim_map(mx, my, exx, eyy, exy, options));
  }
  const Tensor win = gaussian_window(options);
  auto blur = [&](const Tensor& t) { return ad::conv2d(t, win, {}, {}); };
  return ad::mean(ssim_map(blur(px), blur(py), blur(ad::square(px)), blur(ad::square(py)), blur(ad::mul(px, py)),
                           options));
}

Tensor loss_ssim(const Tensor& x, const Tensor& y, const SsimOptions& options) {
  return ad::add_scalar(ad::mul_scalar(ssim(x, y, options), -1.0), 1.0);
}

Tensor adversarial_g(const Tensor& d_fake) { return ad::mean(ad::square(ad::add_scalar(d_fake, -1.0))); }

Tensor adversarial_d(const Tensor& d_real, const Tensor& d_fake) {
  return ad::add(ad::mul_scalar(ad::mean(ad::square(ad::add_scalar(d_real, -1.0))), 0.5),
                 ad::mul_scalar(ad::mean(ad::square(d_fake)), 0.5));
}

LossTerms generator_terms(const Tensor& fake, const Tensor& target, const Tensor& d_fake) {
  LossTerms t;
  t.adv = d_fake.defined() ? adversarial_g(d_fake) : Tensor::scalar(0.0);
  t.l1 = loss_l1(fake, target);
  t.mse = loss_mse(fake, target);
  t.ssim = loss_ssim(fake, target);
  t.nonneg = loss_nonneg(fake);
  t.boundary = loss_boundary(fake);
  t.smooth = loss_smooth(fake);
  return t;
}

double LossReport::weighted_sum(const LossWeights& w) const {
  return w.adv * adv + w.l1 * l1 + w.mse * mse + w.ssim * ssim + w.physics * physics();
}

WeightedLoss total_generator_loss(const LossTerms& terms, const LossWeights& weights) {
  weights.validate();
  const Tensor physics = ad::add(ad::add(terms.nonneg, terms.boundary), terms.smooth);
  Tensor total = ad::mul_scalar(terms.adv, weights.adv);
  total = ad::add(total, ad::mul_scalar(terms.l1, weights.l1));
  total = ad::add(total, ad::mul_scalar(terms.mse, weights.mse));
  total = ad::add(total, ad::mul_scalar(terms.ssim, weights.ssim));
  total = ad::add(total, ad::mul_scalar(physics, weights.physics));

  WeightedLoss out{total, {}};
  auto& r = out.report;
  r.adv = terms.adv.item();
  r.l1 = terms.l1.item();
  r.mse = terms.mse.item();
  r.ssim = terms.ssim.item();
  r.nonneg = terms.nonneg.item();
  r.boundary = terms.boundary.item();
  r.smooth = terms.smooth.item();
  r.total = total.item();
  return out;
}

std::string loss_csv_header() { return "epoch,step,adv,l1,mse,ssim,nonneg,boundary,smooth,total"; }

std::string loss_csv_row(const LossReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.epoch, r.step, r.adv,
                r.l1, r.mse, r.ssim, r.nonneg, r.boundary, r.smooth, r.total);
  return buf;
}

}  // namespace tw::loss
