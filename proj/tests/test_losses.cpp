#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "tunnelwave/errors.hpp"
#include "tunnelwave/gradcheck.hpp"
#include "tunnelwave/losses.hpp"

using namespace tw;
using namespace tw::loss;
using tw::ad::Shape;

namespace {

Tensor img(std::size_t h, std::size_t w, std::vector<double> v, bool grad = false) {
  return Tensor::from({1, 1, h, w}, std::move(v), grad);
}

Tensor rand_img(Shape s, std::uint64_t seed, double lo = 0.0, double hi = 1.0, bool grad = false) {
  const std::size_t n = ad::numel(s);
  return Tensor::from(std::move(s), oracle::uniform(n, seed, lo, hi), grad);
}

double oracle_ssim_batch(const Tensor& x, const Tensor& y) {
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  double s = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    std::vector<double> a(x.values().begin() + p * h * w, x.values().begin() + (p + 1) * h * w);
    std::vector<double> b(y.values().begin() + p * h * w, y.values().begin() + (p + 1) * h * w);
    s += oracle::ssim(a, b, h, w);
  }
  return s / static_cast<double>(planes);
}

}  // namespace

TEST_CASE("non-negativity penalty") {
  CHECK(loss_nonneg(img(2, 2, {0, 1, 2, 3})).item() == 0.0);
  CHECK(loss_nonneg(Tensor::full({1, 1, 3, 4}, -0.7)).item() == doctest::Approx(0.7));
  CHECK(loss_nonneg(img(2, 2, {-1, 2, 0, -3})).item() == 1.0);
}

TEST_CASE("boundary penalty") {
  CHECK(loss_boundary(Tensor::full({2, 1, 5, 4}, 1.0)).item() == 1.0);
  CHECK(loss_boundary(img(3, 3, {0, 0, 0, 1, 1, 1, 0, 0, 0})).item() == 0.0);
  CHECK(loss_boundary(img(3, 3, {1, 2, 3, 9, 9, 9, 4, 5, 6})).item() == 3.5);
  CHECK(loss_boundary(img(1, 3, {1, 2, 6})).item() == 3.0);
}

TEST_CASE("smoothness penalty") {
  CHECK(loss_smooth(Tensor::full({1, 1, 4, 4}, 0.3)).item() == 0.0);
  CHECK(loss_smooth(img(1, 5, {0, 0.5, 1.0, 1.5, 2.0})).item() == doctest::Approx(0.5));
  CHECK(loss_smooth(img(2, 2, {0, 1, 1, 1})).item() == 1.0);
  // Vertical ramp: only the H term contributes.
  CHECK(loss_smooth(img(3, 2, {0, 0, 2, 2, 4, 4})).item() == doctest::Approx(2.0));
}

TEST_CASE("physics total") {
  const auto z = Tensor::zeros({1, 1, 4, 5});
  CHECK(loss_physics(z).item() == 0.0);
  CHECK(loss_physics(Tensor::full({1, 1, 4, 5}, 1.0)).item() == 1.0);
  const auto r = rand_img({2, 1, 6, 7}, 3, -1.0, 1.0);
  CHECK(loss_physics(r).item() ==
        doctest::Approx(loss_nonneg(r).item() + loss_boundary(r).item() + loss_smooth(r).item()).epsilon(1e-14));
}

TEST_CASE("content terms") {
  const auto a = rand_img({2, 1, 4, 6}, 5);
  CHECK(loss_l1(a, a).item() == 0.0);
  CHECK(loss_mse(a, a).item() == 0.0);
  const auto b = ad::add_scalar(a, -0.25);
  CHECK(loss_l1(a, b).item() == doctest::Approx(0.25));
  CHECK(loss_mse(a, b).item() == doctest::Approx(0.0625));

  const auto c = rand_img({2, 1, 4, 6}, 6);
  double l1 = 0, l2 = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a.values()[i] - c.values()[i];
    l1 += std::abs(d);
    l2 += d * d;
  }
  CHECK(loss_l1(a, c).item() == doctest::Approx(l1 / 48).epsilon(1e-14));
  CHECK(loss_mse(a, c).item() == doctest::Approx(l2 / 48).epsilon(1e-14));
  CHECK_THROWS_AS(loss_l1(a, rand_img({2, 1, 4, 5}, 1)), std::invalid_argument);
}

TEST_CASE("SSIM") {
  const auto x = rand_img({1, 1, 16, 16}, 7);
  CHECK(ssim(x, x).item() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(loss_ssim(x, x).item() == doctest::Approx(0.0).epsilon(1e-12));

  std::vector<double> board(256);
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 16; ++c) board[r * 16 + c] = static_cast<double>((r + c) % 2);
  std::vector<double> inv(256);
  for (std::size_t i = 0; i < 256; ++i) inv[i] = 1.0 - board[i];
  const double expected = oracle::ssim(board, inv, 16, 16);
  const double got = ssim(img(16, 16, board), img(16, 16, inv)).item();
  CHECK(expected < 0.0);
  CHECK(got == doctest::Approx(expected).epsilon(1e-10));

  const auto flat = Tensor::full({1, 1, 12, 12}, 0.4);
  CHECK(ssim(flat, ad::add_scalar(flat, 0.1)).item() < 1.0);
  CHECK(loss_ssim(flat, ad::add_scalar(flat, 0.1)).item() > 0.0);

  // Random batches on both code paths against the pixel-by-pixel reference.
  for (const Shape& s : {Shape{2, 1, 13, 20}, Shape{3, 1, 32, 11}, Shape{2, 1, 6, 40}, Shape{1, 1, 5, 5}}) {
    const auto p = rand_img(s, 10 + s[2]);
    const auto q = rand_img(s, 20 + s[3]);
    CHECK(ssim(p, q).item() == doctest::Approx(oracle_ssim_batch(p, q)).epsilon(1e-10));
    CHECK(ssim(p, q).item() == doctest::Approx(ssim(q, p).item()).epsilon(1e-12));
  }
}

TEST_CASE("adversarial terms") {
  const auto ones = Tensor::full({2, 1, 4, 4}, 1.0);
  const auto zeros = Tensor::zeros({2, 1, 4, 4});
  const auto half = Tensor::full({2, 1, 4, 4}, 0.5);
  CHECK(adversarial_g(ones).item() == 0.0);
  CHECK(adversarial_d(ones, zeros).item() == 0.0);
  CHECK(adversarial_d(half, half).item() == 0.25);
  CHECK(adversarial_g(zeros).item() == 1.0);
}

TEST_CASE("loss gradients") {
  const auto a = rand_img({2, 1, 12, 13}, 31, 0.05, 0.95, true);
  const auto b = rand_img({2, 1, 12, 13}, 32, 0.05, 0.95);
  const auto s = rand_img({2, 1, 7, 5}, 33, -0.9, 0.9, true);
  ad::GradCheckOptions o;
  o.tolerance = 1e-5;
  auto check = [&](const std::function<Tensor()>& fn, const Tensor& in) {
    const auto r = ad::finite_difference_check(fn, {in}, o);
    CHECK(r.max_rel_error <= o.tolerance);
  };
  check([&] { return ssim(a, b); }, a);
  check([&] { return loss_ssim(a, b); }, a);
  check([&] { return ssim(s, ad::mul_scalar(s, 0.5)); }, s);
  check([&] { return loss_mse(a, b); }, a);
  check([&] { return loss_boundary(s); }, s);
  check([&] { return adversarial_d(s, ad::square(s)); }, s);
  check([&] { return adversarial_g(s); }, s);
  // nonneg, smooth and l1 have kinks; probe away from them.
  const auto far = Tensor::from({1, 1, 2, 3}, {-0.5, 0.7, -0.2, 1.3, 0.1, 2.6}, true);
  check([&] { return loss_nonneg(far); }, far);
  check([&] { return loss_smooth(far); }, far);
  check([&] { return loss_l1(far, Tensor::zeros({1, 1, 2, 3})); }, far);
}

TEST_CASE("weighted total and report") {
  const auto one = Tensor::full({1, 1, 4, 4}, 1.0);
  const auto d_one = Tensor::full({1, 1, 1, 1}, 1.0);

  LossWeights zero{0, 0, 0, 0, 0};
  const auto t0 = total_generator_loss(generator_terms(rand_img({1, 1, 4, 4}, 1), one, Tensor::zeros({1, 1, 1, 1})), zero);
  CHECK(t0.total.item() == 0.0);

  LossWeights phys{0, 0, 0, 0, 10};
  const auto t1 = total_generator_loss(generator_terms(one, one, d_one), phys);
  CHECK(t1.total.item() == 10.0);
  CHECK(t1.report.boundary == 1.0);
  CHECK(t1.report.physics() == 1.0);

  const auto fake = rand_img({2, 1, 12, 14}, 41);
  const auto target = rand_img({2, 1, 12, 14}, 42);
  const auto d = rand_img({2, 1, 2, 2}, 43, -1, 1);
  const LossWeights w;
  const auto t = total_generator_loss(generator_terms(fake, target, d), w);
  CHECK(std::abs(t.report.total - t.report.weighted_sum(w)) < 1e-12);
  CHECK(t.report.total == t.total.item());
  CHECK(t.report.l1 == loss_l1(fake, target).item());
  CHECK(t.report.ssim == doctest::Approx(1.0 - ssim(fake, target).item()));
  for (double v : {t.report.l1, t.report.mse, t.report.ssim, t.report.nonneg, t.report.boundary, t.report.smooth})
    CHECK(v >= 0.0);

  CHECK_THROWS_AS((LossWeights{1, -1, 0, 0, 0}.validate()), ConfigError);
  CHECK_THROWS_AS(total_generator_loss(generator_terms(fake, target, d), LossWeights{1, 1, 1, 1, std::nan("")}),
                  ConfigError);

  CHECK(loss_csv_header() == "epoch,step,adv,l1,mse,ssim,nonneg,boundary,smooth,total");
  LossReport r;
  r.epoch = 3;
  r.step = 7;
  r.l1 = 0.5;
  r.total = 0.1;
  CHECK(loss_csv_row(r) == "3,7,0,0.5,0,0,0,0,0,0.10000000000000001");
}
