#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "tunnelwave/gradcheck.hpp"
#include "tunnelwave/optim.hpp"
#include "tunnelwave/tensor.hpp"

using namespace tw::ad;

namespace {

Tensor rand_tensor(Shape s, std::uint64_t seed, bool grad = true, double lo = -1.0, double hi = 1.0) {
  const std::size_t n = numel(s);
  return Tensor::from(std::move(s), oracle::uniform(n, seed, lo, hi), grad);
}

void check_grad(const std::function<Tensor()>& fn, std::vector<Tensor> inputs, double tol = 1e-5) {
  GradCheckOptions o;
  o.tolerance = tol;
  const auto r = finite_difference_check(fn, std::move(inputs), o);
  CHECK(r.coords_checked > 0);
  CHECK(r.max_rel_error <= tol);
}

struct ConvCase {
  std::size_t n, c, h, w, o, kh, kw, stride, ph, pw;
};

}  // namespace

TEST_CASE("conv2d matches the nested-loop oracle on every code path") {
  const ConvCase cases[] = {
      {2, 3, 7, 9, 4, 3, 3, 1, 1, 1},  // same padding
      {1, 2, 6, 8, 3, 1, 7, 1, 0, 3},  // 1x7
      {2, 2, 8, 5, 3, 7, 1, 1, 3, 0},  // 7x1
      {2, 4, 5, 6, 5, 1, 1, 1, 0, 0},  // pointwise
      {2, 3, 8, 12, 4, 4, 4, 2, 1, 1}, // stride-2 down
      {1, 1, 13, 14, 1, 11, 11, 1, 0, 0},  // valid window
      {1, 2, 5, 5, 2, 2, 3, 1, 2, 0},  // asymmetric kernel, padding rows only
  };
  std::uint64_t seed = 100;
  for (const auto& k : cases) {
    const auto x = rand_tensor({k.n, k.c, k.h, k.w}, ++seed);
    const auto w = rand_tensor({k.o, k.c, k.kh, k.kw}, ++seed);
    const auto b = rand_tensor({k.o}, ++seed);
    std::size_t ho = 0, wo = 0;
    const auto expected = oracle::conv2d({x.values().begin(), x.values().end()}, k.n, k.c, k.h, k.w,
                                         {w.values().begin(), w.values().end()}, k.o, k.kh, k.kw,
                                         {b.values().begin(), b.values().end()}, k.stride, k.ph, k.pw, ho, wo);
    const auto y = conv2d(x, w, b, {k.stride, k.ph, k.pw});
    REQUIRE(y.shape() == Shape{k.n, k.o, ho, wo});
    double err = 0;
    for (std::size_t i = 0; i < expected.size(); ++i) err = std::max(err, std::abs(y.values()[i] - expected[i]));
    CHECK(err < 1e-12);

    check_grad([&] { return random_projection(conv2d(x, w, b, {k.stride, k.ph, k.pw}), 7); }, {x, w, b});
  }
}

TEST_CASE("conv2d rejects non-integer output sizes and channel mismatches") {
  const auto x = rand_tensor({1, 2, 7, 7}, 1);
  CHECK_THROWS_AS(conv2d(x, rand_tensor({1, 2, 4, 4}, 2), {}, {2, 0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(x, rand_tensor({1, 3, 3, 3}, 2), {}, {}), std::invalid_argument);
  CHECK_THROWS_AS(conv2d_stride2_down(x, rand_tensor({1, 2, 4, 4}, 3), {}), std::invalid_argument);
  const auto even = rand_tensor({1, 2, 8, 6}, 4);
  CHECK(conv2d_stride2_down(even, rand_tensor({3, 2, 4, 4}, 5), {}).shape() == Shape{1, 3, 4, 3});
}

TEST_CASE("shape ops") {
  const auto x = Tensor::from({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
  const auto up = upsample_nearest2x(x);
  CHECK(up.shape() == Shape{1, 1, 4, 6});
  CHECK(up.values()[0] == 1);
  CHECK(up.values()[1] == 1);
  CHECK(up.values()[6] == 1);
  CHECK(up.values()[23] == 6);

  const auto p = reflect_pad(x, 1, 2);
  CHECK(p.shape() == Shape{1, 1, 3, 5});
  // Row 2 mirrors row 0; columns 3 and 4 mirror columns 1 and 0.
  const std::vector<double> expected{1, 2, 3, 2, 1, 4, 5, 6, 5, 4, 1, 2, 3, 2, 1};
  CHECK(std::vector<double>(p.values().begin(), p.values().end()) == expected);

  const auto c = crop(p, 0, 2, 0, 3);
  CHECK(std::vector<double>(c.values().begin(), c.values().end()) == std::vector<double>{1, 2, 3, 4, 5, 6});

  const auto a = Tensor::from({1, 1, 1, 2}, {1, 2});
  const auto b = Tensor::from({1, 2, 1, 2}, {3, 4, 5, 6});
  const auto cat = concat_channels({a, b});
  CHECK(cat.shape() == Shape{1, 3, 1, 2});
  CHECK(std::vector<double>(cat.values().begin(), cat.values().end()) == std::vector<double>{1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS(concat_channels({a, Tensor::zeros({1, 1, 2, 2})}), std::invalid_argument);

  const auto gap = global_avg_pool(b);
  CHECK(gap.shape() == Shape{1, 2});
  CHECK(gap.values()[0] == 3.5);
  CHECK(gap.values()[1] == 5.5);
}

TEST_CASE("gradients of shape and channel ops") {
  const auto x = rand_tensor({2, 3, 4, 6}, 11);
  const auto y = rand_tensor({2, 2, 4, 6}, 12);
  const auto s = rand_tensor({2, 3}, 13);
  const auto w = rand_tensor({4, 3}, 14);
  const auto bias = rand_tensor({4}, 15);
  check_grad([&] { return random_projection(upsample_nearest2x(x), 1); }, {x});
  check_grad([&] { return random_projection(reflect_pad(x, 3, 5), 2); }, {x});
  check_grad([&] { return random_projection(crop(x, 1, 3, 2, 5), 3); }, {x});
  check_grad([&] { return random_projection(concat_channels({x, y}), 4); }, {x, y});
  check_grad([&] { return random_projection(global_avg_pool(x), 5); }, {x});
  check_grad([&] { return random_projection(scale_channels(x, s), 6); }, {x, s});
  check_grad([&] { return random_projection(dense(s, w, bias), 7); }, {s, w, bias});
}

TEST_CASE("gradients of pointwise ops and reductions") {
  // Keep values away from the kinks of relu/abs so central differences are valid.
  auto away = [](Tensor t) {
    for (double& v : t.mutable_values()) v = v < 0 ? v - 0.1 : v + 0.1;
    return t;
  };
  const auto a = away(rand_tensor({3, 4}, 21));
  const auto b = away(rand_tensor({3, 4}, 22));
  const auto pos = rand_tensor({3, 4}, 23, true, 0.5, 2.0);
  check_grad([&] { return random_projection(relu(a), 1); }, {a});
  check_grad([&] { return random_projection(leaky_relu(a, 0.2), 2); }, {a});
  check_grad([&] { return random_projection(sigmoid(a), 3); }, {a});
  check_grad([&] { return random_projection(abs(a), 4); }, {a});
  check_grad([&] { return random_projection(square(a), 5); }, {a});
  check_grad([&] { return random_projection(add_scalar(a, 0.3), 6); }, {a});
  check_grad([&] { return random_projection(mul_scalar(a, -1.7), 7); }, {a});
  check_grad([&] { return random_projection(add(a, b), 8); }, {a, b});
  check_grad([&] { return random_projection(sub(a, b), 9); }, {a, b});
  check_grad([&] { return random_projection(mul(a, b), 10); }, {a, b});
  check_grad([&] { return random_projection(div(a, pos), 11); }, {a, pos});
  check_grad([&] { return sum(mul(a, b)); }, {a, b});
  check_grad([&] { return mean(square(a)); }, {a});
}

TEST_CASE("batch norm: statistics, running averages and gradients") {
  const auto x = rand_tensor({3, 2, 2, 3}, 31, true, -2.0, 3.0);
  const auto gamma = rand_tensor({2}, 32, true, 0.5, 1.5);
  const auto beta = rand_tensor({2}, 33);
  BatchNormStats stats{Tensor::zeros({2}), Tensor::full({2}, 1.0)};

  const auto y = batch_norm(x, gamma, beta, stats, Mode::train);
  // Per channel, (y - beta) / gamma has zero mean and (biased) unit variance.
  const auto xv = x.values();
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, v = 0, ym = 0;
    std::vector<double> vals;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < 6; ++i) {
        vals.push_back(xv[(n * 2 + c) * 6 + i]);
        ym += (y.values()[(n * 2 + c) * 6 + i] - beta.values()[c]) / gamma.values()[c];
      }
    for (double t : vals) m += t;
    m /= 18;
    for (double t : vals) v += (t - m) * (t - m);
    CHECK(std::abs(ym / 18) < 1e-12);
    CHECK(stats.mean.values()[c] == doctest::Approx(0.1 * m));
    CHECK(stats.var.values()[c] == doctest::Approx(0.9 + 0.1 * v / 17));
  }

  BatchNormStats fixed{Tensor::from({2}, {0.5, -1.0}), Tensor::from({2}, {4.0, 0.25})};
  const auto e = batch_norm(x, gamma, beta, fixed, Mode::eval);
  CHECK(e.values()[0] == doctest::Approx((xv[0] - 0.5) / std::sqrt(4.0 + 1e-5) * gamma.values()[0] + beta.values()[0]));
  CHECK(fixed.mean.values()[0] == 0.5);

  BatchNormStats scratch{Tensor::zeros({2}), Tensor::full({2}, 1.0)};
  check_grad([&] { return random_projection(batch_norm(x, gamma, beta, scratch, Mode::train), 3); }, {x, gamma, beta});
  check_grad([&] { return random_projection(batch_norm(x, gamma, beta, fixed, Mode::eval), 4); }, {x, gamma, beta});
}

TEST_CASE("backward accumulates into leaves and respects NoGradGuard") {
  const auto a = Tensor::from({2}, {1.0, 2.0}, true);
  const auto loss = sum(mul(a, a));
  backward(loss);
  CHECK(a.grad()[0] == 2.0);
  CHECK(a.grad()[1] == 4.0);
  backward(sum(mul(a, a)));
  CHECK(a.grad()[1] == 8.0);
  auto b = a;
  b.zero_grad();
  CHECK(a.grad()[1] == 0.0);

  {
    NoGradGuard guard;
    const auto t = mul(a, a);
    CHECK_FALSE(t.requires_grad());
    CHECK(t.is_leaf());
  }
  CHECK(grad_enabled());
  const auto d = detach(mul(a, a));
  CHECK_FALSE(d.requires_grad());
  CHECK(d.values()[1] == 4.0);

  // A shared subexpression receives gradient from both uses.
  const auto x = Tensor::from({1}, {3.0}, true);
  const auto s = square(x);
  backward(sum(add(s, s)));
  CHECK(x.grad()[0] == 12.0);
  CHECK_THROWS_AS(backward(Tensor::zeros({2})), std::invalid_argument);
}

TEST_CASE("Adam matches a scalar reference trace") {
  AdamOptions opt{0.05, 0.5, 0.999, 1e-8};
  auto p = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  Adam adam({p}, opt);
  std::vector<oracle::ScalarAdam> ref(3, oracle::ScalarAdam{0.05, 0.5, 0.999, 1e-8});
  std::vector<double> theta{1.0, -2.0, 0.5};
  for (int step = 0; step < 25; ++step) {
    adam.zero_grad();
    // f = sum(p^3) / 3 -> grad = p^2
    backward(mul_scalar(sum(mul(square(p), p)), 1.0 / 3.0));
    adam.step();
    for (std::size_t i = 0; i < 3; ++i) theta[i] = ref[i].step(theta[i], theta[i] * theta[i]);
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(p.values()[i] == doctest::Approx(theta[i]).epsilon(1e-12));
  CHECK(adam.steps_taken() == 25);
}
