#pragma once

// Reference implementations used only by tests. Each one is written
// independently of the library code it checks: plain loops, dense algebra or
// closed forms.

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <vector>

namespace oracle {

using cd = std::complex<double>;

/// Paraxial Gaussian beam launched as A exp(-x^2 / (2 w^2)) at z = 0, from the
/// complex beam parameter q(z) = z + j k w^2.
inline cd gaussian_beam(double x, double z, double k, double w, cd amplitude) {
  const cd j(0.0, 1.0);
  const cd q0 = j * k * w * w;
  const cd q = z + q0;
  return amplitude * std::sqrt(q0 / q) * std::exp(-j * k * x * x / (2.0 * q));
}

/// One Crank-Nicolson step of du/dz = (1 / 2jk) d2u/dx2 with dense matrices.
/// Wall rows come from the centred ghost point of du/dn + j k alpha u = 0.
inline std::vector<cd> dense_cn_step(const std::vector<cd>& u, double k, double dz, double dx, cd alpha) {
  const int n = static_cast<int>(u.size());
  const cd j(0.0, 1.0);
  Eigen::MatrixXcd d = Eigen::MatrixXcd::Zero(n, n);
  for (int i = 1; i + 1 < n; ++i) {
    d(i, i - 1) = 1.0;
    d(i, i) = -2.0;
    d(i, i + 1) = 1.0;
  }
  // u_{-1} = u_1 - 2 dx j k alpha u_0, mirrored at the far wall.
  d(0, 0) = -2.0 - 2.0 * dx * j * k * alpha;
  d(0, 1) = 2.0;
  d(n - 1, n - 1) = -2.0 - 2.0 * dx * j * k * alpha;
  d(n - 1, n - 2) = 2.0;
  const cd r = dz / (2.0 * j * k * dx * dx) / 2.0;
  const Eigen::MatrixXcd id = Eigen::MatrixXcd::Identity(n, n);
  Eigen::VectorXcd v(n);
  for (int i = 0; i < n; ++i) v(i) = u[static_cast<std::size_t>(i)];
  const Eigen::VectorXcd rhs = (id + r * d) * v;
  const Eigen::VectorXcd out = (id - r * d).fullPivLu().solve(rhs);
  return {out.data(), out.data() + n};
}

/// Direct nested-loop cross-correlation, NCHW, zero padding.
inline std::vector<double> conv2d(const std::vector<double>& x, std::size_t n, std::size_t c, std::size_t h,
                                  std::size_t w, const std::vector<double>& k, std::size_t o, std::size_t kh,
                                  std::size_t kw, const std::vector<double>& bias, std::size_t stride, std::size_t ph,
                                  std::size_t pw, std::size_t& ho, std::size_t& wo) {
  ho = (h + 2 * ph - kh) / stride + 1;
  wo = (w + 2 * pw - kw) / stride + 1;
  std::vector<double> y(n * o * ho * wo, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double s = bias.empty() ? 0.0 : bias[oc];
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t jj = 0; jj < kw; ++jj) {
                const long iy = static_cast<long>(oy * stride + i) - static_cast<long>(ph);
                const long ix = static_cast<long>(ox * stride + jj) - static_cast<long>(pw);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                s += x[((b * c + ic) * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] *
                     k[((oc * c + ic) * kh + i) * kw + jj];
              }
          y[((b * o + oc) * ho + oy) * wo + ox] = s;
        }
  return y;
}

/// Largest singular value from a full SVD.
inline double top_singular_value(const std::vector<double>& m, std::size_t rows, std::size_t cols) {
  Eigen::MatrixXd a(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m[r * cols + c];
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  return svd.singularValues()(0);
}

/// Windowed SSIM written out pixel by pixel (Gaussian window, valid
/// positions). Falls back to whole-image statistics for images smaller than
/// the window.
inline double ssim(const std::vector<double>& x, const std::vector<double>& y, std::size_t h, std::size_t w,
                   std::size_t win = 11, double sigma = 1.5, double c1 = 1e-4, double c2 = 9e-4) {
  auto index = [&](double mx, double my, double sxx, double syy, double sxy) {
    return ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
  };
  if (h < win || w < win) {
    const double n = static_cast<double>(h * w);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < h * w; ++i) {
      mx += x[i];
      my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < h * w; ++i) {
      sxx += (x[i] - mx) * (x[i] - mx);
      syy += (y[i] - my) * (y[i] - my);
      sxy += (x[i] - mx) * (y[i] - my);
    }
    return index(mx, my, sxx / n, syy / n, sxy / n);
  }
  std::vector<double> g(win);
  double gs = 0;
  for (std::size_t i = 0; i < win; ++i) {
    const double d = static_cast<double>(i) - (static_cast<double>(win) - 1) / 2;
    g[i] = std::exp(-d * d / (2 * sigma * sigma));
    gs += g[i];
  }
  double total = 0;
  std::size_t count = 0;
  for (std::size_t r = 0; r + win <= h; ++r)
    for (std::size_t c = 0; c + win <= w; ++c) {
      double mx = 0, my = 0;
      for (std::size_t i = 0; i < win; ++i)
        for (std::size_t j = 0; j < win; ++j) {
          const double wt = g[i] * g[j] / (gs * gs);
          mx += wt * x[(r + i) * w + c + j];
          my += wt * y[(r + i) * w + c + j];
        }
      double sxx = 0, syy = 0, sxy = 0;
      for (std::size_t i = 0; i < win; ++i)
        for (std::size_t j = 0; j < win; ++j) {
          const double wt = g[i] * g[j] / (gs * gs);
          const double dx = x[(r + i) * w + c + j] - mx;
          const double dy = y[(r + i) * w + c + j] - my;
          sxx += wt * dx * dx;
          syy += wt * dy * dy;
          sxy += wt * dx * dy;
        }
      total += index(mx, my, sxx, syy, sxy);
      ++count;
    }
  return total / static_cast<double>(count);
}

/// Scalar Adam with bias correction, one parameter.
struct ScalarAdam {
  double lr, b1, b2, eps;
  double m = 0, v = 0;
  int t = 0;
  double step(double theta, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return theta - lr * mh / (std::sqrt(vh) + eps);
  }
};

inline std::vector<double> uniform(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

}  // namespace oracle
