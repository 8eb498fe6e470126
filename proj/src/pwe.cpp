#include "tunnelwave/pwe.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "tunnelwave/errors.hpp"

namespace tw::pwe {

namespace {

std::size_t grid_points(double extent, double step) {
  return static_cast<std::size_t>(std::llround(extent / step)) + 1;
}

}  // namespace

std::size_t TunnelEnvironment::n_range() const { return grid_points(length_m, delta_range_m); }
std::size_t TunnelEnvironment::n_height() const { return grid_points(height_m, delta_height_m); }
double TunnelEnvironment::wavelength_m() const { return kSpeedOfLight / frequency_hz; }
double TunnelEnvironment::k0() const { return 2.0 * std::numbers::pi * frequency_hz / kSpeedOfLight; }

void TunnelEnvironment::validate() const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(length_m) || !positive(height_m)) throw ConfigError("tunnel length and height must be positive");
  if (!positive(delta_range_m) || !positive(delta_height_m)) throw ConfigError("grid steps must be positive");
  if (!positive(frequency_hz)) throw ConfigError("frequency must be positive");
  if (!(eps_r >= 1.0)) throw ConfigError("relative permittivity must be >= 1");
  if (!(sigma_s_per_m >= 0.0) || !std::isfinite(sigma_s_per_m)) throw ConfigError("conductivity must be >= 0");
  if (!positive(mu_r)) throw ConfigError("relative permeability must be positive");
  if (n_range() < 3 || n_height() < 3) {
    throw ConfigError("grid needs at least 3 points per axis (got " + std::to_string(n_range()) + " x " +
                      std::to_string(n_height()) + ")");
  }
}

SourceSpec default_source(const TunnelEnvironment& env) {
  SourceSpec src;
  src.height_m = 0.5 * env.height_m;
  src.beam_waist_m = 5.0 * env.wavelength_m();
  return src;
}

complex complex_permittivity(const TunnelEnvironment& env) {
  const double omega = 2.0 * std::numbers::pi * env.frequency_hz;
  return {env.eps_r, -env.sigma_s_per_m / (omega * kVacuumPermittivity)};
}

complex wall_alpha(const TunnelEnvironment& env) {
  if (env.closure == WallClosure::neumann) return {0.0, 0.0};
  const complex eps_c = complex_permittivity(env);
  // Principal branch: Re > 0, Im <= 0, i.e. the transmitted wave decays into the wall.
  const complex root = std::sqrt(eps_c * env.mu_r - 1.0);
  return env.polarization == Polarization::horizontal ? root / env.mu_r : root / eps_c;
}

std::vector<complex> init_gaussian_source(const TunnelEnvironment& env, const SourceSpec& src) {
  env.validate();
  if (!(src.height_m > 0.0 && src.height_m < env.height_m)) {
    throw ConfigError("source height " + std::to_string(src.height_m) + " m lies outside the tunnel cross-section");
  }
  if (!(src.beam_waist_m > 0.0)) throw ConfigError("beam waist must be positive");

  const std::size_t n = env.n_height();
  std::vector<complex> column(n);
  const double two_w2 = 2.0 * src.beam_waist_m * src.beam_waist_m;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) * env.delta_height_m - src.height_m;
    column[i] = src.amplitude * std::exp(-d * d / two_w2);
  }
  return column;
}

CrankNicolsonStepper::CrankNicolsonStepper(const TunnelEnvironment& env) : n_(env.n_height()) {
  env.validate();
  const double dx = env.delta_height_m;
  const complex j{0.0, 1.0};
  r_ = env.delta_range_m / (4.0 * j * env.k0() * dx * dx);
  end_diag_ = -2.0 - 2.0 * dx * j * env.k0() * wall_alpha(env);

  // LHS = I - r * D, with D the dx^2-scaled second difference.
  upper_.resize(n_);
  inv_pivot_.resize(n_);
  auto sub = [&](std::size_t i) { return i + 1 == n_ ? -2.0 * r_ : -r_; };
  auto diag = [&](std::size_t i) { return (i == 0 || i + 1 == n_) ? 1.0 - r_ * end_diag_ : 1.0 + 2.0 * r_; };
  auto super = [&](std::size_t i) { return i == 0 ? -2.0 * r_ : -r_; };

  for (std::size_t i = 0; i < n_; ++i) {
    const complex pivot = i == 0 ? diag(0) : diag(i) - sub(i) * upper_[i - 1];
    if (std::abs(pivot) < 1e-300 || !std::isfinite(std::abs(pivot))) {
      throw NumericError("singular Crank-Nicolson system at row " + std::to_string(i));
    }
    inv_pivot_[i] = 1.0 / pivot;
    upper_[i] = i + 1 < n_ ? super(i) * inv_pivot_[i] : complex{};
  }
}

void CrankNicolsonStepper::step(std::span<const complex> in, std::span<complex> out) const {
  if (in.size() != n_ || out.size() != n_) throw ConfigError("column length does not match the grid");
  const complex r = r_;
  const std::size_t last = n_ - 1;

  // out <- (I + r D) in, then forward elimination in place.
  auto rhs = [&](std::size_t i) -> complex {
    if (i == 0) return (1.0 + r * end_diag_) * in[0] + 2.0 * r * in[1];
    if (i == last) return 2.0 * r * in[last - 1] + (1.0 + r * end_diag_) * in[last];
    return r * in[i - 1] + (1.0 - 2.0 * r) * in[i] + r * in[i + 1];
  };
  out[0] = rhs(0) * inv_pivot_[0];
  for (std::size_t i = 1; i < n_; ++i) {
    const complex a = i == last ? -2.0 * r : -r;
    out[i] = (rhs(i) - a * out[i - 1]) * inv_pivot_[i];
  }
  for (std::size_t i = last; i-- > 0;) out[i] -= upper_[i] * out[i + 1];
}

std::vector<complex> march_step(std::span<const complex> column, const TunnelEnvironment& env) {
  CrankNicolsonStepper stepper(env);
  std::vector<complex> out(column.size());
  stepper.step(column, out);
  return out;
}

ComplexFieldSlice solve(const TunnelEnvironment& env, const SourceSpec& src, const SolveOptions& options) {
  env.validate();
  const std::size_t nz = env.n_range();
  const std::size_t nx = env.n_height();
  if (nz > options.grid_cap / nx) {
    throw ConfigError("grid of " + std::to_string(nz) + " x " + std::to_string(nx) + " points exceeds the cap of " +
                      std::to_string(options.grid_cap));
  }

  ComplexFieldSlice slice;
  slice.n_range = nz;
  slice.n_height = nx;
  slice.values.resize(nz * nx);

  const auto source = init_gaussian_source(env, src);
  std::copy(source.begin(), source.end(), slice.values.begin());

  const CrankNicolsonStepper stepper(env);
  for (std::size_t iz = 1; iz < nz; ++iz) {
    std::span<const complex> prev(slice.values.data() + (iz - 1) * nx, nx);
    std::span<complex> next(slice.values.data() + iz * nx, nx);
    stepper.step(prev, next);
  }
  for (const complex& v : slice.values) {
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) throw NumericError("non-finite field value in solve");
  }
  return slice;
}

FieldImage to_field_image(const ComplexFieldSlice& slice, double floor_db) {
  if (!(floor_db < 0.0)) throw ConfigError("floor_db must be negative");
  double peak = 0.0;
  for (const complex& v : slice.values) peak = std::max(peak, std::abs(v));
  if (!(peak > 0.0)) throw DataError("cannot normalize an all-zero field slice");

  FieldImage image(slice.n_height, slice.n_range);
  for (std::size_t iz = 0; iz < slice.n_range; ++iz) {
    for (std::size_t ix = 0; ix < slice.n_height; ++ix) {
      const double mag = std::abs(slice.at(iz, ix));
      double db = mag > 0.0 ? 20.0 * std::log10(mag / peak) : floor_db;
      db = std::clamp(db, floor_db, 0.0);
      image.at(ix, iz) = (db - floor_db) / -floor_db;
    }
  }
  return image;
}

std::size_t nearest_row(const TunnelEnvironment& env, double height_m) {
  if (!(height_m >= 0.0 && height_m <= env.height_m)) {
    throw ConfigError("height " + std::to_string(height_m) + " m lies outside the tunnel cross-section");
  }
  const auto row = static_cast<std::size_t>(std::llround(height_m / env.delta_height_m));
  return std::min(row, env.n_height() - 1);
}

std::vector<double> received_power_line(const ComplexFieldSlice& slice, const TunnelEnvironment& env,
                                        double height_m, double floor_db) {
  if (slice.n_height != env.n_height() || slice.n_range == 0) throw ConfigError("slice does not match environment");
  const std::size_t row = nearest_row(env, height_m);
  double reference = 0.0;
  for (const complex& v : slice.column(0)) reference = std::max(reference, std::abs(v));
  if (!(reference > 0.0)) throw DataError("source column is identically zero");

  std::vector<double> line(slice.n_range);
  for (std::size_t iz = 0; iz < slice.n_range; ++iz) {
    const double mag = std::abs(slice.at(iz, row));
    line[iz] = mag > 0.0 ? 20.0 * std::log10(mag / reference) : floor_db;
  }
  return line;
}

double column_energy(std::span<const complex> column, double delta_height_m) {
  if (column.empty()) return 0.0;
  double sum = 0.0;
  for (const complex& v : column) sum += std::norm(v);
  sum -= 0.5 * (std::norm(column.front()) + std::norm(column.back()));
  return sum * delta_height_m;
}

}  // namespace tw::pwe
