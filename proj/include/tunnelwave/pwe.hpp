#pragma once

// Narrow-angle parabolic-equation solver for a 2-D (range x height) slice of a
// rectangular tunnel with lossy walls.
//
// The envelope u(z, x) obeys du/dz = 1/(2 j k0) d2u/dx2 and is marched with
// Crank-Nicolson; every step is one complex tridiagonal solve. The walls at
// x = 0 and x = height use a Leontovich impedance closure
//     du/dn + j k0 alpha u = 0
// discretized with a centred ghost-point difference, which keeps the end rows
// tridiagonal.

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "tunnelwave/field_image.hpp"

namespace tw::pwe {

using complex = std::complex<double>;

inline constexpr double kSpeedOfLight = 299792458.0;
inline constexpr double kVacuumPermittivity = 8.8541878128e-12;
inline constexpr double kDefaultFloorDb = -60.0;
inline constexpr std::size_t kDefaultGridCap = 4'194'304;

enum class Polarization { horizontal, vertical };

// `neumann` forces alpha = 0 (perfectly reflecting walls); used to check the
// unitary interior scheme.
enum class WallClosure { impedance, neumann };

struct TunnelEnvironment {
  double length_m = 500.0;
  double height_m = 50.0;
  double delta_range_m = 0.5;
  double delta_height_m = 0.5;
  double frequency_hz = 900e6;
  double eps_r = 5.0;
  double sigma_s_per_m = 0.01;
  double mu_r = 1.0;
  Polarization polarization = Polarization::horizontal;
  WallClosure closure = WallClosure::impedance;

  std::size_t n_range() const;
  std::size_t n_height() const;
  double wavelength_m() const;
  double k0() const;

  /// Throws ConfigError when a geometric or electrical invariant is violated.
  void validate() const;
};

struct SourceSpec {
  double height_m = 25.0;
  double beam_waist_m = 5.0 * kSpeedOfLight / 900e6;
  complex amplitude{1.0, 0.0};
};

/// Mid-height Gaussian aperture with a waist of five wavelengths.
SourceSpec default_source(const TunnelEnvironment& env);

struct ComplexFieldSlice {
  std::size_t n_range = 0;
  std::size_t n_height = 0;
  std::vector<complex> values;  // values[iz * n_height + ix]

  std::span<const complex> column(std::size_t iz) const {
    return std::span(values).subspan(iz * n_height, n_height);
  }
  complex at(std::size_t iz, std::size_t ix) const { return values[iz * n_height + ix]; }
};

struct SolveOptions {
  std::size_t grid_cap = kDefaultGridCap;
};

complex complex_permittivity(const TunnelEnvironment& env);

/// Wall admittance factor alpha of the impedance closure (0 for the
/// reflecting test closure).
complex wall_alpha(const TunnelEnvironment& env);

std::vector<complex> init_gaussian_source(const TunnelEnvironment& env, const SourceSpec& src);

/// Pre-factored Crank-Nicolson step for one environment. The system matrix
/// does not change along the range axis, so the Thomas elimination
/// coefficients are computed once.
class CrankNicolsonStepper {
 public:
  explicit CrankNicolsonStepper(const TunnelEnvironment& env);

  /// Advances `in` by one range step into `out` (spans may not alias).
  void step(std::span<const complex> in, std::span<complex> out) const;

  std::size_t size() const noexcept { return n_; }

 private:
  std::size_t n_;
  complex r_;            // dz / (4 j k0 dx^2)
  complex end_diag_;     // scaled D2 diagonal entry at either wall
  std::vector<complex> upper_;  // modified super-diagonal of the LHS
  std::vector<complex> inv_pivot_;
};

std::vector<complex> march_step(std::span<const complex> column, const TunnelEnvironment& env);

ComplexFieldSlice solve(const TunnelEnvironment& env, const SourceSpec& src, const SolveOptions& options = {});

/// 20 log10(|u| / max|u|) clamped to [floor_db, 0] and mapped linearly onto
/// [0, 1]. Rows of the image follow the height axis, columns the range axis.
FieldImage to_field_image(const ComplexFieldSlice& slice, double floor_db = kDefaultFloorDb);

/// Received power in dB along the grid row nearest `height_m`, relative to the
/// peak magnitude of the source column. Zero samples map to `floor_db`.
std::vector<double> received_power_line(const ComplexFieldSlice& slice, const TunnelEnvironment& env,
                                        double height_m, double floor_db = kDefaultFloorDb);

std::size_t nearest_row(const TunnelEnvironment& env, double height_m);

/// Trapezoidal sum of |u|^2 dx over one column: the norm the scheme conserves
/// with reflecting walls and dissipates with lossy ones.
double column_energy(std::span<const complex> column, double delta_height_m);

}  // namespace tw::pwe
