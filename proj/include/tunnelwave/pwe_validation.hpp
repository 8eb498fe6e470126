#pragma once

// Self-checks of the marching solver that the CLI exposes as `validate-pwe`.

#include <string>

#include "tunnelwave/pwe.hpp"

namespace tw::pwe::validation {

/// Closed-form paraxial beam for the aperture A exp(-x^2 / (2 w^2)):
/// u = A sqrt(q0 / q) exp(-j k0 x^2 / (2 q)), q = z + j k0 w^2.
complex paraxial_gaussian_beam(double offset_m, double range_m, double k0, double waist_m, complex amplitude);

/// Wide free-space domain (eps_r = 1, sigma = 0) so the beam never reaches the walls.
TunnelEnvironment free_space_environment(double delta_range_m = 0.5, double delta_height_m = 0.1);

struct BeamReport {
  double rel_l2_error = 0.0;  // final column, relative to the analytic beam
  double seconds = 0.0;
  bool passed = false;
};

struct ConvergenceReport {
  double order_range = 0.0;
  double order_height = 0.0;
  double seconds = 0.0;
  bool passed = false;
};

struct EnergyReport {
  double max_rel_drift_reflecting = 0.0;  // largest per-step relative change, Neumann walls
  double max_rel_increase_lossy = 0.0;    // largest per-step relative increase, impedance walls
  std::size_t steps = 0;
  bool passed = false;
};

BeamReport free_space_beam();
ConvergenceReport self_convergence();
EnergyReport energy_conservation();

// JSON renderings for the CLI report files.
std::string to_json(const BeamReport& r);
std::string to_json(const ConvergenceReport& r);
std::string to_json(const EnergyReport& r);

}  // namespace tw::pwe::validation
