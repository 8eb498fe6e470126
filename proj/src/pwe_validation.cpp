#include "tunnelwave/pwe_validation.hpp"

#include <chrono>
#include <cmath>

#include <json.hpp>

namespace tw::pwe::validation {

namespace {

constexpr double kFreeSpaceLength = 500.0;
constexpr double kFreeSpaceHeight = 200.0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double diff_norm(std::span<const complex> a, std::span<const complex> b, std::size_t stride_b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::norm(a[i] - b[i * stride_b]);
  return std::sqrt(s);
}

std::vector<complex> final_column(const TunnelEnvironment& env) {
  const auto slice = solve(env, default_source(env));
  const auto col = slice.column(slice.n_range - 1);
  return {col.begin(), col.end()};
}

}  // namespace

complex paraxial_gaussian_beam(double offset_m, double range_m, double k0, double waist_m, complex amplitude) {
  const complex j{0.0, 1.0};
  const complex q0 = j * k0 * waist_m * waist_m;
  const complex q = range_m + q0;
  return amplitude * std::sqrt(q0 / q) * std::exp(-j * k0 * offset_m * offset_m / (2.0 * q));
}

TunnelEnvironment free_space_environment(double delta_range_m, double delta_height_m) {
  TunnelEnvironment env;
  env.length_m = kFreeSpaceLength;
  env.height_m = kFreeSpaceHeight;
  env.delta_range_m = delta_range_m;
  env.delta_height_m = delta_height_m;
  env.frequency_hz = 900e6;
  env.eps_r = 1.0;
  env.sigma_s_per_m = 0.0;
  return env;
}

BeamReport free_space_beam() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto env = free_space_environment();
  const auto src = default_source(env);
  const auto slice = solve(env, src);

  const double z = static_cast<double>(slice.n_range - 1) * env.delta_range_m;
  double err = 0.0;
  double ref = 0.0;
  for (std::size_t ix = 0; ix < slice.n_height; ++ix) {
    const double x = static_cast<double>(ix) * env.delta_height_m - src.height_m;
    const complex exact = paraxial_gaussian_beam(x, z, env.k0(), src.beam_waist_m, src.amplitude);
    err += std::norm(slice.at(slice.n_range - 1, ix) - exact);
    ref += std::norm(exact);
  }
  BeamReport r;
  r.rel_l2_error = std::sqrt(err / ref);
  r.seconds = seconds_since(t0);
  r.passed = r.rel_l2_error < 0.01;
  return r;
}

ConvergenceReport self_convergence() {
  const auto t0 = std::chrono::steady_clock::now();
  ConvergenceReport r;

  // Range step refinement at fixed dx; identical grids, compare whole columns.
  {
    const auto coarse = final_column(free_space_environment(4.0, 0.1));
    const auto mid = final_column(free_space_environment(2.0, 0.1));
    const auto fine = final_column(free_space_environment(1.0, 0.1));
    r.order_range = std::log2(diff_norm(coarse, mid, 1) / diff_norm(mid, fine, 1));
  }
  // Height step refinement at fixed dz; compare on the coarse grid points.
  {
    const auto coarse = final_column(free_space_environment(0.5, 0.4));
    const auto mid = final_column(free_space_environment(0.5, 0.2));
    const auto fine = final_column(free_space_environment(0.5, 0.1));
    std::vector<complex> mid_on_coarse(coarse.size());
    for (std::size_t i = 0; i < coarse.size(); ++i) mid_on_coarse[i] = mid[2 * i];
    const double e1 = diff_norm(coarse, mid, 2);
    const double e2 = diff_norm(mid_on_coarse, fine, 4);
    r.order_height = std::log2(e1 / e2);
  }
  r.seconds = seconds_since(t0);
  auto in_band = [](double p) { return p >= 1.7 && p <= 2.3; };
  r.passed = in_band(r.order_range) && in_band(r.order_height);
  return r;
}

EnergyReport energy_conservation() {
  // A beam launched close to the floor so that it reflects repeatedly.
  TunnelEnvironment env;
  env.length_m = 200.0;
  env.height_m = 20.0;
  env.delta_range_m = 0.5;
  env.delta_height_m = 0.05;
  env.frequency_hz = 900e6;
  env.eps_r = 5.0;
  SourceSpec src = default_source(env);
  src.height_m = 4.0;
  src.beam_waist_m = 0.5;

  EnergyReport r;
  auto march = [&](const TunnelEnvironment& e, auto&& per_step) {
    const CrankNicolsonStepper stepper(e);
    auto cur = init_gaussian_source(e, src);
    std::vector<complex> next(cur.size());
    const std::size_t steps = e.n_range() - 1;
    for (std::size_t s = 0; s < steps; ++s) {
      stepper.step(cur, next);
      per_step(column_energy(cur, e.delta_height_m), column_energy(next, e.delta_height_m));
      cur.swap(next);
    }
    return steps;
  };

  TunnelEnvironment reflecting = env;
  reflecting.sigma_s_per_m = 0.0;
  reflecting.closure = WallClosure::neumann;
  r.steps = march(reflecting, [&](double before, double after) {
    r.max_rel_drift_reflecting = std::max(r.max_rel_drift_reflecting, std::abs(after - before) / before);
  });

  TunnelEnvironment lossy = env;
  lossy.sigma_s_per_m = 0.01;
  march(lossy, [&](double before, double after) {
    r.max_rel_increase_lossy = std::max(r.max_rel_increase_lossy, (after - before) / before);
  });

  // Lossy walls may only remove energy; allow round-off at the 1e-12 level.
  r.passed = r.max_rel_drift_reflecting <= 1e-10 && r.max_rel_increase_lossy <= 1e-12;
  return r;
}

std::string to_json(const BeamReport& r) {
  nlohmann::json j{{"case", "free-space-beam"},
                   {"rel_l2_error", r.rel_l2_error},
                   {"tolerance", 0.01},
                   {"seconds", r.seconds},
                   {"passed", r.passed}};
  return j.dump(2);
}

std::string to_json(const ConvergenceReport& r) {
  nlohmann::json j{{"case", "convergence"},
                   {"order_range", r.order_range},
                   {"order_height", r.order_height},
                   {"band", {1.7, 2.3}},
                   {"seconds", r.seconds},
                   {"passed", r.passed}};
  return j.dump(2);
}

std::string to_json(const EnergyReport& r) {
  nlohmann::json j{{"case", "energy"},
                   {"max_rel_drift_reflecting", r.max_rel_drift_reflecting},
                   {"max_rel_increase_lossy", r.max_rel_increase_lossy},
                   {"steps", r.steps},
                   {"tolerance", 1e-10},
                   {"passed", r.passed}};
  return j.dump(2);
}

}  // namespace tw::pwe::validation
