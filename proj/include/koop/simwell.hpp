#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "koop/dataset.hpp"
#include "koop/error.hpp"
#include "koop/rng.hpp"

namespace koop {

/// Particle in the double-well potential U(x) = (1 - x^2)^2.
struct WellState {
  double x = 0.0;
  double v = 0.0;

  friend bool operator==(const WellState&, const WellState&) = default;
};

inline constexpr double kWellDt = 0.1;
inline constexpr int kWellSubsteps = 10;

/// -dU/dx = 4x(1 - x^2).
inline double well_force(double x) { return 4.0 * x * (1.0 - x * x); }

inline double well_energy(const WellState& s) {
  const double u = 1.0 - s.x * s.x;
  return 0.5 * s.v * s.v + u * u;
}

/// One timestep: 10 damped semi-implicit Euler substeps with the control
/// held constant. Velocity is updated (and damped) before position.
inline WellState well_step(WellState s, double control) {
  const double h = kWellDt / kWellSubsteps;
  const double damping = std::pow(0.99, 1.0 / kWellSubsteps);
  for (int i = 0; i < kWellSubsteps; ++i) {
    s.v = (s.v + h * (well_force(s.x) + control)) * damping;
    s.x = s.x + h * s.v;
  }
  if (!std::isfinite(s.x) || !std::isfinite(s.v))
    throw NumericError("well_step produced a non-finite state");
  return s;
}

struct WellGenOptions {
  std::uint64_t n_steps = 100000;
  std::uint64_t seed = 42;
  double control_lo = -5.0;
  double control_hi = 5.0;
  /// Default: x0 ~ Uniform(-1.5, 1.5), v0 = 0, drawn before any control.
  std::optional<WellState> init;
};

/// Random-control trajectory. Record t holds the state before control t is
/// applied; the state is integrated in 64-bit and stored as 32-bit.
inline TrajectoryDataset gen_dataset(const WellGenOptions& opt) {
  if (opt.n_steps < 1) throw ConfigError("gen_dataset: n_steps must be >= 1");
  if (!(opt.control_lo <= opt.control_hi)) throw ConfigError("gen_dataset: control range is empty");
  Xoshiro256 rng(opt.seed);
  WellState s = opt.init ? *opt.init : WellState{rng.uniform(-1.5, 1.5), 0.0};
  TrajectoryDataset ds;
  ds.dt = kWellDt;
  ds.obs = Tensor<float>({opt.n_steps, 2});
  ds.controls = Tensor<float>({opt.n_steps, 1});
  for (std::uint64_t t = 0; t < opt.n_steps; ++t) {
    const double c = rng.uniform(opt.control_lo, opt.control_hi);
    ds.obs.at(t, 0) = static_cast<float>(s.x);
    ds.obs.at(t, 1) = static_cast<float>(s.v);
    ds.controls.at(t, 0) = static_cast<float>(c);
    s = well_step(s, c);
    if (std::abs(s.x) >= 100.0)
      throw NumericError("gen_dataset: |x| exceeded 100 at step " + std::to_string(t));
  }
  return ds;
}

}  // namespace koop
