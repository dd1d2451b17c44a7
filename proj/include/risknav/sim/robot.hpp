// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <algorithm>
#include <cmath>

#include "risknav/core/errors.hpp"
#include "risknav/core/geometry.hpp"
#include "risknav/plan/teb.hpp"

namespace risknav {

// ============================================================================
// Robot physics
//
// Differential drive: commanded velocities are reached subject to linear and
// angular acceleration clamps, then the pose follows the exact unicycle arc
// at those velocities over the tick. With a zero angular rate the update is
// a straight advance of v * dt; with zero linear speed it is a turn in place
// of omega * dt.
// ============================================================================

struct RobotConfig {
  double a_max = 2.0;      // m/s^2, linear acceleration clamp
  double alpha_max = 6.0;  // rad/s^2, angular acceleration clamp
  double radius = 0.35;    // m, footprint disc

  void validate() const {
    if (!(a_max > 0.0) || !(alpha_max > 0.0) || !(radius > 0.0))
      throw ConfigError("robot: acceleration limits and radius must be positive");
  }
};

inline RobotState step_robot(const RobotState& s, const Command& cmd, double dt,
                             const RobotConfig& cfg = {}) {
  cfg.validate();
  if (!(dt > 0.0)) throw DataError("robot: step needs a positive dt");

  RobotState out = s;
  out.speed = s.speed + std::clamp(cmd.v - s.speed, -cfg.a_max * dt, cfg.a_max * dt);
  out.omega = s.omega + std::clamp(cmd.omega - s.omega, -cfg.alpha_max * dt, cfg.alpha_max * dt);

  if (std::abs(out.omega) < 1e-9) {
    out.position += out.speed * dt * Vec2(std::cos(s.heading), std::sin(s.heading));
    out.heading = s.heading;
  } else {
    const double h1 = s.heading + out.omega * dt;
    const double r = out.speed / out.omega;
    out.position += Vec2(r * (std::sin(h1) - std::sin(s.heading)),
                         -r * (std::cos(h1) - std::cos(s.heading)));
    out.heading = wrap_angle(h1);
  }
  out.stamp = s.stamp + dt;
  return out;
}

}  // namespace risknav
