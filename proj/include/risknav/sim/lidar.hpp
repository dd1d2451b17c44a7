// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "risknav/core/errors.hpp"
#include "risknav/core/geometry.hpp"
#include "risknav/label/labels.hpp"
#include "risknav/sim/flow.hpp"
#include "risknav/sim/world.hpp"

namespace risknav {

// ============================================================================
// Lidar synthesis
//
// One revolution sweeps the azimuth through 2*pi over `period` seconds, all
// rings in lockstep, so a return's stamp is linear in its azimuth column. The
// ray origin and attitude for every column come from the sensor pose history
// interpolated at that column's stamp: a moving sensor bakes real motion
// distortion into the frame, which the mapping stack later has to undo.
// Surfaces are the ground plane z = 0, the wall panels, and one vertical
// cylinder per actor (lateral surface, no caps) placed at the actor's
// position extrapolated to the column stamp. The closest hit along each ray
// inside [min_range, max_range] wins; rays that hit nothing produce no
// return. Range noise, when enabled, perturbs each return along its ray.
// ============================================================================

struct LidarConfig {
  /// Ring elevations in radians, e.g. 32 rings uniform over [-25, +15] deg.
  std::vector<double> rings = default_rings();
  double azimuth_step = 0.33 * kPi / 180.0;  // target column spacing, radians
  double period = 0.1;                       // seconds per revolution
  double min_range = 0.1;                    // meters, closer hits are ignored
  double max_range = 30.0;                   // meters, farther hits are dropped
  double sigma = 0.0;                        // Gaussian range noise, meters

  static std::vector<double> default_rings() {
    std::vector<double> r(32);
    const double lo = -25.0 * kPi / 180.0;
    const double hi = 15.0 * kPi / 180.0;
    for (int i = 0; i < 32; ++i) r[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / 31.0;
    return r;
  }

  /// Columns per revolution; the effective step 2*pi/n_columns() divides the
  /// circle evenly.
  int n_columns() const { return static_cast<int>(std::lround(2.0 * kPi / azimuth_step)); }

  void validate() const {
    if (rings.empty()) throw ConfigError("lidar: at least one ring is required");
    for (double e : rings)
      if (!(std::abs(e) < 0.5 * kPi - 1e-6))
        throw ConfigError("lidar: ring elevation must lie strictly between -90 and 90 deg");
    if (!(azimuth_step > 0.0) || n_columns() < 1)
      throw ConfigError("lidar: azimuth step must be positive and below 2*pi");
    if (!(period > 0.0)) throw ConfigError("lidar: period must be positive");
    if (!(min_range >= 0.0) || !(max_range > min_range))
      throw ConfigError("lidar: need 0 <= min_range < max_range");
    if (!(sigma >= 0.0)) throw ConfigError("lidar: noise sigma must be nonnegative");
  }
};

/// One synthesized revolution: the sensor-frame returns plus the ground truth
/// the simulator knows about each of them.
struct SimScan {
  LidarFrame frame;                   // returns in the instantaneous sensor frame
  std::vector<Vec3> world;            // the same returns in world coordinates
  std::vector<SemanticLabel> labels;  // true surface class per return
  std::vector<int> actor;             // index of the actor hit, -1 otherwise
};

namespace detail {

/// Pose at `stamp` from a history sorted by stamp: linear in translation,
/// shorter-arc spherical in rotation, clamped to the first and last entries.
inline Pose pose_at(std::span<const Pose> history, double stamp) {
  if (stamp <= history.front().stamp) return history.front();
  if (stamp >= history.back().stamp) return history.back();
  std::size_t i = 1;
  while (history[i].stamp < stamp) ++i;
  const Pose& p0 = history[i - 1];
  const Pose& p1 = history[i];
  const double u = (stamp - p0.stamp) / (p1.stamp - p0.stamp);
  Pose r;
  r.q = slerp_quat(p0.q, p1.q, u);
  r.t = (1.0 - u) * p0.t + u * p1.t;
  r.stamp = stamp;
  return r;
}

/// Standard normal from two uniform draws (Box-Muller, cosine branch). Both
/// draws are consumed every call so the stream stays reproducible.
inline double standard_normal(std::mt19937_64& rng) {
  const double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * kPi * u2);
}

/// Range to the ground plane z = 0, or nothing.
inline std::optional<double> ray_ground(const Vec3& o, const Vec3& d) {
  if (d.z() >= -1e-12 || o.z() <= 0.0) return std::nullopt;
  return -o.z() / d.z();
}

/// Range to a vertical panel, or nothing.
inline std::optional<double> ray_wall(const Vec3& o, const Vec3& d, const Wall& w) {
  const Vec2 oxy = o.head<2>();
  const Vec2 dxy = d.head<2>();
  const Vec2 e = w.b - w.a;
  const double denom = dxy.x() * e.y() - dxy.y() * e.x();
  if (std::abs(denom) <= 1e-12) return std::nullopt;  // parallel in plan view
  const Vec2 ao = w.a - oxy;
  const double t = (ao.x() * e.y() - ao.y() * e.x()) / denom;
  const double s = (ao.x() * dxy.y() - ao.y() * dxy.x()) / denom;
  if (t <= 0.0 || s < 0.0 || s > 1.0) return std::nullopt;
  const double z = o.z() + t * d.z();
  if (z < 0.0 || z > w.height) return std::nullopt;
  return t;
}

/// Range to the lateral surface of a vertical cylinder, or nothing. Both
/// intersections are tried so a ray may enter through the open top and still
/// hit the far side.
inline std::optional<double> ray_cylinder(const Vec3& o, const Vec3& d, const Vec2& center,
                                          double radius, double height, double t_min) {
  const Vec2 oc = o.head<2>() - center;
  const Vec2 dxy = d.head<2>();
  const double a2 = dxy.squaredNorm();
  if (a2 <= 1e-12) return std::nullopt;  // near-vertical ray
  const double b = 2.0 * oc.dot(dxy);
  const double c0 = oc.squaredNorm() - radius * radius;
  const double disc = b * b - 4.0 * a2 * c0;
  if (disc < 0.0) return std::nullopt;
  const double root = std::sqrt(disc);
  for (const double t : {(-b - root) / (2.0 * a2), (-b + root) / (2.0 * a2)}) {
    if (t < t_min) continue;
    const double z = o.z() + t * d.z();
    if (z >= 0.0 && z <= height) return t;
  }
  return std::nullopt;
}

}  // namespace detail

/// Synthesizes the revolution covering [t0, t0 + period]. `poses` is the
/// sensor pose history, sorted by stamp; it should bracket the window (it is
/// clamped at the ends, so a single pose means a stationary sensor). Actor
/// discs are extrapolated linearly to each column's stamp. When cfg.sigma is
/// positive, `rng` must be non-null and supplies the range noise.
inline SimScan simulate_lidar(const World& w, std::span<const FlowActor> actors,
                              std::span<const Pose> poses, double t0, const LidarConfig& cfg = {},
                              std::mt19937_64* rng = nullptr) {
  cfg.validate();
  if (poses.empty()) throw DataError("lidar: sensor pose history is empty");
  for (std::size_t i = 1; i < poses.size(); ++i)
    if (!(poses[i - 1].stamp < poses[i].stamp))
      throw DataError("lidar: sensor pose history stamps must increase");
  if (cfg.sigma > 0.0 && rng == nullptr)
    throw DataError("lidar: range noise needs a generator");

  SimScan scan;
  scan.frame.t0 = t0;
  scan.frame.t1 = t0 + cfg.period;
  const int n_cols = cfg.n_columns();
  const int n_rings = static_cast<int>(cfg.rings.size());
  scan.frame.points.reserve(static_cast<std::size_t>(n_cols) * n_rings);

  for (int col = 0; col < n_cols; ++col) {
    const double stamp = t0 + cfg.period * col / n_cols;
    const double azimuth = 2.0 * kPi * col / n_cols;
    const Pose pose = detail::pose_at(poses, stamp);
    const Vec3 origin = pose.t;
    for (int ring = 0; ring < n_rings; ++ring) {
      const double elev = cfg.rings[static_cast<std::size_t>(ring)];
      const Vec3 dir_sensor(std::cos(elev) * std::cos(azimuth),
                            std::cos(elev) * std::sin(azimuth), std::sin(elev));
      const Vec3 dir = pose.q * dir_sensor;

      double best = cfg.max_range;
      SemanticLabel label = SemanticLabel::Ground;
      int hit_actor = -1;
      bool hit = false;

      if (const auto t = detail::ray_ground(origin, dir); t && *t >= cfg.min_range && *t < best) {
        best = *t;
        label = SemanticLabel::Ground;
        hit = true;
      }
      for (const Wall& wall : w.walls)
        if (const auto t = detail::ray_wall(origin, dir, wall);
            t && *t >= cfg.min_range && *t < best) {
          best = *t;
          label = SemanticLabel::Permanent;
          hit_actor = -1;
          hit = true;
        }
      for (std::size_t ai = 0; ai < actors.size(); ++ai) {
        const ActorState& a = actors[ai].state;
        const Vec2 center = a.position + a.velocity * (stamp - a.stamp);
        if (const auto t = detail::ray_cylinder(origin, dir, center, a.radius,
                                                actors[ai].height, cfg.min_range);
            t && *t < best) {
          best = *t;
          label = SemanticLabel::Dynamic;
          hit_actor = static_cast<int>(ai);
          hit = true;
        }
      }
      if (!hit) continue;

      double range = best;
      if (cfg.sigma > 0.0) range = std::max(cfg.min_range, range + cfg.sigma * detail::standard_normal(*rng));

      TimedPoint p;
      p.position = range * dir_sensor;
      p.stamp = stamp;
      p.ring = ring;
      scan.frame.points.push_back(p);
      scan.world.push_back(pose.apply(p.position));
      scan.labels.push_back(label);
      scan.actor.push_back(hit_actor);
    }
  }
  return scan;
}

}  // namespace risknav
