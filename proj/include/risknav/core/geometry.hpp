// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "risknav/core/errors.hpp"

namespace risknav {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

/// Wraps an angle to [-pi, pi).
inline double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0.0) a += 2.0 * kPi;
  return a - kPi;
}

/// Signed shortest rotation taking angle `from` onto angle `to`.
inline double angle_diff(double to, double from) { return wrap_angle(to - from); }

// ============================================================================
// Points and frames
// ============================================================================

/// One lidar return in sensor coordinates with its acquisition time.
struct TimedPoint {
  Vec3 position = Vec3::Zero();
  double stamp = 0.0;
  int ring = 0;
};

/// One revolution of returns. Positions are in the sensor frame until the
/// frame is undistorted and aligned; stamps lie inside [t0, t1].
struct LidarFrame {
  std::vector<TimedPoint> points;
  double t0 = 0.0;
  double t1 = 0.0;
  std::int64_t frame_id = 0;

  /// Throws DataError when the stamp window is empty or a point is
  /// non-finite or stamped outside [t0, t1].
  void validate() const {
    if (!(t0 < t1)) throw DataError("frame stamp window is empty (t0 >= t1)");
    for (const TimedPoint& p : points) {
      if (!p.position.allFinite() || !std::isfinite(p.stamp))
        throw DataError("frame contains a non-finite point");
      if (p.stamp < t0 || p.stamp > t1)
        throw DataError("frame point stamped outside [t0, t1]");
    }
  }
};

// ============================================================================
// Spherical coordinates
// ============================================================================

/// rho >= 0, theta in [-pi, pi) (azimuth about +z from +x), phi in
/// [-pi/2, pi/2] (elevation from the xy plane).
struct SphericalCoord {
  double rho = 0.0;
  double theta = 0.0;
  double phi = 0.0;
};

inline SphericalCoord to_spherical(const Vec3& p) {
  SphericalCoord s;
  s.rho = p.norm();
  if (s.rho <= 0.0) return s;  // rho 0 keeps theta/phi at 0 by convention
  s.theta = wrap_angle(std::atan2(p.y(), p.x()));
  s.phi = std::asin(std::clamp(p.z() / s.rho, -1.0, 1.0));
  return s;
}

inline Vec3 from_spherical(const SphericalCoord& s) {
  const double c = std::cos(s.phi);
  return Vec3(s.rho * c * std::cos(s.theta), s.rho * c * std::sin(s.theta),
              s.rho * std::sin(s.phi));
}

// ============================================================================
// Stamped rigid transforms
// ============================================================================

/// Rigid transform stamped with a time; maps sensor coordinates into the
/// parent (map) frame: p_map = q * p + t. The quaternion stays unit norm.
struct Pose {
  Quat q = Quat::Identity();
  Vec3 t = Vec3::Zero();
  double stamp = 0.0;

  static Pose identity(double stamp = 0.0) { return Pose{Quat::Identity(), Vec3::Zero(), stamp}; }

  Vec3 apply(const Vec3& p) const { return q * p + t; }

  Pose inverse() const {
    Pose r;
    r.q = q.conjugate();
    r.t = -(r.q * t);
    r.stamp = stamp;
    return r;
  }

  /// Composition acts on coordinates right to left: (a*b).apply(p) ==
  /// a.apply(b.apply(p)). The result keeps the left stamp.
  friend Pose operator*(const Pose& a, const Pose& b) {
    Pose r;
    r.q = (a.q * b.q).normalized();
    r.t = a.q * b.t + a.t;
    r.stamp = a.stamp;
    return r;
  }

  /// Geodesic angle to another orientation, in [0, pi].
  double angular_distance(const Pose& other) const {
    const double d = std::clamp(std::abs(q.dot(other.q)), 0.0, 1.0);
    return 2.0 * std::acos(d);
  }
};

/// Shorter-arc spherical interpolation between two unit quaternions.
inline Quat slerp_quat(const Quat& a, const Quat& b, double u) {
  Quat bb = b;
  if (a.dot(b) < 0.0) bb.coeffs() = -bb.coeffs();
  return a.slerp(u, bb).normalized();
}

/// Pose of the sensor at `stamp`, linear in translation and shorter-arc
/// spherical in rotation between the bracketing poses. No extrapolation:
/// stamps outside [p0.stamp, p1.stamp] throw std::out_of_range.
inline Pose interp_pose(const Pose& p0, const Pose& p1, double stamp) {
  constexpr double kEps = 1e-12;
  if (!(p0.stamp < p1.stamp)) throw std::out_of_range("interp_pose: pose stamps not increasing");
  if (stamp < p0.stamp - kEps || stamp > p1.stamp + kEps)
    throw std::out_of_range("interp_pose: stamp outside the pose interval");
  const double u = std::clamp((stamp - p0.stamp) / (p1.stamp - p0.stamp), 0.0, 1.0);
  Pose r;
  r.q = slerp_quat(p0.q, p1.q, u);
  r.t = (1.0 - u) * p0.t + u * p1.t;
  r.stamp = stamp;
  return r;
}

/// Maps each return into the parent frame with the pose interpolated at its
/// own stamp, removing intra-frame motion distortion. pose0 must be stamped
/// at or before every point and pose1 at or after (typically the start of
/// the previous revolution and the end of this one). Stamps and rings are
/// preserved.
inline std::vector<TimedPoint> undistort_frame(const LidarFrame& frame, const Pose& pose0,
                                               const Pose& pose1) {
  frame.validate();
  if (!(pose0.stamp < pose1.stamp))
    throw DataError("undistort_frame: pose stamps not increasing");
  if (pose0.stamp > frame.t0 || pose1.stamp < frame.t1)
    throw DataError("undistort_frame: pose interval does not cover the frame");
  std::vector<TimedPoint> out(frame.points.size());
  for (std::size_t i = 0; i < frame.points.size(); ++i) {
    const TimedPoint& p = frame.points[i];
    out[i] = p;
    out[i].position = interp_pose(pose0, pose1, p.stamp).apply(p.position);
  }
  return out;
}

}  // namespace risknav
