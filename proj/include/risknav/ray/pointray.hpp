// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <unordered_set>
#include <vector>

#include "risknav/core/errors.hpp"
#include "risknav/core/geometry.hpp"
#include "risknav/map/map_cloud.hpp"

namespace risknav {

struct PointRayConfig {
  double d_theta = deg2rad(0.33);        // azimuth pixel size of the frustum grid
  double d_phi = deg2rad(0.5);           // elevation pixel size
  int n_slices = 16;                     // azimuth slices per frame
  double alpha_max = 5.0 * kPi / 12.0;   // widest incidence still carved as free
  double beta_min = kPi / 3.0;           // vertical-normal override threshold
  std::uint32_t n_min = 10;              // observations needed for a valid p_i
};

/// Per-frame integration tally. skipped_no_normal counts map points that
/// passed the range test but carry no usable normal for the incidence test.
struct RayStats {
  int occupied_voxels = 0;
  int free_updates = 0;
  int skipped_no_normal = 0;
};

/// Range image over a window of the spherical pixel grid: each pixel keeps
/// the smallest point range in its direction, +inf where nothing was
/// measured. The azimuth window is [col_begin, col_end) out of n_cols total
/// columns covering the full circle; a full-circle window wraps when
/// filling. Elevation rows span the points' rows plus one pixel of slack.
class FrustumGrid {
 public:
  static constexpr double kInf = std::numeric_limits<double>::infinity();

  FrustumGrid(double d_theta, double d_phi, int col_begin, int col_end)
      : d_theta_(d_theta),
        d_phi_(d_phi),
        n_cols_(static_cast<int>(std::ceil(2.0 * kPi / d_theta))),
        col_begin_(col_begin),
        col_end_(col_end) {}

  int n_cols() const { return n_cols_; }
  int col_begin() const { return col_begin_; }
  int col_end() const { return col_end_; }
  bool empty() const { return rows_ == 0; }

  int col_of(double theta) const {
    const int c = static_cast<int>(std::floor((theta + kPi) / d_theta_));
    return std::clamp(c, 0, n_cols_ - 1);
  }
  int row_of(double phi) const {
    return static_cast<int>(std::floor((phi + kPi / 2.0) / d_phi_));
  }

  /// Minimum measured range of the pixel holding (theta, phi); +inf outside
  /// the grid window or where no point was measured.
  double range_at(double theta, double phi) const { return at(col_of(theta), row_of(phi)); }

  double at(int col, int row) const {
    if (rows_ == 0 || row < row_begin_ || row >= row_begin_ + rows_) return kInf;
    if (col < col_begin_ || col >= col_end_) return kInf;
    return rho_[static_cast<std::size_t>(row - row_begin_) * width() + (col - col_begin_)];
  }

  /// Rasterizes the points (sensor coordinates) into min-range pixels, then
  /// fills empty pixels of each partially measured row from their nearest
  /// measured column (ties keep the smaller range, which carves less).
  /// Rows with no measurement stay +inf.
  void build(std::span<const TimedPoint> points) {
    rows_ = 0;
    rho_.clear();
    if (points.empty()) return;

    int row_min = std::numeric_limits<int>::max();
    int row_max = std::numeric_limits<int>::min();
    for (const TimedPoint& p : points) {
      const int r = row_of(std::asin(std::clamp(
          p.position.z() / std::max(p.position.norm(), 1e-12), -1.0, 1.0)));
      row_min = std::min(row_min, r);
      row_max = std::max(row_max, r);
    }
    row_begin_ = row_min - 1;
    rows_ = row_max - row_min + 3;
    rho_.assign(static_cast<std::size_t>(rows_) * width(), kInf);

    for (const TimedPoint& p : points) {
      const SphericalCoord s = to_spherical(p.position);
      const int col = col_of(s.theta);
      const int row = row_of(s.phi);
      if (col < col_begin_ || col >= col_end_) continue;
      double& cell =
          rho_[static_cast<std::size_t>(row - row_begin_) * width() + (col - col_begin_)];
      cell = std::min(cell, s.rho);
    }

    for (int r = 0; r < rows_; ++r) fill_row(r);
  }

 private:
  std::size_t width() const { return static_cast<std::size_t>(col_end_ - col_begin_); }

  /// Nearest-neighbor fill along one row; wraps when the window is the full
  /// circle (the sensor sweep is periodic in azimuth).
  void fill_row(int r) {
    const int w = col_end_ - col_begin_;
    double* row = rho_.data() + static_cast<std::size_t>(r) * width();
    std::vector<int> measured;
    for (int c = 0; c < w; ++c)
      if (std::isfinite(row[c])) measured.push_back(c);
    if (measured.empty() || static_cast<int>(measured.size()) == w) return;

    const bool wrap = (col_end_ - col_begin_) == n_cols_;
    for (int c = 0; c < w; ++c) {
      if (std::isfinite(row[c])) continue;
      // Nearest measured column; candidates found by binary search, plus the
      // wrapped extremes when the row is periodic.
      const auto it = std::lower_bound(measured.begin(), measured.end(), c);
      int best_d = std::numeric_limits<int>::max();
      double best_rho = kInf;
      const auto consider = [&](int m) {
        int d = std::abs(m - c);
        if (wrap) d = std::min(d, w - d);
        if (d < best_d || (d == best_d && row[m] < best_rho)) {
          best_d = d;
          best_rho = row[m];
        }
      };
      if (it != measured.end()) consider(*it);
      if (it != measured.begin()) consider(*(it - 1));
      if (wrap) {
        consider(measured.front());
        consider(measured.back());
      }
      row[c] = best_rho;
    }
  }

  double d_theta_;
  double d_phi_;
  int n_cols_;
  int col_begin_;
  int col_end_;
  int row_begin_ = 0;
  int rows_ = 0;
  std::vector<double> rho_;
};

/// Full-circle range image of one set of sensor-frame points.
inline FrustumGrid build_frustum_grid(std::span<const TimedPoint> points,
                                      const PointRayConfig& cfg = {}) {
  FrustumGrid grid(cfg.d_theta, cfg.d_phi, 0,
                   static_cast<int>(std::ceil(2.0 * kPi / cfg.d_theta)));
  grid.build(points);
  return grid;
}

/// Folds the ray/normal angle into [0, pi/2]; normal orientation is a
/// convention, incidence is not.
inline double incidence_angle(const Vec3& ray_dir, const Vec3& normal) {
  return std::acos(std::clamp(std::abs(ray_dir.dot(normal)), 0.0, 1.0));
}

/// Ray-traces one aligned frame into the map counters: voxels holding frame
/// points gain a seen and an occupied count, and map points measurably in
/// front of the frame surface gain a seen count only. The frame is cut into
/// azimuth slices (whole pixel columns, so the slices partition the grid
/// exactly) and each slice carves with the pose interpolated at its median
/// stamp, which bounds the error from intra-frame motion. A far-side map
/// point is carved only when it is nearer than the measured range by more
/// than the frustum half-size at that range, and only under an incidence
/// angle below alpha_max or with a near-vertical normal (flat furniture is
/// seen almost edge-on and would otherwise never be carved). Each map point
/// counts at most once per frame.
inline RayStats integrate_frame(MapCloud& map, const LidarFrame& frame, const Pose& pose0,
                                const Pose& pose1, const PointRayConfig& cfg = {}) {
  frame.validate();
  if (pose0.stamp > frame.t0 || pose1.stamp < frame.t1)
    throw DataError("pointray: poses do not cover the frame interval");

  RayStats stats;
  const std::size_t n_map = map.size();

  // Occupied pass: one count per distinct voxel the frame touches.
  std::unordered_set<int> occupied;
  for (const TimedPoint& p : frame.points) {
    const Vec3 w = interp_pose(pose0, pose1, p.stamp).apply(p.position);
    const int idx = map.find_voxel(w);
    if (idx >= 0) occupied.insert(idx);
  }
  for (const int idx : occupied) map.add_observation(static_cast<std::size_t>(idx), true);
  stats.occupied_voxels = static_cast<int>(occupied.size());

  // Azimuth slices as contiguous pixel-column blocks.
  const int n_cols = static_cast<int>(std::ceil(2.0 * kPi / cfg.d_theta));
  const int n_slices = std::clamp(cfg.n_slices, 1, n_cols);
  std::vector<std::vector<TimedPoint>> slice_points(static_cast<std::size_t>(n_slices));
  const auto col_begin_of = [&](int s) {
    return static_cast<int>((static_cast<std::int64_t>(s) * n_cols) / n_slices);
  };
  // Must agree exactly with the block boundaries or boundary columns land in
  // a slice whose grid window excludes them.
  const auto slice_of_col = [&](int col) {
    int s = std::min(static_cast<int>((static_cast<std::int64_t>(col) * n_slices) / n_cols),
                     n_slices - 1);
    while (s + 1 < n_slices && col >= col_begin_of(s + 1)) ++s;
    while (s > 0 && col < col_begin_of(s)) --s;
    return s;
  };
  FrustumGrid layout(cfg.d_theta, cfg.d_phi, 0, n_cols);
  for (const TimedPoint& p : frame.points) {
    // Same wrapped azimuth as the grid build, or points on the seam would be
    // routed to a slice whose window excludes their column.
    const double theta = to_spherical(p.position).theta;
    slice_points[static_cast<std::size_t>(slice_of_col(layout.col_of(theta)))].push_back(p);
  }

  std::unordered_set<int> carved;
  const double cos_beta = std::cos(cfg.beta_min);
  for (int s = 0; s < n_slices; ++s) {
    const auto& pts = slice_points[static_cast<std::size_t>(s)];
    if (pts.empty()) continue;

    const int col_begin = col_begin_of(s);
    const int col_end = s + 1 < n_slices ? col_begin_of(s + 1) : n_cols;
    FrustumGrid grid(cfg.d_theta, cfg.d_phi, col_begin, col_end);
    grid.build(pts);

    std::vector<double> stamps;
    stamps.reserve(pts.size());
    for (const TimedPoint& p : pts) stamps.push_back(p.stamp);
    auto mid = stamps.begin() + static_cast<std::ptrdiff_t>(stamps.size() / 2);
    std::nth_element(stamps.begin(), mid, stamps.end());
    const Pose pose_med = interp_pose(pose0, pose1, *mid);
    const Pose sensor_from_world = pose_med.inverse();

    for (std::size_t i = 0; i < n_map; ++i) {
      const int idx = static_cast<int>(i);
      if (occupied.count(idx) != 0 || carved.count(idx) != 0) continue;
      const MapPoint& mp = map.point(i);
      const SphericalCoord sc = to_spherical(sensor_from_world.apply(mp.position));
      if (sc.rho < 1e-9) continue;  // at the origin no ray direction exists
      const int col = grid.col_of(sc.theta);
      if (col < col_begin || col >= col_end) continue;
      const double rho0 = grid.at(col, grid.row_of(sc.phi));
      if (!std::isfinite(rho0)) continue;

      const double margin = rho0 * std::max(cfg.d_theta, cfg.d_phi) / 2.0;
      if (!(sc.rho < rho0 - margin)) continue;

      if (!mp.normal_valid()) {
        ++stats.skipped_no_normal;
        continue;
      }
      const Vec3 ray_dir = (mp.position - pose_med.t).normalized();
      const bool vertical = std::abs(mp.normal.z()) > cos_beta;
      if (!vertical && incidence_angle(ray_dir, mp.normal) >= cfg.alpha_max) continue;
      carved.insert(idx);
    }
  }
  for (const int idx : carved) map.add_observation(static_cast<std::size_t>(idx), false);
  stats.free_updates = static_cast<int>(carved.size());
  return stats;
}

/// Occupancy probability per map point: the occupied fraction of its
/// observations once there are at least n_min of them, 0.5 (unknown) before
/// that.
inline std::vector<double> finalize_probabilities(const MapCloud& map,
                                                  const PointRayConfig& cfg = {}) {
  std::vector<double> p(map.size(), 0.5);
  for (std::size_t i = 0; i < map.size(); ++i) {
    const MapPoint& mp = map.point(i);
    if (mp.seen_count >= cfg.n_min)
      p[i] = static_cast<double>(mp.occupied_count) / static_cast<double>(mp.seen_count);
  }
  return p;
}

}  // namespace risknav
