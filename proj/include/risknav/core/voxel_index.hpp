// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "risknav/core/geometry.hpp"
#include "risknav/core/voxel.hpp"

namespace risknav {

/// Hash-bucketed point index for exact radius and nearest queries. Buckets
/// are cubic cells of the given edge; queries expand cells outward in
/// Chebyshev shells and stop once no farther shell can improve the result,
/// so all answers are exact (no approximation).
class PointIndex {
 public:
  explicit PointIndex(double cell) : cell_(cell), inv_cell_(1.0 / cell) {}

  PointIndex(double cell, std::span<const Vec3> points) : PointIndex(cell) {
    points_.assign(points.begin(), points.end());
    for (std::size_t i = 0; i < points_.size(); ++i)
      cells_[voxel_key_of(points_[i], inv_cell_)].push_back(static_cast<int>(i));
  }

  void insert(const Vec3& p) {
    const int idx = static_cast<int>(points_.size());
    points_.push_back(p);
    cells_[voxel_key_of(p, inv_cell_)].push_back(idx);
  }

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Vec3& point(int i) const { return points_[static_cast<std::size_t>(i)]; }

  /// Index and distance of the nearest point within r_max, or nullopt.
  std::optional<std::pair<int, double>> nearest(const Vec3& query, double r_max) const {
    if (points_.empty()) return std::nullopt;
    const VoxelKey base = voxel_key_of(query, inv_cell_);
    const int max_shell = static_cast<int>(std::ceil(r_max * inv_cell_)) + 1;
    int best = -1;
    double best_d2 = r_max * r_max;
    bool found = false;
    for (int s = 0; s <= max_shell; ++s) {
      // Every cell in shell s is at least (s-1)*cell away from the query.
      if (found) {
        const double bound = static_cast<double>(s - 1) * cell_;
        if (bound > 0.0 && bound * bound > best_d2) break;
      }
      visit_shell(base, s, [&](const VoxelKey& k) {
        const auto it = cells_.find(k);
        if (it == cells_.end()) return;
        for (const int i : it->second) {
          const double d2 = (points_[static_cast<std::size_t>(i)] - query).squaredNorm();
          if (d2 < best_d2 || (!found && d2 <= best_d2)) {
            best_d2 = d2;
            best = i;
            found = true;
          }
        }
      });
    }
    if (!found) return std::nullopt;
    return std::make_pair(best, std::sqrt(best_d2));
  }

  /// True when any point lies within r of the query (boundary inclusive).
  bool any_within(const Vec3& query, double r) const {
    if (points_.empty()) return false;
    const double r2 = r * r;
    const VoxelKey base = voxel_key_of(query, inv_cell_);
    const int span = static_cast<int>(std::ceil(r * inv_cell_));
    for (int dx = -span; dx <= span; ++dx)
      for (int dy = -span; dy <= span; ++dy)
        for (int dz = -span; dz <= span; ++dz) {
          const auto it = cells_.find(VoxelKey{base.x + dx, base.y + dy, base.z + dz});
          if (it == cells_.end()) continue;
          for (const int i : it->second)
            if ((points_[static_cast<std::size_t>(i)] - query).squaredNorm() <= r2) return true;
        }
    return false;
  }

  /// Calls fn(index, distance_squared) for every point within r (inclusive).
  template <typename Fn>
  void for_each_within(const Vec3& query, double r, Fn&& fn) const {
    if (points_.empty()) return;
    const double r2 = r * r;
    const VoxelKey base = voxel_key_of(query, inv_cell_);
    const int span = static_cast<int>(std::ceil(r * inv_cell_));
    for (int dx = -span; dx <= span; ++dx)
      for (int dy = -span; dy <= span; ++dy)
        for (int dz = -span; dz <= span; ++dz) {
          const auto it = cells_.find(VoxelKey{base.x + dx, base.y + dy, base.z + dz});
          if (it == cells_.end()) continue;
          for (const int i : it->second) {
            const double d2 = (points_[static_cast<std::size_t>(i)] - query).squaredNorm();
            if (d2 <= r2) fn(i, d2);
          }
        }
  }

 private:
  template <typename Fn>
  static void visit_shell(const VoxelKey& base, int s, Fn&& fn) {
    if (s == 0) {
      fn(base);
      return;
    }
    for (int dx = -s; dx <= s; ++dx)
      for (int dy = -s; dy <= s; ++dy)
        for (int dz = -s; dz <= s; ++dz) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != s) continue;
          fn(VoxelKey{base.x + dx, base.y + dy, base.z + dz});
        }
  }

  double cell_;
  double inv_cell_;
  std::vector<Vec3> points_;
  std::unordered_map<VoxelKey, std::vector<int>, VoxelKeyHash> cells_;
};

}  // namespace risknav
