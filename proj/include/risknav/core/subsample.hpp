// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "risknav/core/errors.hpp"
#include "risknav/core/geometry.hpp"
#include "risknav/core/voxel.hpp"

namespace risknav {

/// One output point per occupied voxel of edge dl: the barycenter of the
/// voxel's points with their mean stamp and the ring of the first point
/// encountered in input order. Output is sorted by voxel key (x, then y,
/// then z) so the result is independent of input order up to the
/// first-encountered ring. Throws DataError on dl <= 0 or non-finite input.
inline std::vector<TimedPoint> grid_subsample(std::span<const TimedPoint> points, double dl) {
  if (!(dl > 0.0)) throw DataError("grid_subsample: voxel size must be positive");

  struct Accum {
    Vec3 sum = Vec3::Zero();
    double stamp_sum = 0.0;
    std::size_t count = 0;
    int ring = 0;
  };
  std::unordered_map<VoxelKey, Accum, VoxelKeyHash> cells;
  cells.reserve(points.size());
  const double inv_dl = 1.0 / dl;

  for (const TimedPoint& p : points) {
    if (!p.position.allFinite() || !std::isfinite(p.stamp))
      throw DataError("grid_subsample: non-finite point");
    Accum& a = cells[voxel_key_of(p.position, inv_dl)];
    if (a.count == 0) a.ring = p.ring;
    a.sum += p.position;
    a.stamp_sum += p.stamp;
    ++a.count;
  }

  std::vector<std::pair<VoxelKey, Accum>> ordered(cells.begin(), cells.end());
  std::sort(ordered.begin(), ordered.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<TimedPoint> out;
  out.reserve(ordered.size());
  for (const auto& [key, a] : ordered) {
    TimedPoint p;
    const double inv_n = 1.0 / static_cast<double>(a.count);
    p.position = a.sum * inv_n;
    p.stamp = a.stamp_sum * inv_n;
    p.ring = a.ring;
    out.push_back(p);
  }
  return out;
}

/// Integer cell coordinate of a square grid in the xy plane.
struct Cell2D {
  std::int32_t x = 0;
  std::int32_t y = 0;

  friend bool operator==(const Cell2D&, const Cell2D&) = default;

  friend bool operator<(const Cell2D& a, const Cell2D& b) {
    return a.x != b.x ? a.x < b.x : a.y < b.y;
  }
};

struct Cell2DHash {
  std::size_t operator()(const Cell2D& k) const {
    const std::uint64_t h = static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.x)) * 73856093ULL ^
                            static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.y)) * 19349669ULL;
    return static_cast<std::size_t>(h * 0x9E3779B97F4A7C15ULL >> 16);
  }
};

inline Cell2D cell2d_of(const Vec2& p, double inv_dl) {
  return Cell2D{static_cast<std::int32_t>(std::floor(p.x() * inv_dl)),
                static_cast<std::int32_t>(std::floor(p.y() * inv_dl))};
}

/// 2D counterpart on (x, y) cells; stamps and rings are not tracked.
inline std::vector<Vec2> grid_subsample_2d(std::span<const Vec2> points, double dl) {
  if (!(dl > 0.0)) throw DataError("grid_subsample_2d: cell size must be positive");

  struct Accum {
    Vec2 sum = Vec2::Zero();
    std::size_t count = 0;
  };

  std::unordered_map<Cell2D, Accum, Cell2DHash> cells;
  cells.reserve(points.size());
  const double inv_dl = 1.0 / dl;
  for (const Vec2& p : points) {
    if (!p.allFinite()) throw DataError("grid_subsample_2d: non-finite point");
    Accum& a = cells[cell2d_of(p, inv_dl)];
    a.sum += p;
    ++a.count;
  }

  std::vector<std::pair<Cell2D, Accum>> ordered(cells.begin(), cells.end());
  std::sort(ordered.begin(), ordered.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<Vec2> out;
  out.reserve(ordered.size());
  for (const auto& [key, a] : ordered) out.push_back(a.sum / static_cast<double>(a.count));
  return out;
}

}  // namespace risknav
