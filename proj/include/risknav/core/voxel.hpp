// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>

#include "risknav/core/geometry.hpp"

namespace risknav {

/// Integer cell coordinate of a cubic grid. Cell k spans [k*dl, (k+1)*dl).
struct VoxelKey {
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int32_t z = 0;

  friend bool operator==(const VoxelKey&, const VoxelKey&) = default;

  friend bool operator<(const VoxelKey& a, const VoxelKey& b) {
    if (a.x != b.x) return a.x < b.x;
    if (a.y != b.y) return a.y < b.y;
    return a.z < b.z;
  }
};

inline VoxelKey voxel_key_of(const Vec3& p, double inv_dl) {
  return VoxelKey{static_cast<std::int32_t>(std::floor(p.x() * inv_dl)),
                  static_cast<std::int32_t>(std::floor(p.y() * inv_dl)),
                  static_cast<std::int32_t>(std::floor(p.z() * inv_dl))};
}

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    // Large-prime mix; collisions only cost a bucket walk.
    const std::uint64_t h = static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.x)) * 73856093ULL ^
                            static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.y)) * 19349669ULL ^
                            static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.z)) * 83492791ULL;
    return static_cast<std::size_t>(h * 0x9E3779B97F4A7C15ULL >> 16);
  }
};

}  // namespace risknav
