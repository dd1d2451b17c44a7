// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "risknav/core/errors.hpp"
#include "risknav/core/geometry.hpp"
#include "risknav/core/voxel.hpp"
#include "risknav/io/binary.hpp"

namespace risknav {

/// One stored map point: the representative of its voxel, with the surface
/// normal of the strongest observation and ray-visibility counters. seen
/// counts every observation of the voxel (hits and see-throughs), occupied
/// counts hits only, so occupied/seen estimates the permanence probability.
struct MapPoint {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::Zero();
  float score = 0.0f;
  std::uint32_t seen_count = 0;
  std::uint32_t occupied_count = 0;

  bool normal_valid() const { return normal.squaredNorm() > 0.25; }
};

/// Sparse voxel map holding one point per occupied voxel of edge dl, plus a
/// coarse bucket index for exact nearest-neighbor queries. Mutation is
/// single-writer; concurrent reads are safe.
class MapCloud {
 public:
  explicit MapCloud(double dl) : dl_(dl), inv_dl_(1.0 / dl) {
    if (!(dl > 0.0)) throw ConfigError("map voxel size must be positive");
  }

  double dl() const { return dl_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const MapPoint& point(std::size_t i) const { return points_[i]; }
  std::span<const MapPoint> points() const { return points_; }

  VoxelKey key_of(const Vec3& p) const { return voxel_key_of(p, inv_dl_); }

  /// Storage index of the voxel holding p, or -1 when unoccupied.
  int find_voxel(const Vec3& p) const {
    const auto it = voxels_.find(key_of(p));
    return it == voxels_.end() ? -1 : it->second;
  }

  bool contains_voxel(const VoxelKey& k) const { return voxels_.count(k) != 0; }

  /// Integrates one frame worth of world-aligned points. All points of one
  /// voxel count as a single observation: the voxel's counters gain one
  /// seen and one occupied, a new voxel stores the best-score candidate,
  /// and an existing voxel upgrades its normal when the candidate score is
  /// higher. Normals must be unit or zero (zero marks an invalid normal).
  void update(std::span<const Vec3> positions, std::span<const Vec3> normals,
              std::span<const double> scores) {
    if (positions.size() != normals.size() || positions.size() != scores.size())
      throw DataError("map update: positions, normals and scores must align");

    // Best candidate per voxel for this call: any valid normal beats an
    // invalid one, then higher score wins.
    const auto beats = [&](std::size_t a, std::size_t b) {
      const bool va = normals[a].squaredNorm() > 0.25, vb = normals[b].squaredNorm() > 0.25;
      if (va != vb) return va;
      return scores[a] > scores[b];
    };
    std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> best;
    best.reserve(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
      if (!positions[i].allFinite()) throw DataError("map update: non-finite point");
      const VoxelKey k = voxel_key_of(positions[i], inv_dl_);
      const auto [it, inserted] = best.try_emplace(k, i);
      if (!inserted && beats(i, it->second)) it->second = i;
    }

    for (const auto& [key, i] : best) {
      const auto vit = voxels_.find(key);
      if (vit == voxels_.end()) {
        MapPoint mp;
        mp.position = positions[i];
        mp.normal = normals[i];
        mp.score = static_cast<float>(scores[i]);
        mp.seen_count = 1;
        mp.occupied_count = 1;
        insert_point(key, mp);
      } else {
        MapPoint& mp = points_[static_cast<std::size_t>(vit->second)];
        mp.seen_count += 1;
        mp.occupied_count += 1;
        const bool candidate_valid = normals[i].squaredNorm() > 0.25;
        if ((candidate_valid && !mp.normal_valid()) ||
            (candidate_valid == mp.normal_valid() && scores[i] > mp.score)) {
          mp.score = static_cast<float>(scores[i]);
          mp.normal = normals[i];
        }
      }
    }
  }

  /// Inserts a fully specified point without touching counters (file loads
  /// and derived maps). Duplicate voxels are rejected.
  void insert_raw(const MapPoint& mp) {
    const VoxelKey k = voxel_key_of(mp.position, inv_dl_);
    if (voxels_.count(k)) throw DataError("map insert: voxel already occupied");
    insert_point(k, mp);
  }

  void add_observation(std::size_t i, bool occupied) {
    points_[i].seen_count += 1;
    if (occupied) points_[i].occupied_count += 1;
  }

  /// Exact nearest stored point within r_max of the query, or nullopt.
  std::optional<std::pair<int, double>> nearest(const Vec3& query, double r_max) const {
    if (points_.empty()) return std::nullopt;
    const VoxelKey base = voxel_key_of(query, kInvCoarseCell);
    const int max_shell = static_cast<int>(std::ceil(r_max * kInvCoarseCell)) + 1;
    int best = -1;
    double best_d2 = r_max * r_max;
    bool found = false;
    for (int s = 0; s <= max_shell; ++s) {
      if (found) {
        const double bound = static_cast<double>(s - 1) * kCoarseCell;
        if (bound > 0.0 && bound * bound > best_d2) break;
      }
      for (int dx = -s; dx <= s; ++dx)
        for (int dy = -s; dy <= s; ++dy)
          for (int dz = -s; dz <= s; ++dz) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != s) continue;
            const auto it = coarse_.find(VoxelKey{base.x + dx, base.y + dy, base.z + dz});
            if (it == coarse_.end()) continue;
            for (const int i : it->second) {
              const double d2 = (points_[static_cast<std::size_t>(i)].position - query).squaredNorm();
              if (d2 < best_d2 || (!found && d2 <= best_d2)) {
                best_d2 = d2;
                best = i;
                found = true;
              }
            }
          }
    }
    if (!found) return std::nullopt;
    return std::make_pair(best, std::sqrt(best_d2));
  }

  /// Drops points failing pred(point); compacts storage and indexes.
  template <typename Pred>
  std::size_t remove_if(Pred&& pred) {
    std::vector<MapPoint> kept;
    kept.reserve(points_.size());
    for (const MapPoint& mp : points_)
      if (!pred(mp)) kept.push_back(mp);
    const std::size_t removed = points_.size() - kept.size();
    if (removed == 0) return 0;
    points_.clear();
    voxels_.clear();
    coarse_.clear();
    for (const MapPoint& mp : kept) insert_point(voxel_key_of(mp.position, inv_dl_), mp);
    return removed;
  }

  // -- persistence -----------------------------------------------------------

  static constexpr char kMagic[4] = {'P', 'M', 'A', 'P'};
  static constexpr std::uint16_t kVersion = 1;

  void save(const std::string& path) const {
    auto os = io::open_output(path);
    os.write(kMagic, 4);
    io::write_raw(os, kVersion);
    io::write_raw(os, dl_);
    io::write_raw(os, static_cast<std::uint64_t>(points_.size()));
    for (const MapPoint& mp : points_) {
      io::write_raw(os, mp.position.x());
      io::write_raw(os, mp.position.y());
      io::write_raw(os, mp.position.z());
      io::write_raw(os, static_cast<float>(mp.normal.x()));
      io::write_raw(os, static_cast<float>(mp.normal.y()));
      io::write_raw(os, static_cast<float>(mp.normal.z()));
      io::write_raw(os, mp.score);
      io::write_raw(os, mp.seen_count);
      io::write_raw(os, mp.occupied_count);
    }
    if (!os) throw DataError("failed while writing map file: " + path);
  }

  static MapCloud load(const std::string& path) {
    auto is = io::open_input(path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
      throw DataError("not a map file (bad magic): " + path);
    const auto version = io::read_raw<std::uint16_t>(is, "map version");
    if (version != kVersion)
      throw DataError("unsupported map file version " + std::to_string(version) + ": " + path);
    const auto dl = io::read_raw<double>(is, "map voxel size");
    if (!(dl > 0.0)) throw DataError("map file has non-positive voxel size: " + path);
    const auto count = io::read_raw<std::uint64_t>(is, "map point count");
    MapCloud map(dl);
    for (std::uint64_t i = 0; i < count; ++i) {
      MapPoint mp;
      mp.position.x() = io::read_raw<double>(is, "map point");
      mp.position.y() = io::read_raw<double>(is, "map point");
      mp.position.z() = io::read_raw<double>(is, "map point");
      mp.normal.x() = io::read_raw<float>(is, "map normal");
      mp.normal.y() = io::read_raw<float>(is, "map normal");
      mp.normal.z() = io::read_raw<float>(is, "map normal");
      mp.score = io::read_raw<float>(is, "map score");
      mp.seen_count = io::read_raw<std::uint32_t>(is, "map counter");
      mp.occupied_count = io::read_raw<std::uint32_t>(is, "map counter");
      map.insert_raw(mp);
    }
    return map;
  }

 private:
  // Coarse bucket edge for nearest queries; trades shell count against
  // bucket occupancy for indoor point densities.
  static constexpr double kCoarseCell = 1.0;
  static constexpr double kInvCoarseCell = 1.0;

  void insert_point(const VoxelKey& k, const MapPoint& mp) {
    const int idx = static_cast<int>(points_.size());
    points_.push_back(mp);
    voxels_.emplace(k, idx);
    coarse_[voxel_key_of(mp.position, kInvCoarseCell)].push_back(idx);
  }

  double dl_;
  double inv_dl_;
  std::vector<MapPoint> points_;
  std::unordered_map<VoxelKey, int, VoxelKeyHash> voxels_;
  std::unordered_map<VoxelKey, std::vector<int>, VoxelKeyHash> coarse_;
};

/// Frame-level adapter: integrates aligned points carrying per-point normals
/// and scores. Entries flagged invalid still occupy their voxel (occupancy
/// must record every observed surface) but carry the zero-normal sentinel,
/// so they never displace a valid normal and matching skips them.
inline void update_map(MapCloud& map, std::span<const Vec3> positions,
                       std::span<const Vec3> normals, std::span<const double> scores,
                       std::span<const std::uint8_t> valid = {}) {
  if (valid.empty()) {
    map.update(positions, normals, scores);
    return;
  }
  if (valid.size() != positions.size())
    throw DataError("map update: validity flags must align with points");
  std::vector<Vec3> n(normals.begin(), normals.end());
  std::vector<double> s(scores.begin(), scores.end());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (valid[i]) continue;
    n[i] = Vec3::Zero();
    s[i] = 0.0;
  }
  map.update(positions, n, s);
}

}  // namespace risknav
