// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "risknav/core/errors.hpp"
#include "risknav/core/geometry.hpp"
#include "risknav/core/normals.hpp"
#include "risknav/map/icp.hpp"
#include "risknav/map/map_cloud.hpp"

namespace risknav {

struct SlamConfig {
  IcpConfig icp;
  double map_dl = 0.03;  // map voxel edge
};

struct SlamOutput {
  std::vector<IcpResult> results;  // one per frame, in order
  MapCloud map;
  MapCloud buffer;  // new-voxel observations (localization mode only)
};

namespace detail {

/// World-aligned positions plus world normals for one aligned frame. Each
/// normal is rotated by its own point's interpolated orientation.
struct AlignedFrame {
  std::vector<Vec3> positions;
  std::vector<Vec3> normals;
  std::vector<double> scores;
  std::vector<std::uint8_t> valid;
};

inline AlignedFrame align_frame_points(const LidarFrame& frame, const Pose& pose0,
                                       const Pose& pose1, const NormalConfig& normal_cfg) {
  const FrameNormals fn = estimate_normals(frame, normal_cfg);
  AlignedFrame out;
  const std::size_t n = frame.points.size();
  out.positions.resize(n);
  out.normals.resize(n);
  out.scores = fn.scores;
  out.valid = fn.valid;
  for (std::size_t i = 0; i < n; ++i) {
    const Pose at = interp_pose(pose0, pose1, frame.points[i].stamp);
    out.positions[i] = at.apply(frame.points[i].position);
    out.normals[i] = fn.valid[i] ? Vec3(at.q * fn.normals[i]) : Vec3::Zero();
  }
  return out;
}

}  // namespace detail

/// Sequential alignment of a session. Without an initial map the first
/// frame is taken as static at the origin and mapping is on: every aligned
/// frame updates the map. With an initial map the run is localization only:
/// the map stays untouched and points landing in voxels the map does not
/// contain accumulate in the returned buffer instead. Each frame k >= 1 is
/// anchored at the aligned start pose of frame k-1, matching the
/// interpolation used during its own alignment. Frame stamps must be
/// increasing; alignment failures carry the frame index.
inline SlamOutput run_slam(std::span<const LidarFrame> frames, const SlamConfig& cfg = {},
                           std::optional<MapCloud> initial_map = std::nullopt) {
  const bool localization = initial_map.has_value();
  if (localization && initial_map->empty())
    throw DataError("slam: localization requested against an empty map");
  const double dl = localization ? initial_map->dl() : cfg.map_dl;
  SlamOutput out{std::vector<IcpResult>(),
                 localization ? std::move(*initial_map) : MapCloud(cfg.map_dl), MapCloud(dl)};

  double prev_t1 = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const LidarFrame& frame = frames[k];
    if (frame.t0 < prev_t1 - 1e-9)
      throw DataError("slam: frame " + std::to_string(k) + " overlaps the previous frame");
    prev_t1 = frame.t1;

    IcpResult res;
    if (k == 0 && out.map.empty()) {
      // Bootstrap: the first frame pins the origin and is taken as static.
      res.pose0 = Pose::identity(frame.t0);
      res.pose1 = Pose::identity(frame.t1);
      res.converged = true;
    } else {
      const Pose anchor = k == 0 ? Pose::identity(frame.t0 - (frame.t1 - frame.t0))
                                 : out.results[k - 1].pose0;
      const Pose init1{k == 0 ? Quat::Identity() : out.results[k - 1].pose1.q,
                       k == 0 ? Vec3::Zero() : out.results[k - 1].pose1.t, frame.t1};
      try {
        res = icp_align_anchored(frame, out.map, anchor, init1, cfg.icp);
      } catch (const IcpError& e) {
        throw IcpError("frame " + std::to_string(k) + ": " + e.what());
      }
    }

    const detail::AlignedFrame aligned =
        detail::align_frame_points(frame, res.pose0, res.pose1, cfg.icp.normals);
    if (!localization) {
      update_map(out.map, aligned.positions, aligned.normals, aligned.scores, aligned.valid);
    } else {
      // New-voxel observations: candidate obstacles not in the fixed map.
      std::vector<Vec3> p, n;
      std::vector<double> s;
      for (std::size_t i = 0; i < aligned.positions.size(); ++i) {
        if (out.map.find_voxel(aligned.positions[i]) >= 0) continue;
        p.push_back(aligned.positions[i]);
        n.push_back(aligned.normals[i]);
        s.push_back(aligned.scores[i]);
      }
      out.buffer.update(p, n, s);
    }
    out.results.push_back(res);
  }
  return out;
}

}  // namespace risknav
