// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "risknav/core/errors.hpp"
#include "risknav/core/geometry.hpp"
#include "risknav/core/normals.hpp"
#include "risknav/core/rng.hpp"
#include "risknav/core/subsample.hpp"
#include "risknav/map/map_cloud.hpp"

namespace risknav {

struct IcpConfig {
  double subsample_dl = 0.12;     // frame filter voxel size before matching
  int sample_count = 600;         // matched samples per iteration
  double max_pt2pt = 2.0;         // reject matches farther than this
  double max_pt2pl = 0.12;        // reject plane residuals above this after iteration 1
  int max_iters = 100;
  double min_motion_trans = 0.01;  // converged when the update drops below
  double min_motion_rot = 0.001;   // these translation / rotation magnitudes
  bool ground_heuristic = true;    // match near-ground points to the z=0 plane
  double ground_z_band = 0.1;
  bool score_weighted_sampling = true;  // sample by matched planarity score
  std::uint64_t seed = 0x1CF0A11E5ULL;
  NormalConfig normals;
};

struct IcpResult {
  Pose pose0;  // aligned pose at the frame start stamp
  Pose pose1;  // aligned pose at the frame end stamp
  int iterations = 0;
  double rms = 0.0;  // point-to-plane rms of the accepted matches
  bool converged = false;
};

namespace detail {

/// Weighted sampling without replacement via exponential keys; determinism
/// comes from the rng stream and index tie-breaking.
inline std::vector<int> weighted_sample(std::span<const double> weights, int k, Rng& rng) {
  const int n = static_cast<int>(weights.size());
  std::vector<int> out;
  if (n <= k) {
    out.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = i;
    return out;
  }
  std::vector<std::pair<double, int>> keys(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    const double w = std::max(weights[static_cast<std::size_t>(i)], 1e-6);
    keys[static_cast<std::size_t>(i)] = {-std::log1p(-u) / w, i};
  }
  std::partial_sort(keys.begin(), keys.begin() + k, keys.end());
  out.resize(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = keys[static_cast<std::size_t>(i)].second;
  return out;
}

}  // namespace detail

namespace detail {

/// Shared alignment loop. With an anchor the trajectory over the frame is
/// the interpolation between the fixed anchor pose and the optimized end
/// pose, and each residual is scaled by its point's interpolation fraction;
/// without one the trajectory is rigid (the same transform at every stamp).
/// Each iteration resamples sample_count points (score-weighted once
/// matches exist), matches them to the nearest map point within max_pt2pt
/// (or the ground plane inside the ground band), rejects plane residuals
/// above max_pt2pl after the first iteration, and solves the normal
/// equations for the end pose update. Throws IcpError when the map is
/// empty, fewer than 6 samples survive matching, or the update is
/// non-finite.
inline IcpResult icp_core(const LidarFrame& frame, const MapCloud& map,
                          const Pose* anchor, const Pose& init1, const IcpConfig& cfg) {
  frame.validate();
  if (map.empty()) throw IcpError("icp: cannot align against an empty map");
  if (anchor && anchor->stamp > frame.t0)
    throw DataError("icp: anchor pose stamped after frame start");

  const std::vector<TimedPoint> sub = grid_subsample(frame.points, cfg.subsample_dl);
  const int n = static_cast<int>(sub.size());
  if (n < 6) throw IcpError("icp: fewer than 6 points after subsampling");

  Pose pose1 = init1;
  pose1.stamp = frame.t1;

  std::vector<double> weights(static_cast<std::size_t>(n), 1.0);
  std::vector<double> omega(static_cast<std::size_t>(n), 1.0);
  if (anchor) {
    const double span = frame.t1 - anchor->stamp;
    for (int i = 0; i < n; ++i)
      omega[static_cast<std::size_t>(i)] =
          (sub[static_cast<std::size_t>(i)].stamp - anchor->stamp) / span;
  }

  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(frame.frame_id)));
  const std::vector<double> uniform_weights(static_cast<std::size_t>(n), 1.0);

  IcpResult result;
  constexpr double kRejectedWeight = 0.05;

  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    const std::vector<int> samples = detail::weighted_sample(
        cfg.score_weighted_sampling ? weights : uniform_weights, cfg.sample_count, rng);

    Eigen::Matrix<double, 6, 6> A = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> b = Eigen::Matrix<double, 6, 1>::Zero();
    int inliers = 0;
    double sum_sq = 0.0;

    for (const int i : samples) {
      const TimedPoint& p = sub[static_cast<std::size_t>(i)];
      const Vec3 pw = anchor ? interp_pose(*anchor, pose1, p.stamp).apply(p.position)
                             : pose1.apply(p.position);

      // Near-ground points whose map match is missing or itself near-vertical
      // snap to the exact plane z = 0; wall bases inside the band keep their
      // wall plane.
      const bool ground_candidate =
          cfg.ground_heuristic && std::abs(pw.z()) < cfg.ground_z_band;

      Vec3 nrm;
      double residual;
      double match_score;
      const auto hit = map.nearest(pw, cfg.max_pt2pt);
      const MapPoint* mp = hit ? &map.point(static_cast<std::size_t>(hit->first)) : nullptr;
      if (mp && mp->normal_valid() && !(ground_candidate && std::abs(mp->normal.z()) > 0.9)) {
        nrm = mp->normal;
        residual = nrm.dot(pw - mp->position);
        match_score = std::max(static_cast<double>(mp->score), kRejectedWeight);
      } else if (ground_candidate) {
        nrm = Vec3::UnitZ();
        residual = pw.z();
        match_score = 1.0;
      } else {
        weights[static_cast<std::size_t>(i)] = kRejectedWeight;
        continue;
      }

      if (iter > 1 && std::abs(residual) > cfg.max_pt2pl) {
        weights[static_cast<std::size_t>(i)] = kRejectedWeight;
        continue;
      }

      Eigen::Matrix<double, 6, 1> J;
      J.head<3>() = nrm;
      J.tail<3>() = pw.cross(nrm);
      J *= omega[static_cast<std::size_t>(i)];
      A.noalias() += J * J.transpose();
      b.noalias() += J * residual;
      sum_sq += residual * residual;
      ++inliers;
      weights[static_cast<std::size_t>(i)] = match_score;
    }

    if (inliers < 6) throw IcpError("icp: diverged, fewer than 6 matched samples");

    A.diagonal().array() += 1e-9 * (1.0 + A.trace());
    const Eigen::Matrix<double, 6, 1> delta = A.ldlt().solve(-b);
    if (!delta.allFinite()) throw IcpError("icp: non-finite pose update");

    const Vec3 dt = delta.head<3>();
    const Vec3 dr = delta.tail<3>();
    const double angle = dr.norm();
    const Quat dq = angle > 0.0 ? Quat(Eigen::AngleAxisd(angle, dr / angle)) : Quat::Identity();

    const Vec3 t_before = pose1.t;
    pose1.q = (dq * pose1.q).normalized();
    pose1.t = dq * pose1.t + dt;

    result.iterations = iter;
    result.rms = std::sqrt(sum_sq / inliers);
    if ((pose1.t - t_before).norm() < cfg.min_motion_trans && angle < cfg.min_motion_rot) {
      result.converged = true;
      break;
    }
  }

  result.pose1 = pose1;
  if (anchor) {
    result.pose0 = interp_pose(*anchor, pose1, frame.t0);
  } else {
    result.pose0 = pose1;
    result.pose0.stamp = frame.t0;
  }
  return result;
}

}  // namespace detail

/// Alignment under the interpolated-trajectory model: the anchor (typically
/// the aligned start pose of the previous frame) stays fixed while the end
/// pose is optimized, so intra-frame motion distortion is estimated jointly
/// with the pose.
inline IcpResult icp_align_anchored(const LidarFrame& frame, const MapCloud& map,
                                    const Pose& anchor, const Pose& init1,
                                    const IcpConfig& cfg = {}) {
  return detail::icp_core(frame, map, &anchor, init1, cfg);
}

/// Standalone alignment with a zero-motion assumption: every point shares
/// one rigid transform regardless of stamp. Use the anchored variant when a
/// trajectory through the previous frame is known.
inline IcpResult icp_align(const LidarFrame& frame, const MapCloud& map, const Pose& init,
                           const IcpConfig& cfg = {}) {
  Pose init1 = init;
  init1.stamp = frame.t1;
  return detail::icp_core(frame, map, nullptr, init1, cfg);
}

}  // namespace risknav
