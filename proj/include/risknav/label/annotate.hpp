// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "risknav/core/errors.hpp"
#include "risknav/core/geometry.hpp"
#include "risknav/core/voxel_index.hpp"
#include "risknav/label/labels.hpp"
#include "risknav/map/icp.hpp"
#include "risknav/map/map_cloud.hpp"
#include "risknav/morpho/morphology.hpp"
#include "risknav/ray/pointray.hpp"

namespace risknav {

// ============================================================================
// Session annotation
//
// Labels the new points of a localization session (the buffer) against a
// refined map that carries only Ground and Permanent points, then projects
// the labels back onto every motion-distorted frame:
//   1. buffer points joined to map structure by morphological closings
//      (permanent r = 0.9 m, ground r = 0.2 m),
//   2. the remainder classified by ray-traced occupancy probability
//      (dynamic below tau_dynamic, movable above tau_movable),
//   3. label noise removed by two closings over the dynamic/movable set,
//   4. every frame point inherits the label of its nearest labeled map or
//      buffer point within backproject_radius, Uncertain otherwise.
// ============================================================================

struct AnnotateConfig {
  PointRayConfig ray;
  double r_permanent = 0.9;       // closing radius, map permanent onto buffer
  double r_ground = 0.2;          // closing radius, map ground onto buffer
  double tau_dynamic = 0.3;       // p below: dynamic
  double tau_movable = 0.6;       // p above: movable
  double r_denoise_fill = 0.12;   // closing of dynamics onto movables
  double r_denoise_large = 0.9;   // closing of movables onto dynamics
  double backproject_radius = 0.15;
};

/// A frame whose points are undistorted into map coordinates, with one
/// semantic label per point.
struct AnnotatedFrame {
  LidarFrame frame;
  std::vector<SemanticLabel> labels;
};

struct SessionAnnotation {
  std::vector<AnnotatedFrame> frames;
  std::vector<Vec3> buffer_positions;
  std::vector<SemanticLabel> buffer_labels;
  std::vector<double> buffer_probs;  // ray-traced occupancy, 0.5 where unseen
};

namespace detail {

/// Buffer-side hits of closing the map points of one class onto the buffer.
inline std::vector<char> closing_onto_buffer(const MapCloud& map,
                                             std::span<const SemanticLabel> map_labels,
                                             SemanticLabel cls,
                                             std::span<const Vec3> buffer_positions, double r) {
  std::vector<Vec3> universe;
  for (std::size_t i = 0; i < map.size(); ++i)
    if (map_labels[i] == cls) universe.push_back(map.point(i).position);
  const std::size_t n_cls = universe.size();
  std::vector<char> positive(n_cls + buffer_positions.size(), 0);
  std::fill(positive.begin(), positive.begin() + static_cast<std::ptrdiff_t>(n_cls), 1);
  universe.insert(universe.end(), buffer_positions.begin(), buffer_positions.end());
  close_mask(universe, positive, r);
  return std::vector<char>(positive.end() - static_cast<std::ptrdiff_t>(buffer_positions.size()),
                           positive.end());
}

}  // namespace detail

inline SessionAnnotation label_session(const MapCloud& map,
                                       std::span<const SemanticLabel> map_labels,
                                       const MapCloud& buffer,
                                       std::span<const LidarFrame> frames,
                                       std::span<const IcpResult> poses,
                                       const AnnotateConfig& cfg = {}) {
  if (map_labels.size() != map.size())
    throw DataError("annotate: map labels must align with map points");
  if (poses.size() != frames.size())
    throw DataError("annotate: every frame needs an aligned pose pair");

  SessionAnnotation out;
  const std::size_t nb = buffer.size();
  out.buffer_positions.reserve(nb);
  for (std::size_t i = 0; i < nb; ++i) out.buffer_positions.push_back(buffer.point(i).position);
  out.buffer_labels.assign(nb, SemanticLabel::Uncertain);
  out.buffer_probs.assign(nb, 0.5);

  if (nb > 0) {
    // Structure inherited from the map by closings. Permanent wins where
    // both closings reach a point.
    const std::vector<char> perm = detail::closing_onto_buffer(
        map, map_labels, SemanticLabel::Permanent, out.buffer_positions, cfg.r_permanent);
    const std::vector<char> grnd = detail::closing_onto_buffer(
        map, map_labels, SemanticLabel::Ground, out.buffer_positions, cfg.r_ground);
    for (std::size_t i = 0; i < nb; ++i) {
      if (perm[i]) out.buffer_labels[i] = SemanticLabel::Permanent;
      else if (grnd[i]) out.buffer_labels[i] = SemanticLabel::Ground;
    }

    // Ray-traced occupancy over the session decides the remainder. The
    // integration cloud holds map and buffer points with fresh counters;
    // only the buffer probabilities are read back.
    MapCloud ray_cloud(map.dl());
    for (std::size_t i = 0; i < map.size(); ++i) {
      MapPoint mp = map.point(i);
      mp.seen_count = 0;
      mp.occupied_count = 0;
      ray_cloud.insert_raw(mp);
    }
    for (std::size_t i = 0; i < nb; ++i) {
      MapPoint mp = buffer.point(i);
      mp.seen_count = 0;
      mp.occupied_count = 0;
      ray_cloud.insert_raw(mp);
    }
    for (std::size_t k = 0; k < frames.size(); ++k)
      integrate_frame(ray_cloud, frames[k], poses[k].pose0, poses[k].pose1, cfg.ray);
    const std::vector<double> p = finalize_probabilities(ray_cloud, cfg.ray);
    for (std::size_t i = 0; i < nb; ++i) {
      out.buffer_probs[i] = p[map.size() + i];
      if (out.buffer_labels[i] != SemanticLabel::Uncertain) continue;
      if (out.buffer_probs[i] < cfg.tau_dynamic) out.buffer_labels[i] = SemanticLabel::Dynamic;
      else if (out.buffer_probs[i] > cfg.tau_movable) out.buffer_labels[i] = SemanticLabel::Movable;
    }

    // Denoising over the dynamic/movable subset: dynamics absorb tiny
    // movable islands (small radius), then movables absorb small dynamic
    // groups (large radius), keeping only substantial dynamic regions.
    std::vector<Vec3> dm_pts;
    std::vector<std::size_t> dm_idx;
    std::vector<char> is_dyn;
    for (std::size_t i = 0; i < nb; ++i) {
      if (out.buffer_labels[i] != SemanticLabel::Dynamic &&
          out.buffer_labels[i] != SemanticLabel::Movable)
        continue;
      dm_pts.push_back(out.buffer_positions[i]);
      dm_idx.push_back(i);
      is_dyn.push_back(out.buffer_labels[i] == SemanticLabel::Dynamic ? 1 : 0);
    }
    if (!dm_pts.empty()) {
      close_mask(dm_pts, is_dyn, cfg.r_denoise_fill);
      std::vector<char> is_mov(is_dyn.size());
      for (std::size_t j = 0; j < is_dyn.size(); ++j) is_mov[j] = is_dyn[j] ? 0 : 1;
      close_mask(dm_pts, is_mov, cfg.r_denoise_large);
      for (std::size_t j = 0; j < dm_idx.size(); ++j)
        out.buffer_labels[dm_idx[j]] =
            is_mov[j] ? SemanticLabel::Movable : SemanticLabel::Dynamic;
    }
  }

  // Back-projection: every frame point takes the label of its nearest
  // labeled point (map structure or buffer) within the radius.
  std::vector<SemanticLabel> all_labels(map_labels.begin(), map_labels.end());
  PointIndex index(cfg.backproject_radius);
  for (std::size_t i = 0; i < map.size(); ++i) index.insert(map.point(i).position);
  for (std::size_t i = 0; i < nb; ++i) {
    index.insert(out.buffer_positions[i]);
    all_labels.push_back(out.buffer_labels[i]);
  }

  out.frames.reserve(frames.size());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    AnnotatedFrame af;
    af.frame.t0 = frames[k].t0;
    af.frame.t1 = frames[k].t1;
    af.frame.frame_id = frames[k].frame_id;
    af.frame.points = undistort_frame(frames[k], poses[k].pose0, poses[k].pose1);
    af.labels.reserve(af.frame.points.size());
    for (const TimedPoint& tp : af.frame.points) {
      const auto hit = index.nearest(tp.position, cfg.backproject_radius);
      af.labels.push_back(hit ? all_labels[static_cast<std::size_t>(hit->first)]
                              : SemanticLabel::Uncertain);
    }
    out.frames.push_back(std::move(af));
  }
  return out;
}

}  // namespace risknav
