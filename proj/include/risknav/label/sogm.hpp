// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "risknav/core/errors.hpp"
#include "risknav/core/geometry.hpp"
#include "risknav/core/subsample.hpp"
#include "risknav/core/voxel_index.hpp"
#include "risknav/io/binary.hpp"
#include "risknav/label/annotate.hpp"
#include "risknav/morpho/morphology.hpp"

namespace risknav {

// ============================================================================
// 2D obstacle frames
//
// An annotated frame reduced to obstacle classes on the ground plane:
// ground and uncertain points dropped, the rest projected to z = 0 and
// grid-subsampled per class, then cleaned (isolated dynamic points removed,
// dynamics opened by the static classes).
// ============================================================================

struct Frame2DConfig {
  double grid = 0.03;              // per-class subsampling cell
  double isolation_radius = 0.2;   // a dynamic point needs a dynamic neighbor this close
  double r_open = 0.3;             // opening of dynamics by permanent + movable
};

struct Frame2D {
  std::vector<Vec2> points;
  std::vector<SemanticLabel> labels;  // Permanent, Movable or Dynamic
  double stamp = 0.0;
};

inline Frame2D project_frame_2d(const AnnotatedFrame& af, const Frame2DConfig& cfg = {}) {
  if (af.labels.size() != af.frame.points.size())
    throw DataError("project_frame_2d: labels must align with points");

  std::vector<Vec2> per_class[3];  // permanent, movable, dynamic
  for (std::size_t i = 0; i < af.labels.size(); ++i) {
    const Vec2 p(af.frame.points[i].position.x(), af.frame.points[i].position.y());
    switch (af.labels[i]) {
      case SemanticLabel::Permanent: per_class[0].push_back(p); break;
      case SemanticLabel::Movable: per_class[1].push_back(p); break;
      case SemanticLabel::Dynamic: per_class[2].push_back(p); break;
      default: break;  // ground and uncertain are not obstacles
    }
  }
  for (auto& cls : per_class) cls = grid_subsample_2d(cls, cfg.grid);

  // A dynamic return with no dynamic companion nearby is sensor noise.
  std::vector<Vec2> dynamics;
  if (!per_class[2].empty()) {
    PointIndex index(cfg.isolation_radius);
    for (const Vec2& p : per_class[2]) index.insert(Vec3(p.x(), p.y(), 0.0));
    for (const Vec2& p : per_class[2]) {
      int hits = 0;
      index.for_each_within(Vec3(p.x(), p.y(), 0.0), cfg.isolation_radius,
                            [&](int, double) { ++hits; });
      if (hits >= 2) dynamics.push_back(p);  // the point itself always counts once
    }
  }

  // Opening of dynamics by the static classes: dynamic blobs thinner than
  // the radius near static structure are label noise and are dropped;
  // static points keep their own labels regardless of mask flips.
  const std::size_t n_static = per_class[0].size() + per_class[1].size();
  std::vector<char> keep_dyn(dynamics.size(), 1);
  if (!dynamics.empty() && n_static > 0) {
    std::vector<Vec3> universe;
    universe.reserve(n_static + dynamics.size());
    for (const Vec2& p : per_class[0]) universe.emplace_back(p.x(), p.y(), 0.0);
    for (const Vec2& p : per_class[1]) universe.emplace_back(p.x(), p.y(), 0.0);
    for (const Vec2& p : dynamics) universe.emplace_back(p.x(), p.y(), 0.0);
    std::vector<char> positive(universe.size(), 0);
    std::fill(positive.begin() + static_cast<std::ptrdiff_t>(n_static), positive.end(), 1);
    open_mask(universe, positive, cfg.r_open);
    for (std::size_t j = 0; j < dynamics.size(); ++j) keep_dyn[j] = positive[n_static + j];
  }

  Frame2D out;
  out.stamp = af.frame.t1;
  const auto emit = [&](const std::vector<Vec2>& pts, SemanticLabel l) {
    for (const Vec2& p : pts) {
      out.points.push_back(p);
      out.labels.push_back(l);
    }
  };
  emit(per_class[0], SemanticLabel::Permanent);
  emit(per_class[1], SemanticLabel::Movable);
  for (std::size_t j = 0; j < dynamics.size(); ++j) {
    if (!keep_dyn[j]) continue;
    out.points.push_back(dynamics[j]);
    out.labels.push_back(SemanticLabel::Dynamic);
  }
  return out;
}

// ============================================================================
// Spatiotemporal occupancy grid maps
//
// A stack of 2D binary occupancy grids over future time layers with one
// channel per obstacle class. The grid is the inscribed square of the
// perception radius, centered on the robot; an augmentation rotation maps
// world points into grid coordinates as l = R(rotation) * (p - center).
// Static channels (permanent, movable) are unioned over all layers and
// broadcast, since they do not move.
// ============================================================================

struct SogmConfig {
  double horizon = 4.0;  // prediction horizon, seconds
  double dt = 0.1;       // layer spacing, seconds
  double r_in = 8.0;     // perception radius bounding the grid, meters
  double dl = 0.12;      // cell edge, meters
  int max_layer_gap = 3; // consecutive frameless layers tolerated

  int n_layers() const { return static_cast<int>(std::lround(horizon / dt)) + 1; }
  int grid_cells() const {
    return static_cast<int>(std::floor(2.0 * r_in / (std::sqrt(2.0) * dl)));
  }
};

struct Sogm {
  int n_t = 0;
  int h = 0;
  int w = 0;
  int c = 3;  // channels: 0 permanent, 1 movable, 2 dynamic
  double dl = 0.12;
  double dt = 0.1;
  double t_ref = 0.0;
  Vec2 origin = Vec2::Zero();  // world xy of the outer corner of cell (0, 0)
  double rotation = 0.0;       // grid frame rotation (augmentation), radians
  bool complete = true;        // false when a temporal coverage gap was found
  std::vector<float> data;     // row-major (t, y, x, c)

  static constexpr int kChanPermanent = 0;
  static constexpr int kChanMovable = 1;
  static constexpr int kChanDynamic = 2;

  std::size_t index(int k, int iy, int ix, int ch) const {
    return ((static_cast<std::size_t>(k) * static_cast<std::size_t>(h) +
             static_cast<std::size_t>(iy)) *
                static_cast<std::size_t>(w) +
            static_cast<std::size_t>(ix)) *
               static_cast<std::size_t>(c) +
           static_cast<std::size_t>(ch);
  }
  float at(int k, int iy, int ix, int ch) const { return data[index(k, iy, ix, ch)]; }
  float& at(int k, int iy, int ix, int ch) { return data[index(k, iy, ix, ch)]; }

  /// World position of the center of cell (ix, iy).
  Vec2 cell_center(int ix, int iy) const {
    const Vec2 local((ix + 0.5) * dl, (iy + 0.5) * dl);
    return origin + Eigen::Rotation2Dd(-rotation) * local;
  }

  /// Continuous cell coordinates of a world point (cell (0,0) spans [0,1)^2).
  Vec2 cell_coords(const Vec2& world) const {
    return Eigen::Rotation2Dd(rotation) * (world - origin) / dl;
  }
};

inline Sogm build_sogm(std::span<const Frame2D> frames, double t_ref, const Vec2& center,
                       double rotation, const SogmConfig& cfg = {}) {
  Sogm s;
  s.n_t = cfg.n_layers();
  s.h = s.w = cfg.grid_cells();
  s.c = 3;
  s.dl = cfg.dl;
  s.dt = cfg.dt;
  s.t_ref = t_ref;
  s.rotation = rotation;
  const double half = 0.5 * s.w * cfg.dl;
  const Eigen::Rotation2Dd rot(rotation);
  s.origin = center + rot.inverse() * Vec2(-half, -half);
  s.data.assign(static_cast<std::size_t>(s.n_t) * s.h * s.w * s.c, 0.0f);

  std::vector<char> layer_seen(static_cast<std::size_t>(s.n_t), 0);
  std::vector<char> static_union(static_cast<std::size_t>(s.h) * s.w * 2, 0);

  for (const Frame2D& f : frames) {
    const long k = std::lround((f.stamp - t_ref) / cfg.dt);
    if (k < 0 || k >= s.n_t) continue;  // outside the horizon
    layer_seen[static_cast<std::size_t>(k)] = 1;
    for (std::size_t i = 0; i < f.points.size(); ++i) {
      const Vec2 l = rot * (f.points[i] - center) + Vec2(half, half);
      const int ix = static_cast<int>(std::floor(l.x() / cfg.dl));
      const int iy = static_cast<int>(std::floor(l.y() / cfg.dl));
      if (ix < 0 || ix >= s.w || iy < 0 || iy >= s.h) continue;
      switch (f.labels[i]) {
        case SemanticLabel::Permanent:
          static_union[(static_cast<std::size_t>(iy) * s.w + ix) * 2 + 0] = 1;
          break;
        case SemanticLabel::Movable:
          static_union[(static_cast<std::size_t>(iy) * s.w + ix) * 2 + 1] = 1;
          break;
        case SemanticLabel::Dynamic:
          s.at(static_cast<int>(k), iy, ix, Sogm::kChanDynamic) = 1.0f;
          break;
        default:
          throw DataError("build_sogm: 2D frames may only carry obstacle labels");
      }
    }
  }

  // Static classes are stationary: their union is valid at every layer.
  for (int k = 0; k < s.n_t; ++k)
    for (int iy = 0; iy < s.h; ++iy)
      for (int ix = 0; ix < s.w; ++ix) {
        const std::size_t su = (static_cast<std::size_t>(iy) * s.w + ix) * 2;
        if (static_union[su + 0]) s.at(k, iy, ix, Sogm::kChanPermanent) = 1.0f;
        if (static_union[su + 1]) s.at(k, iy, ix, Sogm::kChanMovable) = 1.0f;
      }

  int run = 0;
  for (int k = 0; k < s.n_t; ++k) {
    run = layer_seen[static_cast<std::size_t>(k)] ? 0 : run + 1;
    if (run > cfg.max_layer_gap) s.complete = false;
  }
  return s;
}

// ============================================================================
// SOGM file format
//
// magic "SOGM", version u16, n_T u32, H u32, W u32, C u32, dl f64, dt f64,
// t_ref f64, origin f64 x2, then the f32 tensor row-major (t, y, x, c),
// little-endian throughout. Version 2 inserts one f64 publish_delay after
// the origin (used by the external-prediction slot); version 1 has none.
// Rotation and the completeness flag are in-memory attributes of training
// augmentation and are not persisted.
// ============================================================================

inline void write_sogm(const std::string& path, const Sogm& s,
                       std::optional<double> publish_delay = std::nullopt) {
  auto os = io::open_output(path);
  os.write("SOGM", 4);
  io::write_raw(os, static_cast<std::uint16_t>(publish_delay ? 2 : 1));
  io::write_raw(os, static_cast<std::uint32_t>(s.n_t));
  io::write_raw(os, static_cast<std::uint32_t>(s.h));
  io::write_raw(os, static_cast<std::uint32_t>(s.w));
  io::write_raw(os, static_cast<std::uint32_t>(s.c));
  io::write_raw(os, s.dl);
  io::write_raw(os, s.dt);
  io::write_raw(os, s.t_ref);
  io::write_raw(os, s.origin.x());
  io::write_raw(os, s.origin.y());
  if (publish_delay) io::write_raw(os, *publish_delay);
  if (s.data.size() != static_cast<std::size_t>(s.n_t) * s.h * s.w * s.c)
    throw DataError("sogm write: tensor size does not match its shape");
  os.write(reinterpret_cast<const char*>(s.data.data()),
           static_cast<std::streamsize>(s.data.size() * sizeof(float)));
  if (!os) throw DataError("write failed: " + path);
}

struct SogmFile {
  Sogm sogm;
  std::optional<double> publish_delay;
};

inline SogmFile read_sogm(const std::string& path) {
  auto is = io::open_input(path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SOGM", 4) != 0)
    throw DataError("not an occupancy grid file (bad magic): " + path);
  const auto version = io::read_raw<std::uint16_t>(is, "sogm version");
  if (version != 1 && version != 2)
    throw DataError("unsupported sogm version " + std::to_string(version) + ": " + path);
  SogmFile out;
  Sogm& s = out.sogm;
  s.n_t = static_cast<int>(io::read_raw<std::uint32_t>(is, "sogm layers"));
  s.h = static_cast<int>(io::read_raw<std::uint32_t>(is, "sogm height"));
  s.w = static_cast<int>(io::read_raw<std::uint32_t>(is, "sogm width"));
  s.c = static_cast<int>(io::read_raw<std::uint32_t>(is, "sogm channels"));
  constexpr int kMaxDim = 1 << 14;
  if (s.n_t <= 0 || s.h <= 0 || s.w <= 0 || s.c <= 0 || s.n_t > kMaxDim || s.h > kMaxDim ||
      s.w > kMaxDim || s.c > 16)
    throw DataError("sogm shape out of range: " + path);
  s.dl = io::read_raw<double>(is, "sogm cell size");
  s.dt = io::read_raw<double>(is, "sogm layer spacing");
  s.t_ref = io::read_raw<double>(is, "sogm reference time");
  s.origin.x() = io::read_raw<double>(is, "sogm origin");
  s.origin.y() = io::read_raw<double>(is, "sogm origin");
  if (version == 2) out.publish_delay = io::read_raw<double>(is, "sogm publish delay");
  s.data.resize(static_cast<std::size_t>(s.n_t) * s.h * s.w * s.c);
  is.read(reinterpret_cast<char*>(s.data.data()),
          static_cast<std::streamsize>(s.data.size() * sizeof(float)));
  if (!is) throw DataError("truncated sogm tensor: " + path);
  for (const float v : s.data)
    if (!(v >= 0.0f && v <= 1.0f))
      throw DataError("sogm tensor value outside [0, 1]: " + path);
  return out;
}

}  // namespace risknav
