// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "risknav/io/binary.hpp"
#include "risknav/label/sogm.hpp"

namespace risknav {

// ============================================================================
// Spatiotemporal risk maps
// ============================================================================

struct SrmConfig {
  double tau_risk = 0.4;  // occupancy above this is a risk source
  int p = 3;              // norm exponent of the diffusion
  double delta0 = 1.0;    // temporal influence range, seconds
  double d0_dyn = 1.2;    // spatial influence of dynamic obstacles, meters
  double d0_sta = 0.9;    // spatial influence of static obstacles, meters
  int n_threads = 1;      // worker threads for the dense per-layer passes
};

/// Risk in [0,1] everywhere. The static field is a single plane (static
/// obstacles carry the same risk at any time); dynamic risk keeps one plane
/// per horizon layer, layer k at t_ref + k*dt.
struct Srm {
  int n_t = 0;
  int h = 0;
  int w = 0;
  double dl = 0.12;
  double dt = 0.1;
  double t_ref = 0.0;
  Vec2 origin = Vec2::Zero();
  double rotation = 0.0;
  std::vector<double> static_risk;   // row-major (y, x)
  std::vector<double> dynamic_risk;  // row-major (t, y, x)

  double horizon() const { return (n_t - 1) * dt; }
  /// World position of the center of cell (ix, iy).
  Vec2 cell_center(int ix, int iy) const {
    return origin + Eigen::Rotation2Dd(-rotation) *
                        Vec2((ix + 0.5) * dl, (iy + 0.5) * dl);
  }
  /// Fractional grid coordinates of a world point (cell = floor of each).
  Vec2 cell_coords(const Vec2& q) const {
    return (Eigen::Rotation2Dd(rotation) * (q - origin)) / dl;
  }
  std::size_t plane_index(int iy, int ix) const {
    return static_cast<std::size_t>(iy) * static_cast<std::size_t>(w) +
           static_cast<std::size_t>(ix);
  }
  double static_at(int iy, int ix) const { return static_risk[plane_index(iy, ix)]; }
  double dynamic_at(int k, int iy, int ix) const {
    return dynamic_risk[static_cast<std::size_t>(k) * static_cast<std::size_t>(h) *
                            static_cast<std::size_t>(w) +
                        plane_index(iy, ix)];
  }
};

namespace detail {

/// Polynomial cone kernel over integer cell offsets; zero outside d0.
struct SpatialKernel {
  int r = 0;
  std::vector<double> v;  // (2r+1)^2, row-major (dy, dx)
  double at(int dy, int dx) const {
    return v[static_cast<std::size_t>(dy + r) * (2 * static_cast<std::size_t>(r) + 1) +
             static_cast<std::size_t>(dx + r)];
  }
};

inline SpatialKernel make_spatial_kernel(double dl, double d0, int p) {
  SpatialKernel k;
  k.r = static_cast<int>(std::ceil(d0 / dl));
  const int n = 2 * k.r + 1;
  k.v.resize(static_cast<std::size_t>(n) * n);
  for (int dy = -k.r; dy <= k.r; ++dy)
    for (int dx = -k.r; dx <= k.r; ++dx) {
      const double d = std::sqrt(static_cast<double>(dy) * dy + static_cast<double>(dx) * dx);
      const double c = std::max(0.0, 1.0 - d * dl / d0);
      k.v[static_cast<std::size_t>(dy + k.r) * n + static_cast<std::size_t>(dx + k.r)] =
          std::pow(c, p);
    }
  return k;
}

/// Temporal cone kernel over layer offsets; entry [dk + r].
struct TemporalKernel {
  int r = 0;
  std::vector<double> v;
  double at(int dk) const { return v[static_cast<std::size_t>(dk + r)]; }
};

inline TemporalKernel make_temporal_kernel(double dt, double delta0, int p) {
  TemporalKernel k;
  k.r = std::max(0, static_cast<int>(std::ceil(delta0 / dt)) - 1);
  while (1.0 - (k.r + 1) * dt / delta0 > 0.0) ++k.r;  // guard against ceil fp edge
  k.v.resize(2 * static_cast<std::size_t>(k.r) + 1);
  for (int dk = -k.r; dk <= k.r; ++dk)
    k.v[static_cast<std::size_t>(dk + k.r)] =
        std::pow(std::max(0.0, 1.0 - std::abs(dk) * dt / delta0), p);
  return k;
}

struct RiskSource {
  int k, iy, ix;
};

inline void scatter_kernel_layer(std::vector<double>& stack, int k, int h, int w, int sy,
                                 int sx, double weight, const SpatialKernel& K) {
  double* plane = stack.data() + static_cast<std::size_t>(k) * h * w;
  const int y0 = std::max(0, sy - K.r), y1 = std::min(h - 1, sy + K.r);
  const int x0 = std::max(0, sx - K.r), x1 = std::min(w - 1, sx + K.r);
  for (int iy = y0; iy <= y1; ++iy)
    for (int ix = x0; ix <= x1; ++ix)
      plane[static_cast<std::size_t>(iy) * w + ix] += weight * K.at(iy - sy, ix - sx);
}

/// Runs fn(k) for k in [0, n) split across cfg-many workers in fixed
/// contiguous blocks; every k writes only its own output slice, so the
/// result is identical for any thread count.
inline void for_each_layer(int n, int n_threads, const std::function<void(int)>& fn) {
  const int workers = std::clamp(n_threads, 1, std::max(1, n));
  if (workers == 1) {
    for (int k = 0; k < n; ++k) fn(k);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int t = 0; t < workers; ++t) {
    const int k0 = static_cast<int>(static_cast<std::int64_t>(t) * n / workers);
    const int k1 = static_cast<int>(static_cast<std::int64_t>(t + 1) * n / workers);
    pool.emplace_back([&fn, k0, k1] {
      for (int k = k0; k < k1; ++k) fn(k);
    });
  }
  for (std::thread& th : pool) th.join();
}

/// The normalized polynomial diffusion shared by the static and dynamic
/// fields: scatter the cone from every source, read back the summed risk at
/// the sources, scatter again with each source damped by that sum, then
/// diffuse across layers. Layers couple only through the temporal kernel.
inline std::vector<double> diffuse(const std::vector<RiskSource>& sources, int n_t, int h, int w,
                                  const SpatialKernel& Ks, const TemporalKernel& Kt, int p,
                                  int n_threads) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<double> r2(static_cast<std::size_t>(n_t) * plane, 0.0);
  for (const RiskSource& s : sources)
    scatter_kernel_layer(r2, s.k, h, w, s.iy, s.ix, 1.0, Ks);

  // r3 = temporal diffusion of r2, needed only at the sources.
  const auto r3_at = [&](const RiskSource& s) {
    double sum = 0.0;
    for (int dk = -Kt.r; dk <= Kt.r; ++dk) {
      const int l = s.k + dk;
      if (l < 0 || l >= n_t) continue;
      sum += Kt.at(dk) * r2[static_cast<std::size_t>(l) * plane + static_cast<std::size_t>(s.iy) * w + s.ix];
    }
    return sum;
  };

  std::vector<double> u(static_cast<std::size_t>(n_t) * plane, 0.0);
  for (const RiskSource& s : sources)
    scatter_kernel_layer(u, s.k, h, w, s.iy, s.ix, 1.0 / r3_at(s), Ks);

  std::vector<double> out(static_cast<std::size_t>(n_t) * plane, 0.0);
  const double inv_p = 1.0 / p;
  for_each_layer(n_t, n_threads, [&](int k) {
    double* dst = out.data() + static_cast<std::size_t>(k) * plane;
    std::vector<double> acc(plane, 0.0);
    for (int dk = -Kt.r; dk <= Kt.r; ++dk) {
      const int l = k + dk;
      if (l < 0 || l >= n_t) continue;
      const double wt = Kt.at(dk);
      const double* src = u.data() + static_cast<std::size_t>(l) * plane;
      for (std::size_t i = 0; i < plane; ++i) acc[i] += wt * src[i];
    }
    for (std::size_t i = 0; i < plane; ++i)
      dst[i] = std::clamp(std::pow(acc[i], inv_p), 0.0, 1.0);
  });
  return out;
}

}  // namespace detail

/// Converts occupancy into risk: occupancy above tau_risk becomes a unit
/// source; each source radiates the polynomial cone, normalized so the peak
/// risk over a source area is 1 regardless of its size; dynamic risk is
/// additionally diffused across time. Static risk unions the permanent and
/// movable channels and lives in a single plane.
inline Srm sogm_to_srm(const Sogm& sogm, const SrmConfig& cfg = {}) {
  if (sogm.c != 3 || sogm.data.size() !=
                         static_cast<std::size_t>(sogm.n_t) * sogm.h * sogm.w * sogm.c)
    throw DataError("srm: malformed occupancy grid");
  if (cfg.p < 1) throw DataError("srm: p must be at least 1");

  Srm out;
  out.n_t = sogm.n_t;
  out.h = sogm.h;
  out.w = sogm.w;
  out.dl = sogm.dl;
  out.dt = sogm.dt;
  out.t_ref = sogm.t_ref;
  out.origin = sogm.origin;
  out.rotation = sogm.rotation;

  std::vector<detail::RiskSource> dyn_sources;
  std::vector<detail::RiskSource> sta_sources;
  for (int k = 0; k < sogm.n_t; ++k)
    for (int iy = 0; iy < sogm.h; ++iy)
      for (int ix = 0; ix < sogm.w; ++ix) {
        if (sogm.at(k, iy, ix, Sogm::kChanDynamic) > cfg.tau_risk)
          dyn_sources.push_back({k, iy, ix});
        if (k == 0 && (sogm.at(0, iy, ix, Sogm::kChanPermanent) > cfg.tau_risk ||
                       sogm.at(0, iy, ix, Sogm::kChanMovable) > cfg.tau_risk))
          sta_sources.push_back({0, iy, ix});
      }

  const detail::SpatialKernel ks_dyn = detail::make_spatial_kernel(sogm.dl, cfg.d0_dyn, cfg.p);
  const detail::TemporalKernel kt = detail::make_temporal_kernel(sogm.dt, cfg.delta0, cfg.p);
  out.dynamic_risk =
      detail::diffuse(dyn_sources, sogm.n_t, sogm.h, sogm.w, ks_dyn, kt, cfg.p, cfg.n_threads);

  const detail::SpatialKernel ks_sta = detail::make_spatial_kernel(sogm.dl, cfg.d0_sta, cfg.p);
  detail::TemporalKernel kt_none;
  kt_none.r = 0;
  kt_none.v = {1.0};
  out.static_risk =
      detail::diffuse(sta_sources, 1, sogm.h, sogm.w, ks_sta, kt_none, cfg.p, cfg.n_threads);
  return out;
}

// ============================================================================
// Risk sampling
// ============================================================================

/// One interpolated lookup: the risk value, its spatial gradient in world
/// coordinates, and whether the query had to be clamped into the grid.
struct RiskSample {
  double value = 0.0;
  Vec2 gradient = Vec2::Zero();
  bool clamped = false;
};

namespace detail {

inline RiskSample bilinear_plane(const double* plane, int h, int w, double dl,
                                 const Vec2& origin, double rotation, const Vec2& q) {
  RiskSample s;
  const Vec2 m = Eigen::Rotation2Dd(rotation) * (q - origin);
  double u = m.x() / dl - 0.5;
  double v = m.y() / dl - 0.5;
  bool cx = false, cy = false;
  if (u < 0.0) { u = 0.0; cx = true; }
  if (u > w - 1.0) { u = w - 1.0; cx = true; }
  if (v < 0.0) { v = 0.0; cy = true; }
  if (v > h - 1.0) { v = h - 1.0; cy = true; }
  s.clamped = cx || cy;

  const int i0 = std::min(static_cast<int>(u), w - 2);
  const int j0 = std::min(static_cast<int>(v), h - 2);
  const double fx = u - i0;
  const double fy = v - j0;
  const double v00 = plane[static_cast<std::size_t>(j0) * w + i0];
  const double v10 = plane[static_cast<std::size_t>(j0) * w + i0 + 1];
  const double v01 = plane[static_cast<std::size_t>(j0 + 1) * w + i0];
  const double v11 = plane[static_cast<std::size_t>(j0 + 1) * w + i0 + 1];
  s.value = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);

  Vec2 grad_local(((1.0 - fy) * (v10 - v00) + fy * (v11 - v01)) / dl,
                  ((1.0 - fx) * (v01 - v00) + fx * (v11 - v10)) / dl);
  if (cx) grad_local.x() = 0.0;  // saturated: the field is constant outside
  if (cy) grad_local.y() = 0.0;
  s.gradient = Eigen::Rotation2Dd(-rotation) * grad_local;
  return s;
}

}  // namespace detail

inline RiskSample sample_static_risk(const Srm& srm, const Vec2& q) {
  if (srm.h < 2 || srm.w < 2) throw DataError("srm: grid too small to sample");
  return detail::bilinear_plane(srm.static_risk.data(), srm.h, srm.w, srm.dl, srm.origin,
                                srm.rotation, q);
}

/// Dynamic risk at (q, t) from the layer nearest to t. Beyond the horizon
/// the dynamic risk is unknown and treated as zero.
inline RiskSample sample_dynamic_risk(const Srm& srm, const Vec2& q, double t) {
  if (srm.h < 2 || srm.w < 2) throw DataError("srm: grid too small to sample");
  if (t > srm.t_ref + srm.horizon()) return {};
  const int k = std::clamp(static_cast<int>(std::lround((t - srm.t_ref) / srm.dt)), 0,
                           srm.n_t - 1);
  const double* plane =
      srm.dynamic_risk.data() + static_cast<std::size_t>(k) * srm.h * srm.w;
  return detail::bilinear_plane(plane, srm.h, srm.w, srm.dl, srm.origin, srm.rotation, q);
}

// ============================================================================
// Binary dump
// ============================================================================

/// Same header layout as the occupancy grid format, magic "SRM1", single
/// channel, f64 planes; the static plane rides as layer 0 ahead of the
/// dynamic layers.
inline void write_srm(const std::string& path, const Srm& srm) {
  auto os = io::open_output(path);
  os.write("SRM1", 4);
  io::write_raw(os, static_cast<std::uint16_t>(1));
  io::write_raw(os, static_cast<std::uint32_t>(srm.n_t + 1));
  io::write_raw(os, static_cast<std::uint32_t>(srm.h));
  io::write_raw(os, static_cast<std::uint32_t>(srm.w));
  io::write_raw(os, static_cast<std::uint32_t>(1));
  io::write_raw(os, srm.dl);
  io::write_raw(os, srm.dt);
  io::write_raw(os, srm.t_ref);
  io::write_raw(os, srm.origin.x());
  io::write_raw(os, srm.origin.y());
  os.write(reinterpret_cast<const char*>(srm.static_risk.data()),
           static_cast<std::streamsize>(srm.static_risk.size() * sizeof(double)));
  os.write(reinterpret_cast<const char*>(srm.dynamic_risk.data()),
           static_cast<std::streamsize>(srm.dynamic_risk.size() * sizeof(double)));
  if (!os) throw DataError("srm: write failed (" + path + ")");
}

inline Srm read_srm(const std::string& path) {
  auto is = io::open_input(path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "SRM1")
    throw DataError("srm: bad magic (" + path + ")");
  const auto version = io::read_raw<std::uint16_t>(is, "srm version");
  if (version != 1) throw DataError("srm: unsupported version (" + path + ")");
  const auto n_total = io::read_raw<std::uint32_t>(is, "srm shape");
  const auto h = io::read_raw<std::uint32_t>(is, "srm shape");
  const auto w = io::read_raw<std::uint32_t>(is, "srm shape");
  const auto c = io::read_raw<std::uint32_t>(is, "srm shape");
  if (n_total < 2 || n_total > (1u << 14) || h < 2 || h > (1u << 14) || w < 2 ||
      w > (1u << 14) || c != 1)
    throw DataError("srm: implausible shape (" + path + ")");
  Srm srm;
  srm.n_t = static_cast<int>(n_total) - 1;
  srm.h = static_cast<int>(h);
  srm.w = static_cast<int>(w);
  srm.dl = io::read_raw<double>(is, "srm geometry");
  srm.dt = io::read_raw<double>(is, "srm geometry");
  srm.t_ref = io::read_raw<double>(is, "srm geometry");
  srm.origin.x() = io::read_raw<double>(is, "srm geometry");
  srm.origin.y() = io::read_raw<double>(is, "srm geometry");
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  srm.static_risk.resize(plane);
  srm.dynamic_risk.resize(static_cast<std::size_t>(srm.n_t) * plane);
  is.read(reinterpret_cast<char*>(srm.static_risk.data()),
          static_cast<std::streamsize>(plane * sizeof(double)));
  is.read(reinterpret_cast<char*>(srm.dynamic_risk.data()),
          static_cast<std::streamsize>(srm.dynamic_risk.size() * sizeof(double)));
  if (!is) throw DataError("srm: truncated file (" + path + ")");
  for (const double v : srm.static_risk)
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("srm: risk outside [0, 1] (" + path + ")");
  for (const double v : srm.dynamic_risk)
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("srm: risk outside [0, 1] (" + path + ")");
  return srm;
}

}  // namespace risknav
