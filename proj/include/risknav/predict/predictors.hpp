// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "risknav/label/sogm.hpp"

namespace risknav {

// ============================================================================
// Prediction backends
// ============================================================================

/// Every prediction reaches the planner only after this long, matching the
/// latency of an onboard inference stack.
inline constexpr double kDefaultPublishDelay = 0.25;

/// One moving actor as reported by the simulator at `stamp`.
struct ActorState {
  Vec2 position = Vec2::Zero();
  Vec2 velocity = Vec2::Zero();
  double radius = 0.3;
  double stamp = 0.0;
};

/// What a prediction backend hands the planner. No grid means the planner
/// must fall back to its instantaneous obstacle costmap.
struct PredictorOutput {
  std::optional<Sogm> sogm;
  double publish_delay = kDefaultPublishDelay;
};

namespace detail {

/// Marks every cell whose center lies inside the disc. Comparing in the
/// grid's local metric frame is exact because rotations preserve distance.
inline void rasterize_disc(Sogm& s, int layer, const Vec2& center_world, double radius,
                           int channel) {
  if (!(radius > 0.0)) throw DataError("predict: actor radius must be positive");
  const Vec2 m = Eigen::Rotation2Dd(s.rotation) * (center_world - s.origin);
  const int ix0 = std::max(0, static_cast<int>(std::floor((m.x() - radius) / s.dl)) - 1);
  const int ix1 = std::min(s.w - 1, static_cast<int>(std::floor((m.x() + radius) / s.dl)) + 1);
  const int iy0 = std::max(0, static_cast<int>(std::floor((m.y() - radius) / s.dl)) - 1);
  const int iy1 = std::min(s.h - 1, static_cast<int>(std::floor((m.y() + radius) / s.dl)) + 1);
  const double r2 = radius * radius;
  for (int iy = iy0; iy <= iy1; ++iy)
    for (int ix = ix0; ix <= ix1; ++ix) {
      const double dx = (ix + 0.5) * s.dl - m.x();
      const double dy = (iy + 0.5) * s.dl - m.y();
      if (dx * dx + dy * dy <= r2) s.at(layer, iy, ix, channel) = 1.0f;
    }
}

inline void zero_channel(Sogm& s, int channel) {
  for (int k = 0; k < s.n_t; ++k)
    for (int iy = 0; iy < s.h; ++iy)
      for (int ix = 0; ix < s.w; ++ix) s.at(k, iy, ix, channel) = 0.0f;
}

}  // namespace detail

/// No prediction at all: the planner falls back to treating the latest
/// measured obstacles as static.
inline PredictorOutput predict_none() { return {}; }

/// Keeps the measured static channels and erases everything dynamic.
inline PredictorOutput predict_static_only(const Sogm& base) {
  PredictorOutput out;
  out.sogm = base;
  detail::zero_channel(*out.sogm, Sogm::kChanDynamic);
  return out;
}

/// Extrapolates each actor in a straight line at its current velocity and
/// rasterizes the disc footprint into every layer. Statics pass through
/// from `base` untouched; the output grid is stamped at `t_ref`.
inline PredictorOutput predict_linear(std::span<const ActorState> actors, const Sogm& base,
                                      double t_ref) {
  PredictorOutput out = predict_static_only(base);
  Sogm& s = *out.sogm;
  s.t_ref = t_ref;
  for (int k = 0; k < s.n_t; ++k) {
    const double tk = t_ref + k * s.dt;
    for (const ActorState& a : actors)
      detail::rasterize_disc(s, k, a.position + a.velocity * (tk - a.stamp), a.radius,
                             Sogm::kChanDynamic);
  }
  return out;
}

/// Rasterizes the true actor states of every layer; `future[k]` holds the
/// actors at t_ref + k*dt.
inline PredictorOutput predict_groundtruth(std::span<const std::vector<ActorState>> future,
                                           const Sogm& base, double t_ref) {
  if (static_cast<int>(future.size()) != base.n_t)
    throw DataError("predict: ground truth needs actor states for every layer");
  PredictorOutput out = predict_static_only(base);
  Sogm& s = *out.sogm;
  s.t_ref = t_ref;
  for (int k = 0; k < s.n_t; ++k)
    for (const ActorState& a : future[static_cast<std::size_t>(k)])
      detail::rasterize_disc(s, k, a.position, a.radius, Sogm::kChanDynamic);
  return out;
}

/// Loads a grid computed out of process. The file must be fresh: its t_ref
/// may differ from the request by at most 50 ms, one planning tick.
inline PredictorOutput load_external_sogm(const std::string& path, double t_ref) {
  SogmFile file = read_sogm(path);
  if (std::abs(file.sogm.t_ref - t_ref) > 0.05)
    throw DataError("external sogm is stale: file t_ref " +
                    std::to_string(file.sogm.t_ref) + " vs requested " + std::to_string(t_ref));
  PredictorOutput out;
  out.sogm = std::move(file.sogm);
  if (file.publish_delay) out.publish_delay = *file.publish_delay;
  return out;
}

}  // namespace risknav
