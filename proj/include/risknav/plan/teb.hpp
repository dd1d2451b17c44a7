// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <vector>

#include "risknav/risk/srm.hpp"

namespace risknav {

// ============================================================================
// Timed elastic band planning over risk maps
// ============================================================================

struct TimedPose2D {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double stamp = 0.0;
  Vec2 position() const { return Vec2(x, y); }
};

/// Robot state as the planner sees it: pose, forward speed, yaw rate.
struct RobotState {
  Vec2 position = Vec2::Zero();
  double heading = 0.0;
  double speed = 0.0;
  double omega = 0.0;
  double stamp = 0.0;
};

/// A timed pose sequence being optimized. The first pose is pinned to the
/// robot state; stamps increase strictly along the band.
struct Band {
  std::vector<TimedPose2D> poses;
  Vec2 goal_position = Vec2::Zero();
  double goal_heading = 0.0;
};

struct PlannerConfig {
  double v_max = 1.0;      // m/s
  double omega_max = 1.5;  // rad/s
  double a_max = 2.0;      // m/s^2
  double w_static = 1.0;   // static risk weight
  double w_dynamic = 2.0;  // dynamic risk weight
  double w_velocity = 10.0;
  double w_accel = 10.0;
  double w_time = 0.5;
  double w_path = 0.1;           // pull toward the initial band
  double w_nonholonomy = 10.0;   // squared lateral velocity
  double horizon = 4.0;          // band length, seconds
  int iterations = 60;
  double step_size = 0.1;        // initial gradient step, shrunk on failure
  double dt_min = 0.05;          // smallest allowed stamp gap
  double occupied_threshold = 0.95;  // static risk above this blocks a cell
  double cost_gain = 4.0;            // risk-to-traversal-cost gain for search

  void validate() const {
    if (!(v_max > 0.0) || !(omega_max > 0.0) || !(a_max > 0.0))
      throw ConfigError("plan: velocity and acceleration limits must be positive");
    for (const double w :
         {w_static, w_dynamic, w_velocity, w_accel, w_time, w_path, w_nonholonomy})
      if (!(w >= 0.0)) throw ConfigError("plan: cost weights must be nonnegative");
    if (!(horizon > 0.0) || iterations < 0 || !(step_size > 0.0) || !(dt_min > 0.0))
      throw ConfigError("plan: invalid optimizer settings");
    if (!(occupied_threshold > 0.0 && occupied_threshold <= 1.0) || !(cost_gain >= 0.0))
      throw ConfigError("plan: invalid costmap settings");
  }
};

struct Command {
  double v = 0.0;
  double omega = 0.0;
  bool degenerate = false;  // set when the leading stamp gap is unusable
};

// ============================================================================
// Instantaneous costmap (fallback when no occupancy forecast exists)
// ============================================================================

/// Builds a static-only risk map from raw obstacle points: each point marks
/// its cell and cost falls off linearly with distance to the nearest marked
/// cell, max(0, 1 - d/d0). Dynamic layers are empty, so risk beyond the
/// frame stamp is zero by construction.
inline Srm costmap_from_points(const std::vector<Vec2>& obstacles, const Vec2& center,
                               double half_extent, double dl, double d0, double t_ref) {
  if (!(half_extent > 0.0) || !(dl > 0.0) || !(d0 > 0.0))
    throw DataError("plan: costmap extents must be positive");
  Srm map;
  map.h = map.w = std::max(4, 2 * static_cast<int>(std::ceil(half_extent / dl)));
  map.n_t = 1;
  map.dl = dl;
  map.dt = 0.1;
  map.t_ref = t_ref;
  map.origin = center - Vec2(0.5 * map.w * dl, 0.5 * map.h * dl);
  map.static_risk.assign(static_cast<std::size_t>(map.h) * map.w, 0.0);
  map.dynamic_risk.assign(static_cast<std::size_t>(map.h) * map.w, 0.0);

  std::vector<char> marked(map.static_risk.size(), 0);
  for (const Vec2& p : obstacles) {
    const Vec2 c = map.cell_coords(p);
    const int ix = static_cast<int>(std::floor(c.x()));
    const int iy = static_cast<int>(std::floor(c.y()));
    if (ix < 0 || ix >= map.w || iy < 0 || iy >= map.h) continue;
    marked[map.plane_index(iy, ix)] = 1;
  }
  const int r = static_cast<int>(std::ceil(d0 / dl));
  for (int sy = 0; sy < map.h; ++sy)
    for (int sx = 0; sx < map.w; ++sx) {
      if (!marked[map.plane_index(sy, sx)]) continue;
      const int y0 = std::max(0, sy - r), y1 = std::min(map.h - 1, sy + r);
      const int x0 = std::max(0, sx - r), x1 = std::min(map.w - 1, sx + r);
      for (int iy = y0; iy <= y1; ++iy)
        for (int ix = x0; ix <= x1; ++ix) {
          const double d = std::sqrt(static_cast<double>(iy - sy) * (iy - sy) +
                                     static_cast<double>(ix - sx) * (ix - sx));
          double& cell = map.static_risk[map.plane_index(iy, ix)];
          cell = std::max(cell, std::max(0.0, 1.0 - d * dl / d0));
        }
    }
  return map;
}

// ============================================================================
// Global path search
// ============================================================================

namespace detail {

inline bool grid_occupied(const Srm& map, int iy, int ix, const PlannerConfig& cfg) {
  return map.static_at(iy, ix) > cfg.occupied_threshold;
}

struct GridPath {
  std::vector<int> cells;  // iy * w + ix, start to goal inclusive
  double cost = std::numeric_limits<double>::infinity();
};

/// Dijkstra over the 8-connected grid. Moving along an edge costs the step
/// length scaled up by the mean static risk of its endpoints.
inline GridPath dijkstra_grid(const Srm& map, int start, int goal,
                              const PlannerConfig& cfg) {
  const int n = map.h * map.w;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(static_cast<std::size_t>(n), inf);
  std::vector<int> prev(static_cast<std::size_t>(n), -1);
  using Entry = std::pair<double, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> open;
  dist[static_cast<std::size_t>(start)] = 0.0;
  open.emplace(0.0, start);
  while (!open.empty()) {
    const auto [d, u] = open.top();
    open.pop();
    if (d > dist[static_cast<std::size_t>(u)]) continue;
    if (u == goal) break;
    const int uy = u / map.w, ux = u % map.w;
    const double risk_u = map.static_at(uy, ux);
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dy == 0 && dx == 0) continue;
        const int vy = uy + dy, vx = ux + dx;
        if (vy < 0 || vy >= map.h || vx < 0 || vx >= map.w) continue;
        if (grid_occupied(map, vy, vx, cfg)) continue;
        const int v = vy * map.w + vx;
        const double step = (dy != 0 && dx != 0) ? std::sqrt(2.0) : 1.0;
        const double edge =
            step * map.dl * (1.0 + cfg.cost_gain * 0.5 * (risk_u + map.static_at(vy, vx)));
        if (dist[static_cast<std::size_t>(u)] + edge <
            dist[static_cast<std::size_t>(v)]) {
          dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + edge;
          prev[static_cast<std::size_t>(v)] = u;
          open.emplace(dist[static_cast<std::size_t>(v)], v);
        }
      }
  }
  GridPath out;
  if (dist[static_cast<std::size_t>(goal)] == inf) return out;
  out.cost = dist[static_cast<std::size_t>(goal)];
  for (int c = goal; c != -1; c = prev[static_cast<std::size_t>(c)]) out.cells.push_back(c);
  std::reverse(out.cells.begin(), out.cells.end());
  return out;
}

inline bool line_is_free(const Srm& map, const Vec2& a, const Vec2& b,
                         const PlannerConfig& cfg) {
  const double len = (b - a).norm();
  const int steps = std::max(1, static_cast<int>(std::ceil(len / (0.5 * map.dl))));
  for (int s = 0; s <= steps; ++s) {
    const Vec2 q = a + (b - a) * (static_cast<double>(s) / steps);
    const Vec2 c = map.cell_coords(q);
    const int ix = static_cast<int>(std::floor(c.x()));
    const int iy = static_cast<int>(std::floor(c.y()));
    if (ix < 0 || ix >= map.w || iy < 0 || iy >= map.h) return false;
    if (grid_occupied(map, iy, ix, cfg)) return false;
  }
  return true;
}

}  // namespace detail

/// Shortest 8-connected path over the static layer, then line-of-sight
/// shortcutting. Dynamic risk plays no part here.
inline std::vector<Vec2> global_plan(const Srm& map, const Vec2& start, const Vec2& goal,
                                     const PlannerConfig& cfg = {}) {
  cfg.validate();
  const auto cell_of = [&](const Vec2& q, const char* what) {
    const Vec2 c = map.cell_coords(q);
    const int ix = static_cast<int>(std::floor(c.x()));
    const int iy = static_cast<int>(std::floor(c.y()));
    if (ix < 0 || ix >= map.w || iy < 0 || iy >= map.h)
      throw PlanError(std::string("plan: ") + what + " outside the costmap");
    return iy * map.w + ix;
  };
  const int s = cell_of(start, "start");
  const int g = cell_of(goal, "goal");
  if (detail::grid_occupied(map, s / map.w, s % map.w, cfg))
    throw PlanError("plan: start unreachable (occupied cell)");
  if (detail::grid_occupied(map, g / map.w, g % map.w, cfg))
    throw PlanError("plan: goal unreachable (occupied cell)");

  const detail::GridPath grid = detail::dijkstra_grid(map, s, g, cfg);
  if (grid.cells.empty()) throw PlanError("plan: goal unreachable (no path)");

  std::vector<Vec2> poly;
  poly.push_back(start);
  for (std::size_t i = 1; i + 1 < grid.cells.size(); ++i)
    poly.push_back(map.cell_center(grid.cells[i] % map.w, grid.cells[i] / map.w));
  poly.push_back(goal);

  std::vector<Vec2> out;
  out.push_back(poly.front());
  std::size_t i = 0;
  while (i + 1 < poly.size()) {
    std::size_t j = poly.size() - 1;
    while (j > i + 1 && !detail::line_is_free(map, poly[i], poly[j], cfg)) --j;
    out.push_back(poly[j]);
    i = j;
  }
  return out;
}

// ============================================================================
// Band construction
// ============================================================================

/// Samples the path into a timed band: spacing follows the current speed
/// (clamped to [0.2 m, 0.5 m]), stamps assume constant-speed traversal, and
/// the first pose is the robot state itself. Poses stop at the horizon.
inline Band init_band(const std::vector<Vec2>& path, const RobotState& state,
                      double horizon) {
  if (path.empty()) throw PlanError("plan: cannot band an empty path");
  if (!(horizon > 0.0)) throw PlanError("plan: band horizon must be positive");
  const double v_plan = std::max(state.speed, 0.5);  // keep stamps finite at rest
  const double spacing = std::clamp(state.speed * 0.4, 0.2, 0.5);

  Band band;
  band.poses.push_back({state.position.x(), state.position.y(), state.heading, state.stamp});

  // Walk the polyline, emitting a pose every `spacing` meters of arc.
  double carried = 0.0;    // arc length since the last emitted pose
  double traveled = 0.0;   // total arc length from the path start
  double last_heading = state.heading;
  bool horizon_hit = false;
  for (std::size_t i = 0; i + 1 < path.size() && !horizon_hit; ++i) {
    const Vec2 seg = path[i + 1] - path[i];
    const double seg_len = seg.norm();
    if (seg_len < 1e-12) continue;
    last_heading = std::atan2(seg.y(), seg.x());
    double along = 0.0;
    while (carried + (seg_len - along) >= spacing) {
      along += spacing - carried;
      carried = 0.0;
      traveled += spacing;
      const double stamp = state.stamp + traveled / v_plan;
      if (stamp > state.stamp + horizon) {
        horizon_hit = true;
        break;
      }
      const Vec2 p = path[i] + seg * (along / seg_len);
      band.poses.push_back({p.x(), p.y(), last_heading, stamp});
    }
    if (!horizon_hit) {
      traveled += seg_len - along;
      carried += seg_len - along;
    }
  }
  // Close with the path end unless the horizon already cut the band short.
  if (!horizon_hit && carried > 1e-9) {
    const double stamp = state.stamp + traveled / v_plan;
    if (stamp <= state.stamp + horizon)
      band.poses.push_back({path.back().x(), path.back().y(), last_heading, stamp});
  }
  if (band.poses.size() < 2) {
    // Degenerate input (zero-length path or immediate horizon): band the
    // start and the path end with one positive stamp gap.
    band.poses.resize(1);
    band.poses.push_back({path.back().x(), path.back().y(), last_heading,
                          state.stamp + spacing / v_plan});
  }
  band.goal_position = path.back();
  band.goal_heading = last_heading;
  return band;
}

// ============================================================================
// Band optimization
// ============================================================================

namespace detail {

struct BandGrad {
  std::vector<double> x, y, h, t;  // one slot per pose; pose 0 stays fixed
  explicit BandGrad(std::size_t n) : x(n, 0.0), y(n, 0.0), h(n, 0.0), t(n, 0.0) {}
};

inline double sign_of(double v) { return (v > 0.0) - (v < 0.0); }

/// Total band cost; accumulates the analytic gradient when grad != nullptr.
inline double band_cost(const std::vector<TimedPose2D>& P, const Srm& srm,
                        const PlannerConfig& cfg, BandGrad* grad) {
  const std::size_t n = P.size();
  double cost = 0.0;

  // Risk at every free pose. The dynamic lookup is zero past the horizon and
  // piecewise constant in t, so stamps feel risk only through the kinematic
  // terms.
  for (std::size_t i = 1; i < n; ++i) {
    const Vec2 p = P[i].position();
    const RiskSample ss = sample_static_risk(srm, p);
    const RiskSample ds = sample_dynamic_risk(srm, p, P[i].stamp);
    cost += cfg.w_static * ss.value + cfg.w_dynamic * ds.value;
    if (grad) {
      const Vec2 g = cfg.w_static * ss.gradient + cfg.w_dynamic * ds.gradient;
      grad->x[i] += g.x();
      grad->y[i] += g.y();
    }
  }

  // Per-segment speeds and their partials, reused by the acceleration term.
  std::vector<double> seg_v(n - 1), seg_dt(n - 1), seg_len(n - 1);
  std::vector<Vec2> seg_dir(n - 1);  // unit vector, zero for coincident poses
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const Vec2 d = P[i + 1].position() - P[i].position();
    seg_dt[i] = P[i + 1].stamp - P[i].stamp;
    seg_len[i] = d.norm();
    seg_dir[i] = seg_len[i] > 1e-12 ? Vec2(d / seg_len[i]) : Vec2::Zero();
    seg_v[i] = seg_len[i] / seg_dt[i];
  }
  // Adds w * dv to the gradient through segment i's speed.
  const auto add_dv = [&](std::size_t i, double wdv) {
    if (!grad) return;
    const Vec2 gp = seg_dir[i] * (wdv / seg_dt[i]);
    grad->x[i + 1] += gp.x();
    grad->y[i + 1] += gp.y();
    grad->x[i] -= gp.x();
    grad->y[i] -= gp.y();
    grad->t[i + 1] += wdv * (-seg_v[i] / seg_dt[i]);
    grad->t[i] += wdv * (seg_v[i] / seg_dt[i]);
  };

  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double dt = seg_dt[i];
    // Linear velocity hinge.
    const double hv = seg_v[i] - cfg.v_max;
    if (hv > 0.0) {
      cost += cfg.w_velocity * hv * hv;
      add_dv(i, 2.0 * cfg.w_velocity * hv);
    }
    // Angular velocity hinge.
    const double dh = wrap_angle(P[i + 1].heading - P[i].heading);
    const double om = dh / dt;
    const double hw = std::abs(om) - cfg.omega_max;
    if (hw > 0.0) {
      cost += cfg.w_velocity * hw * hw;
      if (grad) {
        const double g = 2.0 * cfg.w_velocity * hw;
        grad->h[i + 1] += g * sign_of(om) / dt;
        grad->h[i] -= g * sign_of(om) / dt;
        grad->t[i + 1] += g * (-std::abs(om) / dt);
        grad->t[i] += g * (std::abs(om) / dt);
      }
    }
    // Nonholonomy: squared lateral velocity relative to the pose heading.
    const Vec2 d = P[i + 1].position() - P[i].position();
    const double sh = std::sin(P[i].heading), ch = std::cos(P[i].heading);
    const double lat = (-sh * d.x() + ch * d.y()) / dt;
    cost += cfg.w_nonholonomy * lat * lat;
    if (grad) {
      const double g = 2.0 * cfg.w_nonholonomy * lat;
      grad->x[i + 1] += g * (-sh / dt);
      grad->y[i + 1] += g * (ch / dt);
      grad->x[i] -= g * (-sh / dt);
      grad->y[i] -= g * (ch / dt);
      grad->h[i] += g * ((-ch * d.x() - sh * d.y()) / dt);
      grad->t[i + 1] += g * (-lat / dt);
      grad->t[i] += g * (lat / dt);
    }
    // Time cost: duration beyond the distance-limited minimum. A straight
    // band cruising exactly at v_max sits on the (smooth) floor of this and
    // the velocity hinge, which is what makes it a stationary point.
    const double slack = dt - seg_len[i] / cfg.v_max;
    if (slack > 0.0) {
      cost += cfg.w_time * slack * slack;
      if (grad) {
        const double g = 2.0 * cfg.w_time * slack;
        grad->t[i + 1] += g;
        grad->t[i] -= g;
        const Vec2 gp = seg_dir[i] * (-g / cfg.v_max);
        grad->x[i + 1] += gp.x();
        grad->y[i + 1] += gp.y();
        grad->x[i] -= gp.x();
        grad->y[i] -= gp.y();
      }
    }
  }

  // Acceleration hinge across consecutive segments.
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double m = 0.5 * (seg_dt[i - 1] + seg_dt[i]);
    const double a = (seg_v[i] - seg_v[i - 1]) / m;
    const double ha = std::abs(a) - cfg.a_max;
    if (ha <= 0.0) continue;
    cost += cfg.w_accel * ha * ha;
    if (grad) {
      const double g = 2.0 * cfg.w_accel * ha * sign_of(a);
      add_dv(i, g / m);
      add_dv(i - 1, -g / m);
      // m depends only on the outer stamps: m = (t_{i+1} - t_{i-1}) / 2.
      grad->t[i + 1] += -g * a / m * 0.5;
      grad->t[i - 1] += g * a / m * 0.5;
    }
  }

  // Path adherence toward the anchor positions captured by the caller is
  // handled there; see optimize_band.
  return cost;
}

}  // namespace detail

/// First-order minimization of the band cost with the first pose held fixed
/// and stamps kept at least dt_min apart. Only strictly improving steps are
/// taken, so the returned band never costs more than the input.
inline Band optimize_band(const Band& band, const Srm& srm, const PlannerConfig& cfg = {}) {
  cfg.validate();
  if (band.poses.size() < 2) throw PlanError("plan: band needs at least two poses");
  for (std::size_t i = 1; i < band.poses.size(); ++i)
    if (!(band.poses[i].stamp > band.poses[i - 1].stamp))
      throw PlanError("plan: band stamps must increase");

  Band out = band;
  const std::size_t n = out.poses.size();
  const std::vector<TimedPose2D> anchors = band.poses;

  const auto project = [&](std::vector<TimedPose2D>& P) {
    for (std::size_t i = 1; i < n; ++i)
      P[i].stamp = std::max(P[i].stamp, P[i - 1].stamp + cfg.dt_min);
  };
  const auto total_cost = [&](const std::vector<TimedPose2D>& P,
                              detail::BandGrad* grad) {
    double c = detail::band_cost(P, srm, cfg, grad);
    for (std::size_t i = 1; i < n; ++i) {
      const double ax = P[i].x - anchors[i].x, ay = P[i].y - anchors[i].y;
      c += cfg.w_path * (ax * ax + ay * ay);
      if (grad) {
        grad->x[i] += 2.0 * cfg.w_path * ax;
        grad->y[i] += 2.0 * cfg.w_path * ay;
      }
    }
    return c;
  };

  project(out.poses);
  detail::BandGrad grad(n);
  double cost = total_cost(out.poses, &grad);
  if (!std::isfinite(cost)) throw PlanError("plan: non-finite band cost");

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    double gmax = 0.0;
    for (std::size_t i = 1; i < n; ++i)
      gmax = std::max({gmax, std::abs(grad.x[i]), std::abs(grad.y[i]),
                       std::abs(grad.h[i]), std::abs(grad.t[i])});
    if (gmax < 1e-12) break;

    double step = cfg.step_size;
    bool improved = false;
    for (int trial = 0; trial < 30 && !improved; ++trial, step *= 0.5) {
      std::vector<TimedPose2D> cand = out.poses;
      for (std::size_t i = 1; i < n; ++i) {
        cand[i].x -= step * grad.x[i];
        cand[i].y -= step * grad.y[i];
        cand[i].heading -= step * grad.h[i];
        cand[i].stamp -= step * grad.t[i];
      }
      project(cand);
      const double c = total_cost(cand, nullptr);
      if (!std::isfinite(c)) throw PlanError("plan: non-finite band cost");
      if (c < cost) {
        out.poses = std::move(cand);
        cost = c;
        improved = true;
      }
    }
    if (!improved) break;
    grad = detail::BandGrad(n);
    cost = total_cost(out.poses, &grad);
  }
  return out;
}

// ============================================================================
// Control extraction
// ============================================================================

/// Velocity command from the band's first segment: forward speed is the
/// displacement projected on the current heading, both rates clamped to the
/// configured limits.
inline Command extract_control(const Band& band, const PlannerConfig& cfg = {}) {
  cfg.validate();
  if (band.poses.size() < 2) throw PlanError("plan: band needs at least two poses");
  const TimedPose2D& a = band.poses[0];
  const TimedPose2D& b = band.poses[1];
  const double dt = b.stamp - a.stamp;
  Command cmd;
  if (!(dt > 1e-9)) {
    cmd.degenerate = true;
    return cmd;
  }
  const Vec2 d = b.position() - a.position();
  const double v = (d.x() * std::cos(a.heading) + d.y() * std::sin(a.heading)) / dt;
  const double om = wrap_angle(b.heading - a.heading) / dt;
  cmd.v = std::clamp(v, -cfg.v_max, cfg.v_max);
  cmd.omega = std::clamp(om, -cfg.omega_max, cfg.omega_max);
  return cmd;
}

}  // namespace risknav
