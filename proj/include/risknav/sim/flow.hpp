// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "risknav/predict/predictors.hpp"
#include "risknav/sim/world.hpp"

namespace risknav {

// ============================================================================
// Pedestrian flow
//
// Actors walk toward a goal site under a social-force model: velocity relaxes
// toward goal-directed motion at the preferred speed, with exponential
// repulsion from other actors and walls. The robot repels an actor only when
// their centers are closer than robot_range; beyond that pedestrians ignore
// it and the robot has to do the avoiding. Repulsion between agents is
// rotated slightly clockwise so that two actors meeting head on break the
// symmetry the same way every time.
//
// All randomness (spawn positions, goal redraws) comes from the caller's
// mt19937_64 through fixed arithmetic, never through std distributions, so a
// seed reproduces the same flow on every platform. Stepping an empty crowd
// consumes no draws.
// ============================================================================

struct FlowConfig {
  double preferred_speed = 1.2;  // m/s, free-walking speed
  double speed_margin = 0.1;     // actors never exceed preferred * (1 + margin)
  double radius = 0.3;           // body disc radius, m
  double height = 1.8;           // body cylinder height, m
  double relax_time = 0.5;       // s, velocity relaxation toward the goal
  double actor_gain = 3.0;       // m/s^2 of actor-actor repulsion at contact
  double actor_falloff = 0.5;    // m, actor-actor exponential falloff
  double wall_gain = 3.0;        // m/s^2 of wall repulsion at contact
  double wall_falloff = 0.2;     // m, wall exponential falloff
  double robot_gain = 8.0;       // m/s^2 of robot repulsion at zero distance
  double robot_range = 0.5;      // m, centers closer than this repel; else ignored
  double dodge = 0.5;            // rad, clockwise rotation of agent repulsion
  double goal_tolerance = 0.3;   // m, arrival distance that triggers a redraw
};

/// One pedestrian. `goal` indexes World::goals.
struct FlowActor {
  ActorState state;
  int goal = 0;
  double preferred_speed = 1.2;
  double height = 1.8;
};

namespace detail {

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform index in [0, n). The slight modulo bias is irrelevant for the
/// simulation; what matters is that the draw is identical on every platform.
inline int uniform_index(std::mt19937_64& rng, int n) {
  return static_cast<int>(rng() % static_cast<std::uint64_t>(n));
}

}  // namespace detail

/// Places `n` actors uniformly inside the boundary polygon, each aimed at a
/// uniformly drawn goal site, at rest, stamped `stamp`. Throws DataError when
/// the world has no boundary or no goal sites, or when rejection sampling
/// cannot place a point (degenerate boundary).
inline std::vector<FlowActor> spawn_actors(const World& w, int n, double stamp,
                                           std::mt19937_64& rng, const FlowConfig& cfg = {}) {
  if (n <= 0) return {};
  if (w.limits.size() < 3) throw DataError("flow: spawning actors needs a boundary polygon");
  if (w.goals.empty()) throw DataError("flow: spawning actors needs at least one goal site");
  Vec2 lo = w.limits.front();
  Vec2 hi = lo;
  for (const Vec2& v : w.limits) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  std::vector<FlowActor> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    FlowActor a;
    bool placed = false;
    for (int tries = 0; tries < 1000 && !placed; ++tries) {
      const Vec2 p(lo.x() + detail::uniform01(rng) * (hi.x() - lo.x()),
                   lo.y() + detail::uniform01(rng) * (hi.y() - lo.y()));
      if (point_in_polygon(p, w.limits)) {
        a.state.position = p;
        placed = true;
      }
    }
    if (!placed) throw DataError("flow: could not place an actor inside the boundary");
    a.state.velocity = Vec2::Zero();
    a.state.radius = cfg.radius;
    a.state.stamp = stamp;
    a.preferred_speed = cfg.preferred_speed;
    a.height = cfg.height;
    a.goal = detail::uniform_index(rng, static_cast<int>(w.goals.size()));
    out.push_back(a);
  }
  return out;
}

/// Advances every actor by dt under the social-force model. Forces are
/// evaluated on a snapshot of the current states, so the update is order
/// independent. Pass nullopt for `robot` to evolve the crowd as if no robot
/// existed. An actor arriving within goal_tolerance of its site draws a new
/// goal (uniform over the other sites) from `rng`; nothing else consumes
/// randomness. Speed never exceeds preferred * (1 + speed_margin).
inline void step_actors(const World& w, std::vector<FlowActor>& actors,
                        const std::optional<Vec2>& robot, double dt, std::mt19937_64& rng,
                        const FlowConfig& cfg = {}) {
  if (!(dt > 0.0)) throw DataError("flow: step needs a positive dt");
  const std::size_t n = actors.size();
  if (n == 0) return;

  std::vector<Vec2> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = actors[i].state.position;
  const Eigen::Rotation2Dd dodge(-cfg.dodge);

  for (std::size_t i = 0; i < n; ++i) {
    FlowActor& a = actors[i];
    const Vec2 p = positions[i];
    Vec2 force = Vec2::Zero();

    // Relaxation toward goal-directed motion at the preferred speed.
    const Vec2 to_goal = w.goals[static_cast<std::size_t>(a.goal)] - p;
    const double dist_goal = to_goal.norm();
    const Vec2 desired =
        dist_goal > 1e-9 ? Vec2(to_goal / dist_goal * a.preferred_speed) : Vec2::Zero();
    force += (desired - a.state.velocity) / cfg.relax_time;

    // Repulsion from the other actors, rotated clockwise to break head-on
    // symmetry deterministically.
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const Vec2 d = p - positions[j];
      const double dist = d.norm();
      if (dist <= 1e-9) continue;  // coincident: no defined direction
      const double contact = a.state.radius + actors[j].state.radius;
      const double mag = cfg.actor_gain * std::exp((contact - dist) / cfg.actor_falloff);
      force += dodge * Vec2(d / dist * mag);
    }

    // Repulsion from every wall panel along the outward normal.
    for (const Wall& wall : w.walls) {
      const Vec2 q = closest_on_segment(p, wall.a, wall.b);
      const Vec2 d = p - q;
      const double dist = d.norm();
      if (dist <= 1e-9) continue;
      const double mag = cfg.wall_gain * std::exp((a.state.radius - dist) / cfg.wall_falloff);
      force += d / dist * mag;
    }

    // The robot repels only when nearly colliding; pedestrians otherwise
    // treat it as furniture.
    if (robot) {
      const Vec2 d = p - *robot;
      const double dist = d.norm();
      if (dist > 1e-9 && dist < cfg.robot_range) {
        const double mag = cfg.robot_gain * (cfg.robot_range - dist) / cfg.robot_range;
        force += dodge * Vec2(d / dist * mag);
      }
    }

    a.state.velocity += force * dt;
    const double cap = a.preferred_speed * (1.0 + cfg.speed_margin);
    const double speed = a.state.velocity.norm();
    if (speed > cap) a.state.velocity *= cap / speed;
    a.state.position += a.state.velocity * dt;
    a.state.stamp += dt;
  }

  // Goal redraws after the synchronous update, in index order.
  const int n_goals = static_cast<int>(w.goals.size());
  for (FlowActor& a : actors) {
    const Vec2 site = w.goals[static_cast<std::size_t>(a.goal)];
    if ((a.state.position - site).norm() < cfg.goal_tolerance && n_goals > 1) {
      const int offset = 1 + detail::uniform_index(rng, n_goals - 1);
      a.goal = (a.goal + offset) % n_goals;
    }
  }
}

}  // namespace risknav
