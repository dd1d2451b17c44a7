// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "risknav/sim/session.hpp"

using Catch::Approx;
using risknav::ActorSnap;
using risknav::Command;
using risknav::ConfigError;
using risknav::DataError;
using risknav::FlowActor;
using risknav::FlowConfig;
using risknav::LidarConfig;
using risknav::Metrics;
using risknav::Pose;
using risknav::PredictorKind;
using risknav::RobotConfig;
using risknav::RobotState;
using risknav::SemanticLabel;
using risknav::SessionLog;
using risknav::SimConfig;
using risknav::SimScan;
using risknav::TickRecord;
using risknav::Vec2;
using risknav::Vec3;
using risknav::Wall;
using risknav::World;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

/// Straight corridor along +x with no pedestrians.
World corridor_world() {
  return risknav::parse_world(
      "wall -2 -1.5 8 -1.5 2.5\n"
      "wall -2 1.5 8 1.5 2.5\n"
      "waypoint 0 0\n"
      "waypoint 6 0\n");
}

/// Wider corridor with goal sites at both ends for crossing pedestrians.
World hall_world() {
  return risknav::parse_world(
      "wall -8 -2 8 -2 2.5\n"
      "wall -8 2 8 2 2.5\n"
      "limit -8 -2\nlimit 8 -2\nlimit 8 2\nlimit -8 2\n"
      "goal -7 0\n"
      "goal 7 0\n"
      "waypoint -6 0\n"
      "waypoint 6 0\n");
}

FlowActor make_actor(const Vec2& pos, const Vec2& vel, int goal) {
  FlowActor a;
  a.state.position = pos;
  a.state.velocity = vel;
  a.state.stamp = 0.0;
  a.goal = goal;
  return a;
}

/// Small fast sensing and prediction setup for closed-loop tests.
SimConfig fast_config() {
  SimConfig cfg;
  cfg.lidar.rings = {-0.2, -0.05, 0.05, 0.2};
  cfg.lidar.azimuth_step = risknav::deg2rad(1.0);
  cfg.sogm.horizon = 2.0;
  cfg.sogm.r_in = 4.0;
  return cfg;
}

double closest_approach(const SessionLog& log) {
  double best = std::numeric_limits<double>::infinity();
  for (const TickRecord& r : log.ticks) best = std::min(best, r.min_actor_distance);
  return best;
}

std::string log_bytes(SessionLog log, const std::string& predictor_override = "") {
  if (!predictor_override.empty()) log.predictor = predictor_override;
  std::ostringstream os;
  risknav::write_log(os, log);
  return os.str();
}

// ----------------------------------------------------------------------------
// Brute-force ray casting used as the lidar oracle.
// ----------------------------------------------------------------------------

struct BruteHit {
  double range = 0.0;
  SemanticLabel label = SemanticLabel::Ground;
  int actor = -1;
};

std::optional<BruteHit> brute_ray(const World& w, const std::vector<FlowActor>& actors,
                                  const Vec3& o, const Vec3& d, double stamp,
                                  const LidarConfig& cfg) {
  std::optional<BruteHit> best;
  const auto consider = [&](double t, SemanticLabel label, int actor) {
    if (t < cfg.min_range || t >= cfg.max_range) return;
    if (!best || t < best->range) best = BruteHit{t, label, actor};
  };
  if (d.z() < -1e-12 && o.z() > 0.0) consider(-o.z() / d.z(), SemanticLabel::Ground, -1);
  for (const Wall& wall : w.walls) {
    Eigen::Matrix2d A;
    A.col(0) = d.head<2>();
    A.col(1) = wall.a - wall.b;
    if (std::abs(A.determinant()) <= 1e-12) continue;
    const Vec2 sol = A.inverse() * Vec2(wall.a - o.head<2>());
    const double t = sol.x(), s = sol.y();
    if (t <= 0.0 || s < 0.0 || s > 1.0) continue;
    const double z = o.z() + t * d.z();
    if (z >= 0.0 && z <= wall.height) consider(t, SemanticLabel::Permanent, -1);
  }
  for (std::size_t i = 0; i < actors.size(); ++i) {
    const risknav::ActorState& a = actors[i].state;
    const Vec2 center = a.position + a.velocity * (stamp - a.stamp);
    const Vec2 oc = o.head<2>() - center;
    const Vec2 dxy = d.head<2>();
    const double a2 = dxy.squaredNorm();
    if (a2 <= 1e-12) continue;
    const double bh = oc.dot(dxy);
    const double c0 = oc.squaredNorm() - a.radius * a.radius;
    const double disc = bh * bh - a2 * c0;
    if (disc < 0.0) continue;
    for (const double sign : {-1.0, 1.0}) {
      const double t = (-bh + sign * std::sqrt(disc)) / a2;
      const double z = o.z() + t * d.z();
      if (t >= cfg.min_range && z >= 0.0 && z <= actors[i].height) {
        consider(t, SemanticLabel::Dynamic, static_cast<int>(i));
        break;  // roots are ordered, the first admissible one is nearest
      }
    }
  }
  return best;
}

}  // namespace

// ============================================================================
// World parsing
// ============================================================================

TEST_CASE("world files parse primitives and reject malformed input", "[sim]") {
  const World w = risknav::parse_world(
      "# atrium fragment\n"
      "\n"
      "wall 0 0 4 0 2.5\n"
      "limit -5 -5\nlimit 5 -5\nlimit 5 5\nlimit -5 5\n"
      "goal 1 1\n"
      "goal -2 3\n"
      "waypoint 0 1\n"
      "waypoint 2 1\n");
  REQUIRE(w.walls.size() == 1);
  CHECK(w.walls[0].b.x() == 4.0);
  CHECK(w.walls[0].height == 2.5);
  REQUIRE(w.limits.size() == 4);
  REQUIRE(w.goals.size() == 2);
  REQUIRE(w.waypoints.size() == 2);

  CHECK(risknav::point_in_polygon(Vec2(0, 0), w.limits));
  CHECK(risknav::point_in_polygon(Vec2(4.9, -4.9), w.limits));
  CHECK_FALSE(risknav::point_in_polygon(Vec2(5.1, 0), w.limits));
  CHECK_FALSE(risknav::point_in_polygon(Vec2(-6, 12), w.limits));

  CHECK_THROWS_AS(risknav::parse_world("wall 0 0 1 0\n"), DataError);  // missing height
  CHECK_THROWS_AS(risknav::parse_world("wall 0 0 0 0 2\n"), DataError);
  CHECK_THROWS_AS(risknav::parse_world("wall 0 0 1 0 0\n"), DataError);
  CHECK_THROWS_AS(risknav::parse_world("pillar 0 0\n"), DataError);
  CHECK_THROWS_AS(risknav::parse_world("limit 0 0\nlimit 1 0\n"), DataError);
  CHECK_THROWS_AS(risknav::parse_world("goal 0 0\n"), DataError);  // no boundary at all
  CHECK_THROWS_WITH(risknav::parse_world("waypoint 0 0\nwaypoint 1 oops\n"),
                    Catch::Matchers::ContainsSubstring("line 2"));
  // Goal outside the boundary polygon.
  CHECK_THROWS_AS(
      risknav::parse_world("limit 0 0\nlimit 1 0\nlimit 1 1\nlimit 0 1\ngoal 3 3\n"),
      DataError);
}

// ============================================================================
// Pedestrian flow
// ============================================================================

TEST_CASE("a lone pedestrian reaches its goal near the preferred pace", "[sim]") {
  const World w = risknav::parse_world(
      "limit -10 -10\nlimit 10 -10\nlimit 10 10\nlimit -10 10\n"
      "goal -3 0\n"
      "goal 3 0\n");
  std::mt19937_64 rng(1);
  std::vector<FlowActor> actors = {make_actor(Vec2(-3, 0), Vec2::Zero(), 1)};
  const FlowConfig cfg;
  const double dt = 0.05;
  const double bound = (6.0 / cfg.preferred_speed) * 1.2;  // path over speed, plus 20%

  double arrived_at = -1.0;
  for (int i = 0; i * dt < bound + 0.5 && arrived_at < 0.0; ++i) {
    risknav::step_actors(w, actors, std::nullopt, dt, rng, cfg);
    const double speed = actors[0].state.velocity.norm();
    REQUIRE(speed <= cfg.preferred_speed * (1.0 + cfg.speed_margin) + 1e-12);
    if ((actors[0].state.position - Vec2(3, 0)).norm() < cfg.goal_tolerance)
      arrived_at = actors[0].state.stamp;
  }
  REQUIRE(arrived_at > 0.0);
  CHECK(arrived_at <= bound);
}

TEST_CASE("head-on pedestrians separate laterally at closest approach", "[sim]") {
  const World w = risknav::parse_world(
      "limit -10 -10\nlimit 10 -10\nlimit 10 10\nlimit -10 10\n"
      "goal -4 0\n"
      "goal 4 0\n");
  std::mt19937_64 rng(2);
  std::vector<FlowActor> actors = {make_actor(Vec2(-3, 0), Vec2(1.2, 0), 1),
                                   make_actor(Vec2(3, 0), Vec2(-1.2, 0), 0)};
  double min_dist = std::numeric_limits<double>::infinity();
  double lateral_at_min = 0.0;
  for (int i = 0; i < 120; ++i) {
    risknav::step_actors(w, actors, std::nullopt, 0.05, rng);
    const double d = (actors[0].state.position - actors[1].state.position).norm();
    if (d < min_dist) {
      min_dist = d;
      lateral_at_min = std::abs(actors[0].state.position.y() - actors[1].state.position.y());
    }
  }
  REQUIRE(min_dist < 2.0);  // they actually met
  CHECK(lateral_at_min > 0.3);
}

TEST_CASE("flow stepping consumes randomness only for goal redraws", "[sim]") {
  const World w = risknav::parse_world(
      "limit -10 -10\nlimit 10 -10\nlimit 10 10\nlimit -10 10\n"
      "goal -3 0\n"
      "goal 3 0\n");
  std::mt19937_64 rng(3);
  const std::mt19937_64 before = rng;

  std::vector<FlowActor> none;
  risknav::step_actors(w, none, std::nullopt, 0.05, rng);
  CHECK(rng == before);
  CHECK(none.empty());

  std::vector<FlowActor> far = {make_actor(Vec2(0, 5), Vec2::Zero(), 0)};
  risknav::step_actors(w, far, std::nullopt, 0.05, rng);
  CHECK(rng == before);  // no arrival, no draw

  std::vector<FlowActor> arriving = {make_actor(Vec2(-3.01, 0), Vec2::Zero(), 0)};
  risknav::step_actors(w, arriving, std::nullopt, 0.05, rng);
  CHECK_FALSE(rng == before);
  CHECK(arriving[0].goal == 1);  // redraw excludes the reached site
}

TEST_CASE("the robot repels pedestrians only inside the contact range", "[sim]") {
  const World w = risknav::parse_world(
      "limit -10 -10\nlimit 10 -10\nlimit 10 10\nlimit -10 10\n"
      "goal 5 0\n");
  const std::vector<FlowActor> start = {make_actor(Vec2(0, 0), Vec2(1.2, 0), 0)};

  std::mt19937_64 rng_a(4), rng_b(4);
  std::vector<FlowActor> ignored = start;
  std::vector<FlowActor> unaffected = start;
  risknav::step_actors(w, ignored, Vec2(0, 0.6), 0.05, rng_a);  // outside the 0.5 m gate
  risknav::step_actors(w, unaffected, std::nullopt, 0.05, rng_b);
  CHECK(ignored[0].state.position == unaffected[0].state.position);
  CHECK(ignored[0].state.velocity == unaffected[0].state.velocity);

  std::vector<FlowActor> pushed = start;
  risknav::step_actors(w, pushed, Vec2(0, 0.3), 0.05, rng_a);  // inside the gate
  CHECK_FALSE(pushed[0].state.velocity == unaffected[0].state.velocity);
  CHECK(pushed[0].state.velocity.y() < unaffected[0].state.velocity.y());  // pushed away
}

TEST_CASE("spawning fills the boundary and needs boundary and goals", "[sim]") {
  const World w = risknav::parse_world(
      "limit -4 -2\nlimit 4 -2\nlimit 4 2\nlimit -4 2\n"
      "goal 0 0\n"
      "goal 3 1\n");
  std::mt19937_64 rng(5);
  const auto actors = risknav::spawn_actors(w, 25, 7.5, rng);
  REQUIRE(actors.size() == 25);
  for (const FlowActor& a : actors) {
    CHECK(risknav::point_in_polygon(a.state.position, w.limits));
    CHECK(a.state.velocity.norm() == 0.0);
    CHECK(a.state.stamp == 7.5);
    CHECK(a.goal >= 0);
    CHECK(a.goal < 2);
  }
  const World no_goals = risknav::parse_world("limit -1 -1\nlimit 1 -1\nlimit 1 1\nlimit -1 1\n");
  CHECK_THROWS_AS(risknav::spawn_actors(no_goals, 1, 0.0, rng), DataError);
  const World bare;
  CHECK_THROWS_AS(risknav::spawn_actors(bare, 1, 0.0, rng), DataError);
}

// ============================================================================
// Lidar synthesis
// ============================================================================

TEST_CASE("a level ring returns the exact range to a facing wall", "[sim]") {
  const World w = risknav::parse_world("wall 5 -10 5 10 3\n");
  LidarConfig cfg;
  cfg.rings = {0.0};
  cfg.azimuth_step = risknav::kPi / 2.0;  // four columns
  const Pose sensor = risknav::detail::sensor_pose(RobotState{}, 0.8);

  const SimScan scan = risknav::simulate_lidar(w, {}, {&sensor, 1}, 0.0, cfg);
  REQUIRE(scan.frame.points.size() == 1);  // only the forward column hits anything
  const risknav::TimedPoint& p = scan.frame.points[0];
  CHECK(p.position.x() == Approx(5.0).margin(1e-9));
  CHECK(p.position.y() == Approx(0.0).margin(1e-12));
  CHECK(p.position.z() == Approx(0.0).margin(1e-12));
  CHECK(p.stamp == 0.0);
  CHECK(p.ring == 0);
  CHECK(scan.labels[0] == SemanticLabel::Permanent);
  CHECK(scan.actor[0] == -1);
  CHECK(scan.world[0].x() == Approx(5.0).margin(1e-9));
  CHECK(scan.world[0].z() == Approx(0.8).margin(1e-12));
  CHECK(scan.frame.t0 == 0.0);
  CHECK(scan.frame.t1 == Approx(0.1));
  scan.frame.validate();
}

TEST_CASE("a moving sensor smears wall returns across the revolution", "[sim]") {
  const World w = risknav::parse_world("wall 5 -10 5 10 3\n");
  LidarConfig cfg;
  cfg.rings = {0.0};

  RobotState s0, s1;
  s0.position = Vec2(0, 0);
  s0.stamp = 0.0;
  s1.position = Vec2(0.1, 0);  // 1 m/s along +x
  s1.stamp = 0.1;
  const std::vector<Pose> poses = {risknav::detail::sensor_pose(s0, 0.8),
                                   risknav::detail::sensor_pose(s1, 0.8)};

  const SimScan scan = risknav::simulate_lidar(w, {}, poses, 0.0, cfg);
  REQUIRE(scan.frame.points.size() > 100);
  const risknav::TimedPoint& first = scan.frame.points.front();
  const risknav::TimedPoint& last = scan.frame.points.back();
  REQUIRE(first.stamp == 0.0);
  REQUIRE(last.stamp > 0.099);

  // The sensor advanced ~0.1 m between the azimuth-0 and azimuth-2pi
  // columns, and the sensor-frame x of a plane at fixed world x shrinks by
  // exactly the distance traveled.
  const int n_cols = cfg.n_columns();
  const double traveled = 0.1 * (n_cols - 1) / n_cols;
  CHECK(first.position.x() - last.position.x() == Approx(traveled).margin(1e-9));
  CHECK(first.position.x() - last.position.x() == Approx(0.1).margin(1e-3));
}

TEST_CASE("a pedestrian shadows the wall behind it", "[sim]") {
  const World w = risknav::parse_world("wall 5 -10 5 10 3\n");
  const std::vector<FlowActor> actors = {make_actor(Vec2(2.5, 0), Vec2::Zero(), 0)};
  LidarConfig cfg;
  cfg.rings = {0.0};
  cfg.azimuth_step = 0.02;
  const Pose sensor = risknav::detail::sensor_pose(RobotState{}, 0.8);

  const SimScan scan = risknav::simulate_lidar(w, actors, {&sensor, 1}, 0.0, cfg);
  REQUIRE(scan.frame.points.size() > 10);

  // Forward column: the body disc occludes the wall at exactly 2.5 - 0.3.
  CHECK(scan.frame.points[0].position.x() == Approx(2.2).margin(1e-9));
  CHECK(scan.labels[0] == SemanticLabel::Dynamic);
  CHECK(scan.actor[0] == 0);

  // Columns inside the angular shadow hit the body; just outside, the wall.
  const double shadow = std::asin(0.3 / 2.5);
  const int n_cols = cfg.n_columns();
  bool checked_inside = false, checked_outside = false;
  for (std::size_t i = 0; i < scan.frame.points.size(); ++i) {
    const int col = static_cast<int>(std::lround(scan.frame.points[i].stamp / 0.1 * n_cols));
    double az = 2.0 * risknav::kPi * col / n_cols;
    if (az > risknav::kPi) az -= 2.0 * risknav::kPi;
    if (std::abs(az) > 0.5) continue;  // beyond the wall's angular footprint here
    if (std::abs(az) < shadow - 0.01) {
      CHECK(scan.labels[i] == SemanticLabel::Dynamic);
      checked_inside = true;
    } else if (std::abs(az) > shadow + 0.01) {
      CHECK(scan.labels[i] == SemanticLabel::Permanent);
      checked_outside = true;
    }
  }
  CHECK(checked_inside);
  CHECK(checked_outside);
}

TEST_CASE("every return matches a brute-force cast over all surfaces", "[sim]") {
  for (const std::uint64_t seed : {11u, 12u, 13u, 14u}) {
    std::mt19937_64 rng(seed);
    const auto u = [&](double lo, double hi) {
      return lo + (hi - lo) * risknav::detail::uniform01(rng);
    };

    World w;
    for (int i = 0; i < 5; ++i) {
      Wall wall;
      wall.a = Vec2(u(-8, 8), u(-8, 8));
      wall.b = wall.a + Vec2(u(-6, 6), u(-6, 6));
      if ((wall.b - wall.a).norm() < 0.5) wall.b = wall.a + Vec2(1.0, 0.5);
      wall.height = 50.0;  // keep rays away from the top edge
      w.walls.push_back(wall);
    }
    std::vector<FlowActor> actors;
    for (int i = 0; i < 3; ++i) {
      FlowActor a = make_actor(Vec2(u(-6, 6), u(-6, 6)), Vec2(u(-1.5, 1.5), u(-1.5, 1.5)), 0);
      a.state.stamp = u(-0.05, 0.05);
      a.height = 5.0;
      actors.push_back(a);
    }

    LidarConfig cfg;
    cfg.rings = {-0.3, -0.1, 0.05, 0.2};
    cfg.azimuth_step = 0.05;
    RobotState s0, s1;
    s0.position = Vec2(u(-1, 1), u(-1, 1));
    s0.heading = u(-risknav::kPi, risknav::kPi);
    s0.stamp = 0.0;
    s1.position = s0.position + Vec2(u(-0.15, 0.15), u(-0.15, 0.15));
    s1.heading = s0.heading + u(-0.1, 0.1);
    s1.stamp = 0.1;
    const double sensor_z = u(0.5, 1.0);
    const std::vector<Pose> poses = {risknav::detail::sensor_pose(s0, sensor_z),
                                     risknav::detail::sensor_pose(s1, sensor_z)};
    const SimScan scan = risknav::simulate_lidar(w, actors, poses, 0.0, cfg);

    const int n_cols = cfg.n_columns();
    std::size_t idx = 0;
    for (int col = 0; col < n_cols; ++col) {
      const double stamp = 0.0 + cfg.period * col / n_cols;
      const double az = 2.0 * risknav::kPi * col / n_cols;
      const Pose pose = risknav::detail::pose_at(poses, stamp);
      for (int ring = 0; ring < static_cast<int>(cfg.rings.size()); ++ring) {
        const double elev = cfg.rings[static_cast<std::size_t>(ring)];
        const Vec3 dir_sensor(std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az),
                              std::sin(elev));
        const auto hit = brute_ray(w, actors, pose.t, pose.q * dir_sensor, stamp, cfg);
        if (!hit) continue;
        REQUIRE(idx < scan.frame.points.size());
        const risknav::TimedPoint& p = scan.frame.points[idx];
        REQUIRE(p.stamp == stamp);
        REQUIRE(p.ring == ring);
        CHECK(p.position.norm() == Approx(hit->range).margin(1e-9));
        CHECK(scan.labels[idx] == hit->label);
        CHECK(scan.actor[idx] == hit->actor);
        ++idx;
      }
    }
    CHECK(idx == scan.frame.points.size());
  }
}

TEST_CASE("lidar validates its configuration and inputs", "[sim]") {
  const World w;
  const Pose sensor = risknav::detail::sensor_pose(RobotState{}, 0.8);
  LidarConfig cfg;
  cfg.rings = {};
  CHECK_THROWS_AS(risknav::simulate_lidar(w, {}, {&sensor, 1}, 0.0, cfg), ConfigError);
  cfg = LidarConfig{};
  cfg.rings = {1.6};  // beyond 90 degrees
  CHECK_THROWS_AS(risknav::simulate_lidar(w, {}, {&sensor, 1}, 0.0, cfg), ConfigError);
  cfg = LidarConfig{};
  cfg.max_range = 0.05;  // below min_range
  CHECK_THROWS_AS(risknav::simulate_lidar(w, {}, {&sensor, 1}, 0.0, cfg), ConfigError);
  cfg = LidarConfig{};
  cfg.sigma = 0.01;
  CHECK_THROWS_AS(risknav::simulate_lidar(w, {}, {&sensor, 1}, 0.0, cfg), DataError);  // no rng
  CHECK_THROWS_AS(risknav::simulate_lidar(w, {}, {}, 0.0, LidarConfig{}), DataError);

  // Noise perturbs ranges along the ray, deterministically per seed.
  const World wall = risknav::parse_world("wall 5 -10 5 10 3\n");
  LidarConfig noisy;
  noisy.rings = {0.0};
  noisy.azimuth_step = risknav::kPi / 2.0;
  noisy.sigma = 0.05;
  std::mt19937_64 r1(9), r2(9);
  const SimScan a = risknav::simulate_lidar(wall, {}, {&sensor, 1}, 0.0, noisy, &r1);
  const SimScan b = risknav::simulate_lidar(wall, {}, {&sensor, 1}, 0.0, noisy, &r2);
  REQUIRE(a.frame.points.size() == 1);
  CHECK(a.frame.points[0].position.x() == b.frame.points[0].position.x());
  CHECK(a.frame.points[0].position.x() != Approx(5.0).margin(1e-6));
  CHECK(std::abs(a.frame.points[0].position.x() - 5.0) < 0.5);
}

// ============================================================================
// Robot physics
// ============================================================================

TEST_CASE("the drive model integrates arcs and clamps accelerations", "[sim]") {
  RobotState s;
  s.speed = 1.0;

  // Straight advance at a held speed.
  Command cmd{1.0, 0.0, false};
  RobotState next = risknav::step_robot(s, cmd, 0.1);
  CHECK(next.position.x() == Approx(0.1).margin(1e-12));
  CHECK(next.position.y() == 0.0);
  CHECK(next.heading == 0.0);
  CHECK(next.speed == 1.0);
  CHECK(next.stamp == Approx(0.1));

  // Turn in place by pi/2 at a held rate.
  RobotState spin;
  spin.omega = risknav::kPi;
  next = risknav::step_robot(spin, Command{0.0, risknav::kPi, false}, 0.5);
  CHECK(next.heading == Approx(risknav::kPi / 2).margin(1e-12));
  CHECK(next.position.norm() == Approx(0.0).margin(1e-12));

  // Acceleration clamps bite from rest.
  RobotConfig cfg;
  cfg.a_max = 2.0;
  cfg.alpha_max = 6.0;
  next = risknav::step_robot(RobotState{}, Command{1.0, 1.0, false}, 0.1, cfg);
  CHECK(next.speed == Approx(0.2).margin(1e-12));
  CHECK(next.omega == Approx(0.6).margin(1e-12));

  // Heading stays wrapped.
  RobotState nearly;
  nearly.heading = 3.0;
  nearly.omega = 1.0;
  next = risknav::step_robot(nearly, Command{0.0, 1.0, false}, 0.5);
  CHECK(next.heading == Approx(3.5 - 2.0 * risknav::kPi).margin(1e-12));

  CHECK_THROWS_AS(risknav::step_robot(s, cmd, 0.0), DataError);
  RobotConfig bad;
  bad.radius = 0.0;
  CHECK_THROWS_AS(risknav::step_robot(s, cmd, 0.1, bad), ConfigError);
}

// ============================================================================
// Session log and metrics
// ============================================================================

namespace {

SessionLog synthetic_log() {
  SessionLog log;
  log.seed = 42;
  log.config_hash = 0xdeadbeefcafef00dull;
  log.predictor = "linear";
  log.n_actors = 2;
  log.frames = 3;
  log.complete = true;
  log.t_final = 1.25;
  for (int i = 0; i < 3; ++i) {
    TickRecord r;
    r.stamp = 0.05 * i;
    r.x = 0.1 * i;
    r.y = -0.2 * i;
    r.heading = 0.3 * i;
    r.speed = 0.5;
    r.omega = -0.25;
    r.cmd_v = 0.6;
    r.cmd_omega = 0.1;
    r.min_actor_distance = i == 2 ? std::numeric_limits<double>::infinity() : 0.7 + i;
    r.actors = {{1.0 + i, 2.0, -0.5, 0.25}, {-3.0, 4.0 + i, 1.5, 0.0}};
    log.ticks.push_back(r);
  }
  return log;
}

}  // namespace

TEST_CASE("session logs round-trip through the binary codec", "[sim]") {
  const SessionLog log = synthetic_log();
  std::ostringstream os;
  risknav::write_log(os, log);
  const std::string bytes = os.str();

  std::istringstream is(bytes);
  const SessionLog back = risknav::read_log(is);
  CHECK(back.seed == log.seed);
  CHECK(back.config_hash == log.config_hash);
  CHECK(back.predictor == log.predictor);
  CHECK(back.n_actors == log.n_actors);
  CHECK(back.frames == log.frames);
  CHECK(back.complete == log.complete);
  CHECK(back.t_final == log.t_final);
  REQUIRE(back.ticks.size() == log.ticks.size());
  for (std::size_t i = 0; i < log.ticks.size(); ++i) {
    const TickRecord& a = log.ticks[i];
    const TickRecord& b = back.ticks[i];
    CHECK(a.stamp == b.stamp);
    CHECK(a.x == b.x);
    CHECK(a.y == b.y);
    CHECK(a.heading == b.heading);
    CHECK(a.speed == b.speed);
    CHECK(a.omega == b.omega);
    CHECK(a.cmd_v == b.cmd_v);
    CHECK(a.cmd_omega == b.cmd_omega);
    CHECK((a.min_actor_distance == b.min_actor_distance ||
           (std::isinf(a.min_actor_distance) && std::isinf(b.min_actor_distance))));
    REQUIRE(b.actors.size() == a.actors.size());
    for (std::size_t j = 0; j < a.actors.size(); ++j) {
      CHECK(a.actors[j].x == b.actors[j].x);
      CHECK(a.actors[j].vy == b.actors[j].vy);
    }
  }

  // Write is deterministic byte for byte.
  std::ostringstream os2;
  risknav::write_log(os2, log);
  CHECK(os2.str() == bytes);

  // Truncation and corruption are detected.
  std::istringstream trunc(bytes.substr(0, bytes.size() - 8));
  CHECK_THROWS_AS(risknav::read_log(trunc), DataError);
  std::istringstream bad_magic("risknav sesion 1\nend\n");
  CHECK_THROWS_AS(risknav::read_log(bad_magic), DataError);
  std::istringstream bad_key("risknav session 1\nbogus 3\nend\n");
  CHECK_THROWS_AS(risknav::read_log(bad_key), DataError);
  std::istringstream no_end("risknav session 1\nseed 1\n");
  CHECK_THROWS_AS(risknav::read_log(no_end), DataError);

  // CSV export: one header plus one row per tick, actor columns flattened.
  std::ostringstream csv;
  risknav::log_to_csv(csv, log);
  const std::string text = csv.str();
  CHECK(text.rfind("stamp,x,y,", 0) == 0);
  CHECK(text.find("a1_vx") != std::string::npos);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  CHECK(text.find("inf") != std::string::npos);
}

TEST_CASE("metrics count tick fractions the obvious way", "[sim]") {
  SessionLog log;
  log.n_actors = 1;
  log.complete = true;
  log.t_final = 10.0;

  // A stationary robot parked 0.3 m from a pedestrian for ten ticks.
  for (int i = 0; i < 10; ++i) {
    TickRecord r;
    r.stamp = i * 1.0;
    r.speed = 0.0;
    r.min_actor_distance = 0.3;
    r.actors.resize(1);
    log.ticks.push_back(r);
  }
  Metrics m = risknav::compute_metrics(log);
  CHECK(m.pct_collision == 100.0);
  CHECK(m.pct_risk == 100.0);
  CHECK(m.pct_stopped == 100.0);
  CHECK(m.pct_backward == 0.0);
  CHECK(m.avg_absolute_speed == 0.0);
  CHECK(m.avg_linear_speed == 0.0);
  CHECK(m.t_final == 10.0);

  // One collision tick among five.
  log.ticks.clear();
  const double speeds[5] = {1.0, 1.0, -0.2, 0.05, 0.8};
  for (int i = 0; i < 5; ++i) {
    TickRecord r;
    r.stamp = i * 1.0;
    r.speed = speeds[i];
    r.min_actor_distance = i == 0 ? 0.35 : 5.0;
    r.actors.resize(1);
    log.ticks.push_back(r);
  }
  m = risknav::compute_metrics(log);
  CHECK(m.pct_collision == Approx(20.0));
  CHECK(m.pct_risk == Approx(20.0));
  CHECK(m.pct_stopped == Approx(20.0));   // only the 0.05 tick
  CHECK(m.pct_backward == Approx(20.0));  // only the -0.2 tick
  CHECK(m.avg_absolute_speed == Approx((1.0 + 1.0 + 0.2 + 0.05 + 0.8) / 5.0));
  CHECK(m.avg_linear_speed == Approx((1.0 + 1.0 - 0.2 + 0.05 + 0.8) / 5.0));

  SessionLog empty;
  CHECK_THROWS_AS(risknav::compute_metrics(empty), DataError);
  CHECK_THROWS_AS(risknav::compute_metrics(log, 2.0, 1.0), ConfigError);
}

// ============================================================================
// Closed-loop sessions
// ============================================================================

TEST_CASE("an empty corridor session reaches the goal with zero risk", "[sim]") {
  SimConfig cfg = fast_config();
  cfg.n_actors = 0;
  cfg.timeout = 30.0;

  const SessionLog log =
      risknav::run_session(corridor_world(), cfg, PredictorKind::ObstaclesOnly, 1);
  REQUIRE(log.complete);
  CHECK(log.t_final < 20.0);
  CHECK(log.frames > 50);
  CHECK(log.n_actors == 0);
  REQUIRE(!log.ticks.empty());
  CHECK(log.ticks.back().stamp == Approx(log.t_final));

  const Metrics m = risknav::compute_metrics(log);
  CHECK(m.pct_collision == 0.0);
  CHECK(m.pct_risk == 0.0);
  CHECK(m.avg_absolute_speed > 0.3);

  // The robot ends at the final waypoint and never leaves the corridor.
  const TickRecord& last = log.ticks.back();
  CHECK((Vec2(last.x, last.y) - Vec2(6, 0)).norm() < cfg.goal_tolerance);
  for (const TickRecord& r : log.ticks) CHECK(std::abs(r.y) < 1.2);
}

TEST_CASE("a session is a pure function of configuration and seed", "[sim]") {
  const World w = hall_world();
  SimConfig cfg = fast_config();
  cfg.n_actors = 3;
  cfg.timeout = 4.0;

  const SessionLog a = risknav::run_session(w, cfg, PredictorKind::Linear, 5);
  const SessionLog b = risknav::run_session(w, cfg, PredictorKind::Linear, 5);
  CHECK(log_bytes(a) == log_bytes(b));

  SimConfig threaded = cfg;
  threaded.n_threads = 3;
  const SessionLog c = risknav::run_session(w, threaded, PredictorKind::Linear, 5);
  CHECK(log_bytes(a) == log_bytes(c));

  const SessionLog d = risknav::run_session(w, cfg, PredictorKind::Linear, 6);
  CHECK(log_bytes(a) != log_bytes(d));

  // Collisions are a subset of risk ticks, and pedestrians obey the speed cap.
  for (const SessionLog* log : {&a, &d}) {
    const Metrics m = risknav::compute_metrics(*log);
    CHECK(m.pct_collision <= m.pct_risk);
    const double cap = cfg.flow.preferred_speed * (1.0 + cfg.flow.speed_margin) + 1e-9;
    for (const TickRecord& r : log->ticks)
      for (const ActorSnap& s : r.actors) CHECK(std::hypot(s.vx, s.vy) <= cap);
  }
}

TEST_CASE("seeing the future clears a head-on pedestrian more widely", "[sim]") {
  World w = hall_world();
  SimConfig cfg = fast_config();
  cfg.preset_actors = {make_actor(Vec2(6.5, 0.05), Vec2(-1.2, 0), 0)};
  cfg.timeout = 30.0;

  const SessionLog scripted = risknav::run_session(w, cfg, PredictorKind::Scripted, 7);
  const SessionLog reactive = risknav::run_session(w, cfg, PredictorKind::ObstaclesOnly, 7);
  REQUIRE(scripted.complete);
  CHECK(closest_approach(scripted) > closest_approach(reactive));
  CHECK(closest_approach(scripted) > 0.4);
}

TEST_CASE("externally computed grids reproduce the in-process session", "[sim]") {
  const World w = hall_world();
  const std::string dir = tmp_path("risknav_sim_grids");
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);

  SimConfig cfg = fast_config();
  cfg.preset_actors = {make_actor(Vec2(4.0, 0.3), Vec2(-1.2, 0), 0)};
  cfg.timeout = 2.0;
  cfg.record_sogm_dir = dir;

  const SessionLog recorded = risknav::run_session(w, cfg, PredictorKind::Scripted, 8);
  REQUIRE(std::filesystem::exists(dir + "/sogm_000001.bin"));

  SimConfig replay = cfg;
  replay.record_sogm_dir.clear();
  replay.external_dir = dir;
  const SessionLog external = risknav::run_session(w, replay, PredictorKind::ExternalFile, 8);
  CHECK(external.predictor == "external-file");
  CHECK(log_bytes(recorded, "x") == log_bytes(external, "x"));

  // A stale grid (wrong reference time) aborts the session loudly.
  const risknav::SogmFile file = risknav::read_sogm(dir + "/sogm_000001.bin");
  risknav::Sogm shifted = file.sogm;
  shifted.t_ref += 0.2;
  risknav::write_sogm(dir + "/sogm_000001.bin", shifted, file.publish_delay);
  CHECK_THROWS_WITH(risknav::run_session(w, replay, PredictorKind::ExternalFile, 8),
                    Catch::Matchers::ContainsSubstring("stale"));

  std::filesystem::remove_all(dir);
}

TEST_CASE("sessions validate their configuration and route", "[sim]") {
  const World w = corridor_world();
  SimConfig cfg = fast_config();
  cfg.n_actors = 0;

  SimConfig bad = cfg;
  bad.dt = 0.0;
  CHECK_THROWS_AS(risknav::run_session(w, bad, PredictorKind::ObstaclesOnly, 1), ConfigError);
  bad = cfg;
  bad.plan_period = 0.07;  // not a multiple of dt
  CHECK_THROWS_AS(risknav::run_session(w, bad, PredictorKind::ObstaclesOnly, 1), ConfigError);
  bad = cfg;
  bad.n_threads = 0;
  CHECK_THROWS_AS(risknav::run_session(w, bad, PredictorKind::ObstaclesOnly, 1), ConfigError);
  bad = cfg;
  bad.publish_delay = -0.1;
  CHECK_THROWS_AS(risknav::run_session(w, bad, PredictorKind::ObstaclesOnly, 1), ConfigError);
  CHECK_THROWS_AS(risknav::run_session(w, cfg, PredictorKind::ExternalFile, 1), ConfigError);

  const World no_route = risknav::parse_world("waypoint 0 0\n");
  CHECK_THROWS_AS(risknav::run_session(no_route, cfg, PredictorKind::ObstaclesOnly, 1),
                  DataError);

  World hall = hall_world();
  SimConfig preset = cfg;
  preset.preset_actors = {make_actor(Vec2(0, 0), Vec2::Zero(), 5)};  // goal out of range
  CHECK_THROWS_AS(risknav::run_session(hall, preset, PredictorKind::ObstaclesOnly, 1),
                  DataError);

  CHECK(risknav::predictor_from_string("scripted") == PredictorKind::Scripted);
  CHECK(std::string(risknav::to_string(PredictorKind::StaticsOnly)) == "statics-only");
  CHECK_THROWS_AS(risknav::predictor_from_string("oracle"), ConfigError);
}
