// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "risknav/io/binary.hpp"
#include "risknav/plan/teb.hpp"
#include "risknav/predict/predictors.hpp"
#include "risknav/risk/srm.hpp"
#include "risknav/sim/flow.hpp"
#include "risknav/sim/lidar.hpp"
#include "risknav/sim/robot.hpp"
#include "risknav/sim/world.hpp"

namespace risknav {

// ============================================================================
// Closed-loop navigation session
//
// One session runs the full pipeline at fixed rates on a simulated world:
// lidar synthesis -> ground-truth point labels -> occupancy prediction ->
// risk diffusion -> band optimization -> drive command -> physics. The
// predictor kind selects what the prediction stage knows about pedestrians;
// everything downstream is identical, so paired runs isolate the value of
// prediction quality. Predicted grids reach the planner only after a
// publish delay that models inference latency; until the first grid is
// ready the planner falls back to the static world costmap.
//
// Determinism contract: a (config, seed) pair fully determines the session.
// Every random draw flows from one mt19937_64 through fixed arithmetic, the
// risk conversion partitions work identically for any thread count, and the
// binary log writer emits the same bytes for the same history.
// ============================================================================

/// What the prediction stage is allowed to know, named by behavior.
enum class PredictorKind {
  ObstaclesOnly,  // no grid at all: plan against the instantaneous obstacle costmap
  StaticsOnly,    // occupancy grid with the dynamic channel erased
  Linear,         // constant-velocity extrapolation of currently visible pedestrians
  Scripted,       // true crowd future, rolled out without the robot present
  ExternalFile,   // grids computed out of process and read back from disk
};

inline const char* to_string(PredictorKind k) {
  switch (k) {
    case PredictorKind::ObstaclesOnly: return "obstacles-only";
    case PredictorKind::StaticsOnly: return "statics-only";
    case PredictorKind::Linear: return "linear";
    case PredictorKind::Scripted: return "scripted";
    case PredictorKind::ExternalFile: return "external-file";
  }
  return "unknown";
}

inline PredictorKind predictor_from_string(const std::string& s) {
  if (s == "obstacles-only") return PredictorKind::ObstaclesOnly;
  if (s == "statics-only") return PredictorKind::StaticsOnly;
  if (s == "linear") return PredictorKind::Linear;
  if (s == "scripted") return PredictorKind::Scripted;
  if (s == "external-file") return PredictorKind::ExternalFile;
  throw ConfigError("session: unknown predictor kind '" + s + "'");
}

struct SimConfig {
  int n_actors = 10;
  double dt = 0.05;                 // physics tick, seconds
  double plan_period = 0.1;         // planning interval, a multiple of dt
  double publish_delay = 0.25;      // prediction availability latency, seconds
  double timeout = 120.0;           // incomplete sessions are cut off here
  double waypoint_tolerance = 0.5;  // advance distance for intermediate waypoints
  double goal_tolerance = 0.3;      // arrival distance for the final waypoint
  double sensor_height = 0.8;       // lidar mount above the floor, meters
  int n_threads = 1;                // workers for the risk conversion
  std::uint64_t config_hash = 0;    // provenance tag recorded in the log header
  std::string external_dir;         // grid source for PredictorKind::ExternalFile
  std::string record_sogm_dir;      // when set, every predicted grid is written here

  /// When nonempty this exact crowd (stamps at zero) replaces random
  /// spawning and n_actors is ignored; scripted scenarios use it to pin the
  /// pedestrians.
  std::vector<FlowActor> preset_actors;

  FlowConfig flow;
  LidarConfig lidar;
  RobotConfig robot;
  SogmConfig sogm;
  SrmConfig srm;
  PlannerConfig planner;

  void validate() const {
    if (n_actors < 0) throw ConfigError("session: actor count must be nonnegative");
    if (!(dt > 0.0) || !(timeout > dt)) throw ConfigError("session: need 0 < dt < timeout");
    const auto multiple = [&](double period) {
      const double r = period / dt;
      return r >= 1.0 - 1e-9 && std::abs(r - std::round(r)) < 1e-9;
    };
    if (!multiple(lidar.period) || !multiple(plan_period))
      throw ConfigError("session: lidar and plan periods must be multiples of dt");
    if (!(publish_delay >= 0.0)) throw ConfigError("session: publish delay must be nonnegative");
    if (!(waypoint_tolerance > 0.0) || !(goal_tolerance > 0.0))
      throw ConfigError("session: arrival tolerances must be positive");
    if (!(sensor_height >= 0.0)) throw ConfigError("session: sensor height must be nonnegative");
    if (n_threads < 1) throw ConfigError("session: thread count must be at least one");
    if (!(flow.preferred_speed > 0.0) || !(flow.radius > 0.0) || !(flow.relax_time > 0.0))
      throw ConfigError("session: flow speed, radius and relaxation must be positive");
    lidar.validate();
    robot.validate();
    planner.validate();
  }
};

// ============================================================================
// Session log
// ============================================================================

/// Pedestrian snapshot inside one tick record.
struct ActorSnap {
  double x = 0.0, y = 0.0, vx = 0.0, vy = 0.0;
};

struct TickRecord {
  double stamp = 0.0;
  double x = 0.0, y = 0.0, heading = 0.0;  // robot pose
  double speed = 0.0, omega = 0.0;         // robot velocities
  double cmd_v = 0.0, cmd_omega = 0.0;     // command issued this tick
  double min_actor_distance = std::numeric_limits<double>::infinity();  // center to center
  std::vector<ActorSnap> actors;
};

struct SessionLog {
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::string predictor;  // behavior token, see to_string(PredictorKind)
  int n_actors = 0;
  int frames = 0;  // lidar revolutions synthesized
  bool complete = false;
  double t_final = 0.0;  // arrival time, or the timeout when incomplete
  std::vector<TickRecord> ticks;
};

/// Binary log: a line-oriented text header (provenance and shape) followed by
/// fixed-width little-endian f64 tick records, (9 + 4 * n_actors) values each.
inline void write_log(std::ostream& os, const SessionLog& log) {
  char buf[64];
  os << "risknav session 1\n";
  os << "seed " << log.seed << "\n";
  std::snprintf(buf, sizeof buf, "%016" PRIx64, log.config_hash);
  os << "config " << buf << "\n";
  os << "predictor " << log.predictor << "\n";
  os << "actors " << log.n_actors << "\n";
  os << "frames " << log.frames << "\n";
  os << "complete " << (log.complete ? 1 : 0) << "\n";
  std::snprintf(buf, sizeof buf, "%.17g", log.t_final);
  os << "t_final " << buf << "\n";
  os << "ticks " << log.ticks.size() << "\n";
  os << "end\n";
  for (const TickRecord& r : log.ticks) {
    if (static_cast<int>(r.actors.size()) != log.n_actors)
      throw DataError("session: tick record actor count does not match the header");
    for (const double v : {r.stamp, r.x, r.y, r.heading, r.speed, r.omega, r.cmd_v, r.cmd_omega,
                           r.min_actor_distance})
      io::write_raw(os, v);
    for (const ActorSnap& a : r.actors)
      for (const double v : {a.x, a.y, a.vx, a.vy}) io::write_raw(os, v);
  }
}

inline void write_log(const std::string& path, const SessionLog& log) {
  auto os = io::open_output(path);
  write_log(os, log);
}

inline SessionLog read_log(std::istream& is) {
  SessionLog log;
  std::string line;
  if (!std::getline(is, line) || line != "risknav session 1")
    throw DataError("session log: bad magic line");
  std::size_t n_ticks = 0;
  while (std::getline(is, line) && line != "end") {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    bool ok = true;
    if (key == "seed")
      ok = static_cast<bool>(ss >> log.seed);
    else if (key == "config") {
      std::string hex;
      ok = static_cast<bool>(ss >> hex) && hex.size() == 16 &&
           hex.find_first_not_of("0123456789abcdef") == std::string::npos;
      if (ok) log.config_hash = std::stoull(hex, nullptr, 16);
    } else if (key == "predictor")
      ok = static_cast<bool>(ss >> log.predictor);
    else if (key == "actors")
      ok = static_cast<bool>(ss >> log.n_actors) && log.n_actors >= 0;
    else if (key == "frames")
      ok = static_cast<bool>(ss >> log.frames) && log.frames >= 0;
    else if (key == "complete") {
      int v = 0;
      ok = static_cast<bool>(ss >> v) && (v == 0 || v == 1);
      log.complete = v == 1;
    } else if (key == "t_final")
      ok = static_cast<bool>(ss >> log.t_final);
    else if (key == "ticks")
      ok = static_cast<bool>(ss >> n_ticks) && n_ticks < (std::size_t{1} << 28);
    else
      ok = false;
    if (!ok) throw DataError("session log: malformed header line '" + line + "'");
  }
  if (line != "end") throw DataError("session log: header is not terminated");
  log.ticks.resize(n_ticks);
  for (TickRecord& r : log.ticks) {
    r.stamp = io::read_raw<double>(is, "tick stamp");
    r.x = io::read_raw<double>(is, "tick x");
    r.y = io::read_raw<double>(is, "tick y");
    r.heading = io::read_raw<double>(is, "tick heading");
    r.speed = io::read_raw<double>(is, "tick speed");
    r.omega = io::read_raw<double>(is, "tick omega");
    r.cmd_v = io::read_raw<double>(is, "tick command v");
    r.cmd_omega = io::read_raw<double>(is, "tick command omega");
    r.min_actor_distance = io::read_raw<double>(is, "tick actor distance");
    r.actors.resize(static_cast<std::size_t>(log.n_actors));
    for (ActorSnap& a : r.actors) {
      a.x = io::read_raw<double>(is, "actor x");
      a.y = io::read_raw<double>(is, "actor y");
      a.vx = io::read_raw<double>(is, "actor vx");
      a.vy = io::read_raw<double>(is, "actor vy");
    }
  }
  return log;
}

inline SessionLog read_log(const std::string& path) {
  auto is = io::open_input(path);
  return read_log(is);
}

/// Flat table of the tick records, one row per tick.
inline void log_to_csv(std::ostream& os, const SessionLog& log) {
  os << "stamp,x,y,heading,speed,omega,cmd_v,cmd_omega,min_actor_distance";
  for (int i = 0; i < log.n_actors; ++i)
    os << ",a" << i << "_x,a" << i << "_y,a" << i << "_vx,a" << i << "_vy";
  os << "\n";
  char buf[32];
  const auto put = [&](double v, char sep) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << buf << sep;
  };
  for (const TickRecord& r : log.ticks) {
    for (const double v : {r.stamp, r.x, r.y, r.heading, r.speed, r.omega, r.cmd_v, r.cmd_omega})
      put(v, ',');
    put(r.min_actor_distance, r.actors.empty() ? '\n' : ',');
    for (std::size_t i = 0; i < r.actors.size(); ++i) {
      const ActorSnap& a = r.actors[i];
      put(a.x, ',');
      put(a.y, ',');
      put(a.vx, ',');
      put(a.vy, i + 1 == r.actors.size() ? '\n' : ',');
    }
  }
}

// ============================================================================
// Metrics
// ============================================================================

struct Metrics {
  bool complete = false;
  double t_final = 0.0;             // seconds to the final waypoint, or the timeout
  double pct_collision = 0.0;       // % of ticks with an actor closer than d_collision
  double pct_risk = 0.0;            // % of ticks with an actor closer than d_risk
  double avg_absolute_speed = 0.0;  // mean |forward speed|, m/s
  double pct_stopped = 0.0;         // % of ticks with |forward speed| < 0.1
  double avg_linear_speed = 0.0;    // mean signed forward speed, m/s
  double pct_backward = 0.0;        // % of ticks with forward speed < -0.1
};

/// Tick-fraction metrics over one session. Distances are center to center;
/// with no actors the collision and risk percentages are zero. d_collision
/// must not exceed d_risk, so a collision tick is always also a risk tick.
inline Metrics compute_metrics(const SessionLog& log, double d_collision = 0.4,
                               double d_risk = 1.0) {
  if (log.ticks.empty()) throw DataError("metrics: the session log has no ticks");
  if (!(d_collision > 0.0) || !(d_collision <= d_risk))
    throw ConfigError("metrics: need 0 < d_collision <= d_risk");
  Metrics m;
  m.complete = log.complete;
  m.t_final = log.t_final;
  const double n = static_cast<double>(log.ticks.size());
  for (const TickRecord& r : log.ticks) {
    if (r.min_actor_distance < d_collision) m.pct_collision += 1.0;
    if (r.min_actor_distance < d_risk) m.pct_risk += 1.0;
    m.avg_absolute_speed += std::abs(r.speed);
    m.avg_linear_speed += r.speed;
    if (std::abs(r.speed) < 0.1) m.pct_stopped += 1.0;
    if (r.speed < -0.1) m.pct_backward += 1.0;
  }
  m.pct_collision *= 100.0 / n;
  m.pct_risk *= 100.0 / n;
  m.pct_stopped *= 100.0 / n;
  m.pct_backward *= 100.0 / n;
  m.avg_absolute_speed /= n;
  m.avg_linear_speed /= n;
  return m;
}

// ============================================================================
// Session internals
// ============================================================================

namespace detail {

inline Pose sensor_pose(const RobotState& s, double height) {
  Pose p;
  p.q = Quat(Eigen::AngleAxisd(s.heading, Vec3::UnitZ()));
  p.t = Vec3(s.position.x(), s.position.y(), height);
  p.stamp = s.stamp;
  return p;
}

/// Dense samples along every wall, used to rasterize static occupancy.
inline std::vector<Vec2> wall_sample_points(const World& w, double spacing) {
  std::vector<Vec2> pts;
  for (const Wall& wall : w.walls) {
    const double len = (wall.b - wall.a).norm();
    const int n = std::max(1, static_cast<int>(std::ceil(len / spacing)));
    for (int i = 0; i <= n; ++i) pts.push_back(wall.a + (wall.b - wall.a) * (double(i) / n));
  }
  return pts;
}

/// Empty robot-centered occupancy grid with the static channel filled from
/// the wall geometry (the map the robot localizes in), broadcast to every
/// layer. Dynamic channels stay empty; the predictor owns them.
inline Sogm base_sogm(const World& w, const Vec2& center, double t_ref, const SogmConfig& cfg) {
  Sogm s;
  s.n_t = cfg.n_layers();
  s.h = s.w = cfg.grid_cells();
  s.c = 3;
  s.dl = cfg.dl;
  s.dt = cfg.dt;
  s.t_ref = t_ref;
  s.rotation = 0.0;
  const double half = 0.5 * s.w * cfg.dl;
  s.origin = center - Vec2(half, half);
  s.data.assign(static_cast<std::size_t>(s.n_t) * s.h * s.w * s.c, 0.0f);
  for (const Vec2& p : wall_sample_points(w, 0.5 * cfg.dl)) {
    const Vec2 c = s.cell_coords(p);
    const int ix = static_cast<int>(std::floor(c.x()));
    const int iy = static_cast<int>(std::floor(c.y()));
    if (ix < 0 || ix >= s.w || iy < 0 || iy >= s.h) continue;
    for (int k = 0; k < s.n_t; ++k) s.at(k, iy, ix, Sogm::kChanPermanent) = 1.0f;
  }
  return s;
}

/// True crowd future from `actors`, one state list per grid layer, rolled
/// out with a copy of the generator and no robot in the world. The copies
/// keep the main simulation stream untouched.
inline std::vector<std::vector<ActorState>> ghost_future(const World& w,
                                                         std::vector<FlowActor> actors,
                                                         std::mt19937_64 rng, int n_layers,
                                                         double layer_dt, double dt,
                                                         const FlowConfig& cfg) {
  const int substeps = std::max(1, static_cast<int>(std::lround(layer_dt / dt)));
  std::vector<std::vector<ActorState>> future(static_cast<std::size_t>(n_layers));
  for (int k = 0; k < n_layers; ++k) {
    auto& layer = future[static_cast<std::size_t>(k)];
    layer.reserve(actors.size());
    for (const FlowActor& a : actors) layer.push_back(a.state);
    if (k + 1 < n_layers)
      for (int s = 0; s < substeps; ++s) step_actors(w, actors, std::nullopt, dt, rng, cfg);
  }
  return future;
}

/// Overlays the worst risk `local` carries anywhere in its horizon (its
/// dynamic sweep plus its static plane) onto the static layer of `search`.
/// Swept cells read as walls to the global search, which therefore routes
/// around the space pedestrians are about to use; without this the search
/// and its line-of-sight shortcut would pull the band straight through a
/// head-on encounter, where the risk ridge has no lateral gradient. Cells
/// within `carve` of the robot or the goal stay untouched so the search
/// always keeps a start and an end.
inline void overlay_swept_risk(Srm& search, const Srm& local, const Vec2& robot,
                               const Vec2& goal, double carve) {
  const std::size_t plane = static_cast<std::size_t>(local.h) * static_cast<std::size_t>(local.w);
  std::vector<double> sweep = local.static_risk;
  for (int k = 0; k < local.n_t; ++k) {
    const double* layer = local.dynamic_risk.data() + static_cast<std::size_t>(k) * plane;
    for (std::size_t i = 0; i < plane; ++i) sweep[i] = std::max(sweep[i], layer[i]);
  }
  // Bounding box of the local window in search cells, then clamp.
  Vec2 lo = search.cell_coords(local.cell_center(0, 0)), hi = lo;
  for (const int ix : {0, local.w - 1})
    for (const int iy : {0, local.h - 1}) {
      const Vec2 c = search.cell_coords(local.cell_center(ix, iy));
      lo = lo.cwiseMin(c);
      hi = hi.cwiseMax(c);
    }
  const int x0 = std::max(0, static_cast<int>(std::floor(lo.x())) - 1);
  const int y0 = std::max(0, static_cast<int>(std::floor(lo.y())) - 1);
  const int x1 = std::min(search.w - 1, static_cast<int>(std::ceil(hi.x())) + 1);
  const int y1 = std::min(search.h - 1, static_cast<int>(std::ceil(hi.y())) + 1);
  for (int iy = y0; iy <= y1; ++iy)
    for (int ix = x0; ix <= x1; ++ix) {
      const Vec2 q = search.cell_center(ix, iy);
      const Vec2 c = local.cell_coords(q);
      if (c.x() < 0.0 || c.x() > local.w || c.y() < 0.0 || c.y() > local.h) continue;
      if ((q - robot).norm() < carve || (q - goal).norm() < carve) continue;
      const RiskSample s = bilinear_plane(sweep.data(), local.h, local.w, local.dl,
                                          local.origin, local.rotation, q);
      double& cell = search.static_risk[search.plane_index(iy, ix)];
      cell = std::max(cell, s.value);
    }
}

}  // namespace detail

// ============================================================================
// run_session
// ============================================================================

/// Runs one closed-loop session and returns its log. The session ends when
/// the robot reaches the final waypoint (complete) or at cfg.timeout
/// (incomplete; metrics are still well defined). Throws ConfigError for a
/// bad configuration and DataError for a world without a usable route or a
/// missing external grid.
inline SessionLog run_session(const World& world, const SimConfig& cfg, PredictorKind kind,
                              std::uint64_t seed) {
  cfg.validate();
  if (world.waypoints.size() < 2)
    throw DataError("session: the world route needs at least two waypoints");
  if (kind == PredictorKind::ExternalFile && cfg.external_dir.empty())
    throw ConfigError("session: the external predictor needs external_dir");

  std::mt19937_64 rng(seed);
  std::vector<FlowActor> actors;
  if (!cfg.preset_actors.empty()) {
    actors = cfg.preset_actors;
    for (const FlowActor& a : actors)
      if (a.goal < 0 || a.goal >= static_cast<int>(world.goals.size()))
        throw DataError("session: preset actor goal index is out of range");
  } else if (cfg.n_actors > 0) {
    actors = spawn_actors(world, cfg.n_actors, 0.0, rng, cfg.flow);
  }

  RobotState robot;
  robot.position = world.waypoints.front();
  const Vec2 first_leg = world.waypoints[1] - world.waypoints[0];
  robot.heading = first_leg.norm() > 1e-9 ? std::atan2(first_leg.y(), first_leg.x()) : 0.0;
  robot.stamp = 0.0;
  std::size_t wp_idx = 1;

  // Static world costmap: global search space and the fallback risk map
  // until the first prediction is published.
  Vec2 lo = world.waypoints.front(), hi = lo;
  const auto grow = [&](const Vec2& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  };
  for (const Vec2& p : world.waypoints) grow(p);
  for (const Vec2& p : world.limits) grow(p);
  for (const Wall& wall : world.walls) {
    grow(wall.a);
    grow(wall.b);
  }
  const Vec2 span = hi - lo;
  const double half_extent = 0.5 * std::max(span.x(), span.y()) + 2.0;
  const Srm world_map = costmap_from_points(detail::wall_sample_points(world, 0.5 * cfg.sogm.dl),
                                            0.5 * (lo + hi), half_extent, cfg.sogm.dl,
                                            cfg.srm.d0_sta, 0.0);
  Srm search = world_map;  // global search space; pedestrian sweep overlaid per plan tick

  SrmConfig srm_cfg = cfg.srm;
  srm_cfg.n_threads = cfg.n_threads;

  SessionLog log;
  log.seed = seed;
  log.config_hash = cfg.config_hash;
  log.predictor = to_string(kind);
  log.n_actors = static_cast<int>(actors.size());
  log.complete = false;
  log.t_final = cfg.timeout;

  const int lidar_every = static_cast<int>(std::lround(cfg.lidar.period / cfg.dt));
  const int plan_every = static_cast<int>(std::lround(cfg.plan_period / cfg.dt));
  const int max_ticks = static_cast<int>(std::lround(cfg.timeout / cfg.dt));

  std::vector<Pose> pose_history;
  std::optional<SimScan> scan;
  int scan_tick = -1;         // tick at which `scan` was synthesized
  std::vector<char> visible;  // per-actor: had a return in the latest scan
  struct Pending {
    double ready = 0.0;
    Srm srm;
  };
  std::deque<Pending> pending;
  std::optional<Srm> current;  // latest published risk map
  std::optional<Band> band_prev;  // committed band, warm-started across plan ticks
  std::size_t band_wp = 0;        // waypoint band_prev was built for
  Command cmd;

  const auto record_tick = [&](double t, const Command& c) {
    TickRecord r;
    r.stamp = t;
    r.x = robot.position.x();
    r.y = robot.position.y();
    r.heading = robot.heading;
    r.speed = robot.speed;
    r.omega = robot.omega;
    r.cmd_v = c.v;
    r.cmd_omega = c.omega;
    r.actors.reserve(actors.size());
    for (const FlowActor& a : actors) {
      r.actors.push_back(
          {a.state.position.x(), a.state.position.y(), a.state.velocity.x(), a.state.velocity.y()});
      r.min_actor_distance =
          std::min(r.min_actor_distance, (a.state.position - robot.position).norm());
    }
    log.ticks.push_back(std::move(r));
  };

  for (int tick = 0; tick <= max_ticks; ++tick) {
    const double t = tick * cfg.dt;
    pose_history.push_back(detail::sensor_pose(robot, cfg.sensor_height));
    while (pose_history.front().stamp < t - cfg.lidar.period - 2.0 * cfg.dt)
      pose_history.erase(pose_history.begin());

    // Waypoint bookkeeping; arrival at the final waypoint ends the session.
    bool arrived = false;
    while (wp_idx < world.waypoints.size()) {
      const double dist = (robot.position - world.waypoints[wp_idx]).norm();
      const bool final_wp = wp_idx + 1 == world.waypoints.size();
      if (final_wp ? dist < cfg.goal_tolerance : dist < cfg.waypoint_tolerance) {
        if (final_wp) arrived = true;
        ++wp_idx;
      } else {
        break;
      }
    }
    if (arrived) {
      log.complete = true;
      log.t_final = t;
      record_tick(t, Command{});
      break;
    }
    if (tick == max_ticks) break;  // timeout: the previous tick was the last recorded

    // Lidar revolution finishing at t.
    if (tick > 0 && tick % lidar_every == 0) {
      scan = simulate_lidar(world, actors, pose_history, t - cfg.lidar.period, cfg.lidar, &rng);
      scan_tick = tick;
      ++log.frames;
      visible.assign(actors.size(), 0);
      for (const int ai : scan->actor)
        if (ai >= 0) visible[static_cast<std::size_t>(ai)] = 1;
    }

    if (tick % plan_every == 0) {
      // Request a prediction from the scan that just completed.
      if (kind != PredictorKind::ObstaclesOnly && scan && scan_tick == tick) {
        Sogm base = detail::base_sogm(world, robot.position, t, cfg.sogm);
        PredictorOutput out;
        switch (kind) {
          case PredictorKind::StaticsOnly:
            out = predict_static_only(base);
            break;
          case PredictorKind::Linear: {
            std::vector<ActorState> tracked;
            for (std::size_t i = 0; i < actors.size(); ++i)
              if (visible[i]) tracked.push_back(actors[i].state);
            out = predict_linear(tracked, base, t);
            break;
          }
          case PredictorKind::Scripted: {
            const auto future =
                detail::ghost_future(world, actors, rng, base.n_t, cfg.sogm.dt, cfg.dt, cfg.flow);
            out = predict_groundtruth(future, base, t);
            break;
          }
          case PredictorKind::ExternalFile: {
            char name[32];
            std::snprintf(name, sizeof name, "/sogm_%06d.bin", tick / plan_every);
            out = load_external_sogm(cfg.external_dir + name, t);
            break;
          }
          case PredictorKind::ObstaclesOnly:
            break;
        }
        if (out.sogm) {
          if (!cfg.record_sogm_dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof name, "/sogm_%06d.bin", tick / plan_every);
            write_sogm(cfg.record_sogm_dir + name, *out.sogm, cfg.publish_delay);
          }
          pending.push_back({t + cfg.publish_delay, sogm_to_srm(*out.sogm, srm_cfg)});
        }
      }
      // Adopt the newest grid whose publish delay has elapsed.
      while (!pending.empty() && pending.front().ready <= t + 1e-9) {
        current = std::move(pending.front().srm);
        pending.pop_front();
      }
      // Pick the risk map to optimize against.
      const Srm* local = &world_map;
      std::optional<Srm> instant;
      if (kind == PredictorKind::ObstaclesOnly) {
        if (scan) {
          std::vector<Vec2> obstacles;
          for (std::size_t i = 0; i < scan->world.size(); ++i)
            if (scan->labels[i] != SemanticLabel::Ground &&
                (scan->world[i].head<2>() - robot.position).norm() <= cfg.sogm.r_in)
              obstacles.push_back(scan->world[i].head<2>());
          if (!obstacles.empty()) {
            instant = costmap_from_points(obstacles, robot.position, cfg.sogm.r_in, cfg.sogm.dl,
                                          cfg.srm.d0_sta, t);
            local = &*instant;
          }
        }
      } else if (current) {
        local = &*current;
      }
      // Plan. A search or optimization failure brakes instead of aborting.
      // The band is warm-started across plan ticks so an avoidance maneuver
      // keeps refining instead of being rediscovered from scratch at every
      // replan; a fresh band is seeded from the global search whenever the
      // committed one is consumed, retargeted, or no longer tracks the robot.
      try {
        Band band;
        bool warm = false;
        if (band_prev && band_wp == wp_idx) {
          Band adv;
          adv.poses.push_back({robot.position.x(), robot.position.y(), robot.heading, t});
          for (const TimedPose2D& p : band_prev->poses)
            if (p.stamp > t + cfg.planner.dt_min) adv.poses.push_back(p);
          if (adv.poses.size() >= 3 &&
              adv.poses.back().stamp - t > 0.5 * cfg.planner.horizon) {
            const TimedPose2D& head = adv.poses[1];
            const double reach = 0.3 + cfg.planner.v_max * (head.stamp - t);
            // The committed band must still track the robot and stay clear of
            // predicted occupancy; a band that now runs through risk is
            // rebuilt from the global search, whose detour escapes the local
            // minimum that plain band refinement cannot leave.
            double worst = 0.0;
            for (std::size_t i = 1; i < adv.poses.size(); ++i)
              worst = std::max(
                  worst, sample_static_risk(*local, adv.poses[i].position()).value +
                             sample_dynamic_risk(*local, adv.poses[i].position(),
                                                 adv.poses[i].stamp)
                                 .value);
            if ((head.position() - robot.position).norm() < reach && worst < 0.5) {
              adv.goal_position = band_prev->goal_position;
              adv.goal_heading = band_prev->goal_heading;
              band = std::move(adv);
              warm = true;
            }
          }
        }
        if (!warm) {
          const Srm* search_map = &world_map;
          if (local != &world_map) {
            search.static_risk = world_map.static_risk;
            detail::overlay_swept_risk(search, *local, robot.position,
                                       world.waypoints[wp_idx], 0.6);
            search_map = &search;
          }
          const auto path = global_plan(*search_map, robot.position, world.waypoints[wp_idx],
                                        cfg.planner);
          band = init_band(path, robot, cfg.planner.horizon);
        }
        band.goal_position = world.waypoints[wp_idx];
        band = optimize_band(band, *local, cfg.planner);
        cmd = extract_control(band, cfg.planner);
        if (cmd.degenerate) cmd = Command{};
        band_prev = std::move(band);
        band_wp = wp_idx;
      } catch (const PlanError&) {
        cmd = Command{};
        band_prev.reset();
      }
    }

    record_tick(t, cmd);
    step_actors(world, actors, robot.position, cfg.dt, rng, cfg.flow);
    robot = step_robot(robot, cmd, cfg.dt, cfg.robot);
  }
  return log;
}

}  // namespace risknav
