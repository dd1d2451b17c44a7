// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "risknav/core/errors.hpp"
#include "risknav/core/geometry.hpp"

namespace risknav {

// ============================================================================
// Simulated world
//
// A world is a flat floor at z = 0, a set of vertical wall panels (segments
// extruded upward), a polygonal boundary of the traversable area, goal sites
// that pedestrian flow is drawn toward, and the waypoint route the robot has
// to follow. Worlds load from a line-oriented text format, one primitive per
// line:
//
//   wall x1 y1 x2 y2 height
//   limit x y          (boundary polygon vertex, listed in order)
//   goal x y           (pedestrian goal site, inside the boundary)
//   waypoint x y       (robot route, visited in order)
//   # comment
// ============================================================================

/// Vertical panel: the segment a-b extruded from z = 0 to z = height.
struct Wall {
  Vec2 a = Vec2::Zero();
  Vec2 b = Vec2::Zero();
  double height = 2.0;
};

struct World {
  std::vector<Wall> walls;
  std::vector<Vec2> limits;     // traversable boundary polygon, in order
  std::vector<Vec2> goals;      // pedestrian goal sites
  std::vector<Vec2> waypoints;  // robot route
};

// ============================================================================
// Planar helpers
// ============================================================================

/// Even-odd crossing test. Points exactly on an edge land on either side
/// depending on rounding; callers keep query points off the boundary.
inline bool point_in_polygon(const Vec2& p, const std::vector<Vec2>& poly) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[j];
    if ((a.y() > p.y()) != (b.y() > p.y()) &&
        p.x() < (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x())
      inside = !inside;
  }
  return inside;
}

/// Closest point of segment a-b to p.
inline Vec2 closest_on_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 e = b - a;
  const double len2 = e.squaredNorm();
  if (len2 <= 0.0) return a;
  const double u = std::clamp((p - a).dot(e) / len2, 0.0, 1.0);
  return a + u * e;
}

// ============================================================================
// Parsing
// ============================================================================

namespace detail {

inline double parse_field(std::istringstream& ss, const char* what, int line_no) {
  double v = 0.0;
  if (!(ss >> v) || !std::isfinite(v))
    throw DataError("world: line " + std::to_string(line_no) + ": bad or missing " +
                    std::string(what));
  return v;
}

}  // namespace detail

/// Parses the text world format. Throws DataError on a malformed line, a
/// degenerate wall, fewer than three boundary vertices, or a goal site
/// outside the boundary.
inline World parse_world(const std::string& text) {
  World w;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string kind;
    if (!(ss >> kind) || kind[0] == '#') continue;
    if (kind == "wall") {
      Wall wall;
      wall.a.x() = detail::parse_field(ss, "wall x1", line_no);
      wall.a.y() = detail::parse_field(ss, "wall y1", line_no);
      wall.b.x() = detail::parse_field(ss, "wall x2", line_no);
      wall.b.y() = detail::parse_field(ss, "wall y2", line_no);
      wall.height = detail::parse_field(ss, "wall height", line_no);
      if (!(wall.height > 0.0))
        throw DataError("world: line " + std::to_string(line_no) +
                        ": wall height must be positive");
      if ((wall.b - wall.a).norm() <= 0.0)
        throw DataError("world: line " + std::to_string(line_no) + ": wall has zero length");
      w.walls.push_back(wall);
    } else if (kind == "limit" || kind == "goal" || kind == "waypoint") {
      Vec2 p;
      p.x() = detail::parse_field(ss, "x", line_no);
      p.y() = detail::parse_field(ss, "y", line_no);
      if (kind == "limit")
        w.limits.push_back(p);
      else if (kind == "goal")
        w.goals.push_back(p);
      else
        w.waypoints.push_back(p);
    } else {
      throw DataError("world: line " + std::to_string(line_no) + ": unknown primitive '" +
                      kind + "'");
    }
  }
  if (!w.limits.empty() && w.limits.size() < 3)
    throw DataError("world: boundary polygon needs at least three vertices");
  if (!w.goals.empty() && w.limits.size() < 3)
    throw DataError("world: goal sites need a boundary polygon");
  for (const Vec2& g : w.goals)
    if (!point_in_polygon(g, w.limits))
      throw DataError("world: goal site (" + std::to_string(g.x()) + ", " +
                      std::to_string(g.y()) + ") lies outside the boundary");
  return w;
}

inline World load_world(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("world: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_world(buf.str());
}

}  // namespace risknav
