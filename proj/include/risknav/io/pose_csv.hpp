// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <cmath>
#include <cstdlib>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "risknav/core/geometry.hpp"
#include "risknav/io/binary.hpp"
#include "risknav/io/frame_ply.hpp"

namespace risknav::io {

// ============================================================================
// Trajectory codec (CSV)
//
// One row per pose: stamp,tx,ty,tz,qx,qy,qz,qw. Stamps must strictly
// increase. Quaternions are renormalized on decode when |norm - 1| < 1e-3
// and rejected otherwise.
// ============================================================================

inline constexpr const char* kPoseCsvHeader = "stamp,tx,ty,tz,qx,qy,qz,qw";

inline void write_poses_csv(const std::string& path, std::span<const Pose> poses) {
  std::ofstream os = open_output(path);
  os << kPoseCsvHeader << "\n";
  for (const Pose& p : poses) {
    os << double_repr(p.stamp) << "," << double_repr(p.t.x()) << "," << double_repr(p.t.y())
       << "," << double_repr(p.t.z()) << "," << double_repr(p.q.x()) << ","
       << double_repr(p.q.y()) << "," << double_repr(p.q.z()) << "," << double_repr(p.q.w())
       << "\n";
  }
  if (!os) throw DataError("write failed: " + path);
}

inline std::vector<Pose> read_poses_csv(const std::string& path) {
  std::ifstream is = open_input(path);
  const std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

  const auto fail = [&](std::size_t line_no, const std::string& what) {
    throw DataError("pose csv line " + std::to_string(line_no) + ": " + what + " (" + path +
                    ")");
  };

  std::vector<Pose> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < buf.size()) {
    ++line_no;
    std::size_t nl = buf.find('\n', pos);
    if (nl == std::string::npos) nl = buf.size();
    std::string line = buf.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = nl < buf.size() ? nl + 1 : buf.size();

    if (line_no == 1) {
      if (line != kPoseCsvHeader) fail(line_no, "bad header, expected '" + std::string(kPoseCsvHeader) + "'");
      continue;
    }
    if (line.empty()) continue;

    double v[8];
    std::size_t field = 0;
    std::size_t at = 0;
    while (field < 8) {
      std::size_t comma = line.find(',', at);
      if (comma == std::string::npos) comma = line.size();
      const std::string cell = line.substr(at, comma - at);
      char* end = nullptr;
      v[field] = std::strtod(cell.c_str(), &end);
      if (cell.empty() || end != cell.c_str() + cell.size())
        fail(line_no, "malformed number '" + cell + "'");
      ++field;
      if (comma == line.size()) break;
      at = comma + 1;
    }
    if (field != 8) fail(line_no, "expected 8 fields, found " + std::to_string(field));

    Pose p;
    p.stamp = v[0];
    p.t = Vec3(v[1], v[2], v[3]);
    p.q = Quat(v[7], v[4], v[5], v[6]);  // Quat ctor takes (w, x, y, z)
    const double norm = p.q.norm();
    if (std::abs(norm - 1.0) >= 1e-3)
      fail(line_no, "quaternion norm " + double_repr(norm) + " too far from 1");
    p.q.normalize();
    if (!out.empty() && !(p.stamp > out.back().stamp)) fail(line_no, "stamps not increasing");
    out.push_back(p);
  }
  return out;
}

}  // namespace risknav::io
