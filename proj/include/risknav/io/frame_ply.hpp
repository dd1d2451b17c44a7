// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <iterator>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "risknav/core/geometry.hpp"
#include "risknav/io/binary.hpp"

namespace risknav::io {

// ============================================================================
// Lidar frame codec (PLY)
//
// Encoding always writes binary little-endian PLY with double x/y/z/t, a
// ushort ring column, and an optional uchar label column; frame_id and the
// stamp window ride in comments so a round-trip is lossless. Decoding also
// accepts ascii PLY, float32 coordinates, missing ring (defaults to 0), and
// unknown scalar columns (skipped). All parse errors carry the byte offset.
// ============================================================================

/// Decoded frame plus the optional per-point label column (empty if absent).
struct PlyFrame {
  LidarFrame frame;
  std::vector<std::uint8_t> labels;
};

/// Decimal form with enough digits to parse back to the identical double.
inline std::string double_repr(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_frame_ply(const std::string& path, const LidarFrame& frame,
                            std::span<const std::uint8_t> labels = {}) {
  if (!labels.empty() && labels.size() != frame.points.size())
    throw DataError("frame codec: label column length does not match point count");
  for (const TimedPoint& p : frame.points)
    if (p.ring < 0 || p.ring > 0xFFFF)
      throw DataError("frame codec: ring index does not fit in 16 bits");

  std::ofstream os = open_output(path);
  os << "ply\n"
     << "format binary_little_endian 1.0\n"
     << "comment frame_id " << frame.frame_id << "\n"
     << "comment window " << double_repr(frame.t0) << " " << double_repr(frame.t1) << "\n"
     << "element vertex " << frame.points.size() << "\n"
     << "property double x\nproperty double y\nproperty double z\nproperty double t\n"
     << "property ushort ring\n";
  if (!labels.empty()) os << "property uchar label\n";
  os << "end_header\n";
  for (std::size_t i = 0; i < frame.points.size(); ++i) {
    const TimedPoint& p = frame.points[i];
    write_raw(os, p.position.x());
    write_raw(os, p.position.y());
    write_raw(os, p.position.z());
    write_raw(os, p.stamp);
    write_raw(os, static_cast<std::uint16_t>(p.ring));
    if (!labels.empty()) write_raw(os, labels[i]);
  }
  if (!os) throw DataError("write failed: " + path);
}

namespace detail {

[[noreturn]] inline void ply_fail(const std::string& path, std::size_t offset,
                                  const std::string& what) {
  throw DataError("ply parse error at byte " + std::to_string(offset) + ": " + what + " (" +
                  path + ")");
}

/// Size of a PLY scalar type name, or 0 when unknown.
inline int ply_scalar_size(const std::string& type) {
  if (type == "char" || type == "int8" || type == "uchar" || type == "uint8") return 1;
  if (type == "short" || type == "int16" || type == "ushort" || type == "uint16") return 2;
  if (type == "int" || type == "int32" || type == "uint" || type == "uint32") return 4;
  if (type == "float" || type == "float32") return 4;
  if (type == "double" || type == "float64") return 8;
  return 0;
}

inline std::vector<std::string> ply_tokens(const std::string& line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace detail

inline PlyFrame read_frame_ply(const std::string& path) {
  std::ifstream is = open_input(path);
  const std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

  // What each payload column feeds. Unknown columns are skipped by size.
  enum class Col { X, Y, Z, T, Ring, Label, Skip };
  struct Prop {
    Col col = Col::Skip;
    int size = 0;
    bool f32 = false;  // float32 source for X/Y/Z
  };

  std::size_t pos = 0;
  std::size_t line_at = 0;
  const auto read_line = [&]() -> std::string {
    line_at = pos;
    if (pos >= buf.size()) detail::ply_fail(path, pos, "unexpected end of header");
    const std::size_t nl = buf.find('\n', pos);
    if (nl == std::string::npos) detail::ply_fail(path, pos, "unterminated header line");
    std::string line = buf.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = nl + 1;
    return line;
  };
  const auto parse_f64 = [&](const std::string& s) -> double {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size())
      detail::ply_fail(path, line_at, "malformed number '" + s + "'");
    return v;
  };
  const auto parse_i64 = [&](const std::string& s) -> std::int64_t {
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (s.empty() || end != s.c_str() + s.size())
      detail::ply_fail(path, line_at, "malformed integer '" + s + "'");
    return v;
  };

  if (read_line() != "ply") detail::ply_fail(path, 0, "missing 'ply' magic");

  bool ascii = false;
  bool format_seen = false;
  bool element_seen = false;
  std::size_t count = 0;
  std::vector<Prop> props;
  bool has_window = false;
  PlyFrame out;

  for (;;) {
    const std::string line = read_line();
    const std::vector<std::string> tok = detail::ply_tokens(line);
    if (tok.empty()) continue;
    if (tok[0] == "end_header") break;

    if (tok[0] == "format") {
      if (tok.size() != 3 || tok[2] != "1.0" ||
          (tok[1] != "ascii" && tok[1] != "binary_little_endian"))
        detail::ply_fail(path, line_at, "unsupported format '" + line + "'");
      ascii = tok[1] == "ascii";
      format_seen = true;
    } else if (tok[0] == "comment" || tok[0] == "obj_info") {
      if (tok.size() == 3 && tok[1] == "frame_id") out.frame.frame_id = parse_i64(tok[2]);
      if (tok.size() == 4 && tok[1] == "window") {
        out.frame.t0 = parse_f64(tok[2]);
        out.frame.t1 = parse_f64(tok[3]);
        has_window = true;
      }
    } else if (tok[0] == "element") {
      if (element_seen) detail::ply_fail(path, line_at, "multiple elements are not supported");
      if (tok.size() != 3 || tok[1] != "vertex")
        detail::ply_fail(path, line_at, "unsupported element '" + line + "'");
      count = static_cast<std::size_t>(parse_i64(tok[2]));
      element_seen = true;
    } else if (tok[0] == "property") {
      if (!element_seen) detail::ply_fail(path, line_at, "property before element");
      if (tok.size() >= 2 && tok[1] == "list")
        detail::ply_fail(path, line_at, "list properties are not supported");
      if (tok.size() != 3) detail::ply_fail(path, line_at, "malformed property '" + line + "'");
      const std::string& type = tok[1];
      const std::string& name = tok[2];
      Prop p;
      p.size = detail::ply_scalar_size(type);
      if (p.size == 0) detail::ply_fail(path, line_at, "unknown property type '" + type + "'");
      const bool is_f32 = type == "float" || type == "float32";
      const bool is_f64 = type == "double" || type == "float64";
      if (name == "x" || name == "y" || name == "z") {
        if (!is_f32 && !is_f64)
          detail::ply_fail(path, line_at, "property '" + name + "' must be float or double");
        p.col = name == "x" ? Col::X : name == "y" ? Col::Y : Col::Z;
        p.f32 = is_f32;
      } else if (name == "t") {
        if (!is_f64) detail::ply_fail(path, line_at, "property 't' must be double");
        p.col = Col::T;
      } else if (name == "ring") {
        if (type != "uchar" && type != "uint8" && type != "ushort" && type != "uint16")
          detail::ply_fail(path, line_at, "property 'ring' must be uchar or ushort");
        p.col = Col::Ring;
      } else if (name == "label") {
        if (type != "uchar" && type != "uint8")
          detail::ply_fail(path, line_at, "property 'label' must be uchar");
        p.col = Col::Label;
      }
      props.push_back(p);
    } else {
      detail::ply_fail(path, line_at, "unknown header keyword '" + tok[0] + "'");
    }
  }

  if (!format_seen) detail::ply_fail(path, pos, "missing format line");
  if (!element_seen) detail::ply_fail(path, pos, "missing vertex element");
  const auto have = [&](Col c) {
    for (const Prop& p : props)
      if (p.col == c) return true;
    return false;
  };
  for (const auto& [col, name] :
       {std::pair{Col::X, "x"}, {Col::Y, "y"}, {Col::Z, "z"}, {Col::T, "t"}})
    if (!have(col)) detail::ply_fail(path, pos, std::string("missing required property '") + name + "'");
  const bool has_label = have(Col::Label);

  out.frame.points.assign(count, TimedPoint{});
  if (has_label) out.labels.assign(count, 0);

  if (ascii) {
    for (std::size_t i = 0; i < count; ++i) {
      if (pos >= buf.size())
        detail::ply_fail(path, buf.size(), "truncated payload at point " + std::to_string(i));
      line_at = pos;
      std::size_t nl = buf.find('\n', pos);
      if (nl == std::string::npos) nl = buf.size();
      std::string line = buf.substr(pos, nl - pos);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      pos = nl < buf.size() ? nl + 1 : buf.size();

      const std::vector<std::string> tok = detail::ply_tokens(line);
      if (tok.size() != props.size())
        detail::ply_fail(path, line_at,
                         "expected " + std::to_string(props.size()) + " values, found " +
                             std::to_string(tok.size()));
      TimedPoint& tp = out.frame.points[i];
      for (std::size_t c = 0; c < props.size(); ++c) {
        switch (props[c].col) {
          case Col::X: tp.position.x() = parse_f64(tok[c]); break;
          case Col::Y: tp.position.y() = parse_f64(tok[c]); break;
          case Col::Z: tp.position.z() = parse_f64(tok[c]); break;
          case Col::T: tp.stamp = parse_f64(tok[c]); break;
          case Col::Ring: {
            const std::int64_t v = parse_i64(tok[c]);
            if (v < 0 || v > 0xFFFF) detail::ply_fail(path, line_at, "ring out of range");
            tp.ring = static_cast<int>(v);
            break;
          }
          case Col::Label: {
            const std::int64_t v = parse_i64(tok[c]);
            if (v < 0 || v > 0xFF) detail::ply_fail(path, line_at, "label out of range");
            out.labels[i] = static_cast<std::uint8_t>(v);
            break;
          }
          case Col::Skip: break;
        }
      }
    }
  } else {
    std::size_t stride = 0;
    for (const Prop& p : props) stride += static_cast<std::size_t>(p.size);
    const std::size_t need = count * stride;
    if (buf.size() - pos < need)
      detail::ply_fail(path, buf.size(),
                       "truncated payload (need " + std::to_string(need) + " bytes, found " +
                           std::to_string(buf.size() - pos) + ")");
    const char* row = buf.data() + pos;
    for (std::size_t i = 0; i < count; ++i, row += stride) {
      TimedPoint& tp = out.frame.points[i];
      const char* at = row;
      for (const Prop& p : props) {
        const auto as_f64 = [&]() -> double {
          if (p.f32) {
            float f;
            std::memcpy(&f, at, 4);
            return static_cast<double>(f);
          }
          double d;
          std::memcpy(&d, at, 8);
          return d;
        };
        switch (p.col) {
          case Col::X: tp.position.x() = as_f64(); break;
          case Col::Y: tp.position.y() = as_f64(); break;
          case Col::Z: tp.position.z() = as_f64(); break;
          case Col::T: {
            double d;
            std::memcpy(&d, at, 8);
            tp.stamp = d;
            break;
          }
          case Col::Ring:
            if (p.size == 1) {
              tp.ring = static_cast<int>(static_cast<unsigned char>(*at));
            } else {
              std::uint16_t v;
              std::memcpy(&v, at, 2);
              tp.ring = static_cast<int>(v);
            }
            break;
          case Col::Label: out.labels[i] = static_cast<std::uint8_t>(*at); break;
          case Col::Skip: break;
        }
        at += p.size;
      }
    }
  }

  // Without an encoded window the stamps themselves define it.
  if (!has_window && !out.frame.points.empty()) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const TimedPoint& p : out.frame.points) {
      lo = std::min(lo, p.stamp);
      hi = std::max(hi, p.stamp);
    }
    out.frame.t0 = lo;
    out.frame.t1 = hi;
  }
  return out;
}

}  // namespace risknav::io
