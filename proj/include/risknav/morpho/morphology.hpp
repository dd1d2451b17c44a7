// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "risknav/core/errors.hpp"
#include "risknav/core/geometry.hpp"
#include "risknav/core/voxel_index.hpp"

namespace risknav {

// ============================================================================
// Point morphology
//
// Binary morphology over a fixed point universe with a spherical structuring
// element of radius r (boundary inclusive). Operators relabel points between
// the two polarities; no point is ever created or destroyed. All flips within
// one primitive are simultaneous: a point flipped by the current pass never
// acts as a source for the same pass.
// ============================================================================

/// Bi-labeled point set. Every point carries exactly one polarity.
struct BiCloud {
  std::vector<Vec3> positives;
  std::vector<Vec3> negatives;
};

/// Mask over `points` marking those within r (inclusive) of any source point.
inline std::vector<char> near_mask(std::span<const Vec3> points, std::span<const Vec3> sources,
                                   double r) {
  if (!(r > 0.0)) throw DataError("morphology radius must be positive");
  std::vector<char> out(points.size(), 0);
  if (sources.empty()) return out;
  const PointIndex index(r, sources);
  for (std::size_t i = 0; i < points.size(); ++i)
    if (index.any_within(points[i], r)) out[i] = 1;
  return out;
}

namespace detail {

/// Flips every point of polarity `from` that lies within r of a point of the
/// opposite polarity. Sources are snapshotted up front, so all flips in one
/// call are simultaneous. Returns the number of flips.
inline std::size_t morph_flip(std::span<const Vec3> points, std::vector<char>& positive,
                              bool from, double r) {
  if (!(r > 0.0)) throw DataError("morphology radius must be positive");
  if (positive.size() != points.size()) throw DataError("polarity mask size mismatch");
  PointIndex sources(r);
  for (std::size_t i = 0; i < points.size(); ++i)
    if (static_cast<bool>(positive[i]) != from) sources.insert(points[i]);
  if (sources.empty()) return 0;
  std::size_t flips = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (static_cast<bool>(positive[i]) != from) continue;
    if (!sources.any_within(points[i], r)) continue;
    positive[i] = static_cast<char>(!from);
    ++flips;
  }
  return flips;
}

}  // namespace detail

// --- mask core --------------------------------------------------------------
// positive[i] gives the current polarity of points[i]; operators mutate it.

/// Dilation: negatives within r of a positive become positive.
inline void dilate_mask(std::span<const Vec3> points, std::vector<char>& positive, double r) {
  detail::morph_flip(points, positive, false, r);
}

/// Erosion: positives within r of a negative become negative.
inline void erode_mask(std::span<const Vec3> points, std::vector<char>& positive, double r) {
  detail::morph_flip(points, positive, true, r);
}

/// Closing: dilation then erosion. Fills negative pockets narrower than r
/// inside positive regions while restoring the outer boundary.
inline void close_mask(std::span<const Vec3> points, std::vector<char>& positive, double r) {
  dilate_mask(points, positive, r);
  erode_mask(points, positive, r);
}

/// Opening: erosion then dilation. Removes positive islands thinner than r
/// while restoring the boundary of the surviving regions.
inline void open_mask(std::span<const Vec3> points, std::vector<char>& positive, double r) {
  erode_mask(points, positive, r);
  dilate_mask(points, positive, r);
}

// --- BiCloud wrappers ---------------------------------------------------------
// Positives keep their original relative order, then flipped-in points in
// their original order; likewise for negatives.

namespace detail {

struct MaskedCloud {
  std::vector<Vec3> points;
  std::vector<char> positive;
};

inline MaskedCloud to_mask(const BiCloud& in) {
  MaskedCloud m;
  m.points.reserve(in.positives.size() + in.negatives.size());
  m.points.insert(m.points.end(), in.positives.begin(), in.positives.end());
  m.points.insert(m.points.end(), in.negatives.begin(), in.negatives.end());
  m.positive.assign(m.points.size(), 0);
  for (std::size_t i = 0; i < in.positives.size(); ++i) m.positive[i] = 1;
  return m;
}

inline BiCloud from_mask(const MaskedCloud& m) {
  BiCloud out;
  for (std::size_t i = 0; i < m.points.size(); ++i)
    (m.positive[i] ? out.positives : out.negatives).push_back(m.points[i]);
  return out;
}

}  // namespace detail

inline BiCloud dilation(const BiCloud& in, double r) {
  detail::MaskedCloud m = detail::to_mask(in);
  dilate_mask(m.points, m.positive, r);
  return detail::from_mask(m);
}

inline BiCloud erosion(const BiCloud& in, double r) {
  detail::MaskedCloud m = detail::to_mask(in);
  erode_mask(m.points, m.positive, r);
  return detail::from_mask(m);
}

inline BiCloud closing(const BiCloud& in, double r) {
  detail::MaskedCloud m = detail::to_mask(in);
  close_mask(m.points, m.positive, r);
  return detail::from_mask(m);
}

inline BiCloud opening(const BiCloud& in, double r) {
  detail::MaskedCloud m = detail::to_mask(in);
  open_mask(m.points, m.positive, r);
  return detail::from_mask(m);
}

}  // namespace risknav
