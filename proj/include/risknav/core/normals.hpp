// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "risknav/core/errors.hpp"
#include "risknav/core/geometry.hpp"

namespace risknav {

/// Per-point surface normals with planarity scores. Entries with valid == 0
/// carry a zero normal and zero score (too few neighbors or a degenerate
/// neighborhood) and must be skipped by consumers.
struct FrameNormals {
  std::vector<Vec3> normals;
  std::vector<double> scores;
  std::vector<std::uint8_t> valid;
};

struct NormalConfig {
  double d_theta = deg2rad(0.33);  // azimuth pixel size of the range image
  double d_phi = deg2rad(0.5);     // elevation pixel size
  int half_window = 2;             // neighborhood half extent, in pixels
};

namespace detail {

/// Range-image pixel layout shared by normal estimation and ray casting.
struct SphericalGridLayout {
  int n_theta = 0;
  int n_phi = 0;
  double d_theta = 0.0;
  double d_phi = 0.0;
  double phi0 = 0.0;

  int theta_index(double theta) const {
    int it = static_cast<int>(std::floor((theta + kPi) / d_theta));
    if (it < 0) it += n_theta;
    if (it >= n_theta) it -= n_theta;
    return it;
  }

  /// Row index, or -1 outside the covered elevation band.
  int phi_index(double phi) const {
    const int ip = static_cast<int>(std::floor((phi - phi0) / d_phi));
    return (ip < 0 || ip >= n_phi) ? -1 : ip;
  }
};

}  // namespace detail

/// Plane fit over range-image neighborhoods: each point gathers the returns
/// within +/- half_window pixels of its (theta, phi) cell, its normal is the
/// smallest eigenvector of their covariance, oriented toward the sensor
/// origin, and its score is the flatness 1 - l0/l1 of the ascending
/// eigenvalues (1 on a perfect plane, 0 on isotropic scatter). Points with
/// fewer than 3 neighbors or a rank-deficient neighborhood are flagged
/// invalid.
inline FrameNormals estimate_normals(const LidarFrame& frame, const NormalConfig& cfg = {}) {
  frame.validate();
  const std::size_t n = frame.points.size();
  FrameNormals out;
  out.normals.assign(n, Vec3::Zero());
  out.scores.assign(n, 0.0);
  out.valid.assign(n, 0);
  if (n == 0) return out;

  detail::SphericalGridLayout grid;
  grid.d_theta = cfg.d_theta;
  grid.d_phi = cfg.d_phi;
  grid.n_theta = static_cast<int>(std::lround(2.0 * kPi / cfg.d_theta));

  std::vector<SphericalCoord> sph(n);
  double phi_min = kPi, phi_max = -kPi;
  for (std::size_t i = 0; i < n; ++i) {
    sph[i] = to_spherical(frame.points[i].position);
    if (sph[i].rho > 0.0) {
      phi_min = std::min(phi_min, sph[i].phi);
      phi_max = std::max(phi_max, sph[i].phi);
    }
  }
  if (phi_min > phi_max) return out;  // all points at the origin
  grid.phi0 = phi_min;
  grid.n_phi = static_cast<int>(std::floor((phi_max - phi_min) / cfg.d_phi)) + 1;

  // Bucket points per pixel (CSR layout).
  const std::size_t n_cells = static_cast<std::size_t>(grid.n_theta) * static_cast<std::size_t>(grid.n_phi);
  std::vector<int> cell_of(n, -1);
  std::vector<int> counts(n_cells + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (sph[i].rho <= 0.0) continue;
    const int ip = grid.phi_index(sph[i].phi);
    if (ip < 0) continue;
    const int it = grid.theta_index(sph[i].theta);
    cell_of[i] = ip * grid.n_theta + it;
    ++counts[static_cast<std::size_t>(cell_of[i]) + 1];
  }
  for (std::size_t c = 0; c < n_cells; ++c) counts[c + 1] += counts[c];
  std::vector<int> bucket(static_cast<std::size_t>(counts[n_cells]));
  {
    std::vector<int> cursor(counts.begin(), counts.end() - 1);
    for (std::size_t i = 0; i < n; ++i)
      if (cell_of[i] >= 0) bucket[static_cast<std::size_t>(cursor[static_cast<std::size_t>(cell_of[i])]++)] = static_cast<int>(i);
  }

  const int hw = cfg.half_window;
  std::vector<int> nbr;
  nbr.reserve(64);
  for (std::size_t i = 0; i < n; ++i) {
    if (cell_of[i] < 0) continue;
    const int ip = cell_of[i] / grid.n_theta;
    const int it = cell_of[i] % grid.n_theta;
    nbr.clear();
    for (int dp = -hw; dp <= hw; ++dp) {
      const int rp = ip + dp;
      if (rp < 0 || rp >= grid.n_phi) continue;
      for (int dt = -hw; dt <= hw; ++dt) {
        int rt = it + dt;
        if (rt < 0) rt += grid.n_theta;
        if (rt >= grid.n_theta) rt -= grid.n_theta;
        const std::size_t c = static_cast<std::size_t>(rp) * static_cast<std::size_t>(grid.n_theta) + static_cast<std::size_t>(rt);
        for (int b = counts[c]; b < counts[c + 1]; ++b) nbr.push_back(bucket[static_cast<std::size_t>(b)]);
      }
    }
    if (nbr.size() < 3) continue;

    Vec3 mean = Vec3::Zero();
    for (const int j : nbr) mean += frame.points[static_cast<std::size_t>(j)].position;
    mean /= static_cast<double>(nbr.size());
    Mat3 cov = Mat3::Zero();
    for (const int j : nbr) {
      const Vec3 d = frame.points[static_cast<std::size_t>(j)].position - mean;
      cov.noalias() += d * d.transpose();
    }
    cov /= static_cast<double>(nbr.size());

    Eigen::SelfAdjointEigenSolver<Mat3> eig;
    eig.computeDirect(cov);
    const Vec3 ev = eig.eigenvalues();  // ascending
    if (!(ev[2] > 0.0) || ev[1] <= 1e-8 * ev[2]) continue;  // rank < 2

    Vec3 normal = eig.eigenvectors().col(0);
    if (normal.dot(frame.points[i].position) > 0.0) normal = -normal;
    out.normals[i] = normal;
    out.scores[i] = std::clamp(1.0 - ev[0] / ev[1], 0.0, 1.0);
    out.valid[i] = 1;
  }
  return out;
}

}  // namespace risknav
