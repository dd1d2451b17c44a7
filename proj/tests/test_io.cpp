// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "risknav/core/rng.hpp"
#include "risknav/io/frame_ply.hpp"
#include "risknav/io/pose_csv.hpp"

using Catch::Matchers::ContainsSubstring;
using risknav::LidarFrame;
using risknav::Pose;
using risknav::Quat;
using risknav::Rng;
using risknav::TimedPoint;
using risknav::Vec3;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  os << content;
}

std::string read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

LidarFrame random_frame(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  LidarFrame f;
  f.t0 = 1.0 / 3.0;
  f.t1 = 2.0 / 3.0;
  f.frame_id = -7;
  for (std::size_t i = 0; i < n; ++i) {
    TimedPoint p;
    p.position = Vec3(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10));
    p.stamp = rng.uniform(f.t0, f.t1);
    p.ring = static_cast<int>(rng.index(16));
    f.points.push_back(p);
  }
  return f;
}

}  // namespace

TEST_CASE("frame codec round-trips binary frames losslessly", "[io]") {
  const LidarFrame f = random_frame(11, 200);

  SECTION("without labels") {
    const std::string path = tmp_path("risknav_frame_a.ply");
    risknav::io::write_frame_ply(path, f);
    const risknav::io::PlyFrame got = risknav::io::read_frame_ply(path);

    REQUIRE(got.frame.points.size() == f.points.size());
    CHECK(got.frame.t0 == f.t0);
    CHECK(got.frame.t1 == f.t1);
    CHECK(got.frame.frame_id == f.frame_id);
    CHECK(got.labels.empty());
    for (std::size_t i = 0; i < f.points.size(); ++i) {
      CHECK(got.frame.points[i].position == f.points[i].position);
      CHECK(got.frame.points[i].stamp == f.points[i].stamp);
      CHECK(got.frame.points[i].ring == f.points[i].ring);
    }
  }

  SECTION("with labels, and encoding is deterministic") {
    std::vector<std::uint8_t> labels;
    for (std::size_t i = 0; i < f.points.size(); ++i)
      labels.push_back(static_cast<std::uint8_t>(i % 5));

    const std::string p1 = tmp_path("risknav_frame_b1.ply");
    const std::string p2 = tmp_path("risknav_frame_b2.ply");
    risknav::io::write_frame_ply(p1, f, labels);
    risknav::io::write_frame_ply(p2, f, labels);
    CHECK(read_bytes(p1) == read_bytes(p2));

    const risknav::io::PlyFrame got = risknav::io::read_frame_ply(p1);
    CHECK(got.labels == labels);
  }

  SECTION("empty frame keeps its stamp window") {
    LidarFrame empty;
    empty.t0 = 5.5;
    empty.t1 = 5.6;
    empty.frame_id = 9;
    const std::string path = tmp_path("risknav_frame_empty.ply");
    risknav::io::write_frame_ply(path, empty);
    const risknav::io::PlyFrame got = risknav::io::read_frame_ply(path);
    CHECK(got.frame.points.empty());
    CHECK(got.frame.t0 == 5.5);
    CHECK(got.frame.t1 == 5.6);
    CHECK(got.frame.frame_id == 9);
  }
}

TEST_CASE("frame codec decodes ascii and foreign layouts", "[io]") {
  SECTION("reordered float columns with an unknown property and no ring") {
    const std::string path = tmp_path("risknav_frame_ascii.ply");
    write_text(path,
               "ply\n"
               "format ascii 1.0\n"
               "element vertex 2\n"
               "property float intensity\n"
               "property double t\n"
               "property float x\n"
               "property float y\n"
               "property float z\n"
               "end_header\n"
               "0.5 0.25 1.5 -2.5 0.125\n"
               "0.75 0.5 2.5 3.5 1\n");
    const risknav::io::PlyFrame got = risknav::io::read_frame_ply(path);
    REQUIRE(got.frame.points.size() == 2);
    CHECK(got.frame.points[0].position == Vec3(1.5, -2.5, 0.125));
    CHECK(got.frame.points[0].stamp == 0.25);
    CHECK(got.frame.points[0].ring == 0);
    CHECK(got.frame.points[1].stamp == 0.5);
    // No encoded window: stamps define it.
    CHECK(got.frame.t0 == 0.25);
    CHECK(got.frame.t1 == 0.5);
  }

  SECTION("binary with uchar ring and label") {
    const std::string path = tmp_path("risknav_frame_uchar.ply");
    std::string blob =
        "ply\n"
        "format binary_little_endian 1.0\n"
        "element vertex 1\n"
        "property double x\nproperty double y\nproperty double z\nproperty double t\n"
        "property uchar ring\nproperty uchar label\n"
        "end_header\n";
    const double vals[4] = {1.0, 2.0, 3.0, 0.5};
    blob.append(reinterpret_cast<const char*>(vals), sizeof(vals));
    blob.push_back(static_cast<char>(3));  // ring
    blob.push_back(static_cast<char>(4));  // label
    write_text(path, blob);

    const risknav::io::PlyFrame got = risknav::io::read_frame_ply(path);
    REQUIRE(got.frame.points.size() == 1);
    CHECK(got.frame.points[0].position == Vec3(1.0, 2.0, 3.0));
    CHECK(got.frame.points[0].ring == 3);
    REQUIRE(got.labels.size() == 1);
    CHECK(got.labels[0] == 4);
  }
}

TEST_CASE("frame codec reports malformed input with byte offsets", "[io]") {
  const std::string path = tmp_path("risknav_frame_bad.ply");

  SECTION("missing t names the property") {
    write_text(path,
               "ply\nformat ascii 1.0\nelement vertex 0\n"
               "property float x\nproperty float y\nproperty float z\nend_header\n");
    CHECK_THROWS_WITH(risknav::io::read_frame_ply(path), ContainsSubstring("property 't'"));
  }

  SECTION("bad magic points at byte zero") {
    write_text(path, "plx\nformat ascii 1.0\nend_header\n");
    CHECK_THROWS_WITH(risknav::io::read_frame_ply(path), ContainsSubstring("byte 0"));
  }

  SECTION("truncated binary payload") {
    LidarFrame f = random_frame(3, 3);
    risknav::io::write_frame_ply(path, f);
    std::string blob = read_bytes(path);
    blob.resize(blob.size() - 20);
    write_text(path, blob);
    CHECK_THROWS_WITH(risknav::io::read_frame_ply(path), ContainsSubstring("truncated"));
  }

  SECTION("list properties rejected") {
    write_text(path,
               "ply\nformat ascii 1.0\nelement vertex 0\n"
               "property list uchar int vertex_indices\nend_header\n");
    CHECK_THROWS_WITH(risknav::io::read_frame_ply(path), ContainsSubstring("list"));
  }

  SECTION("big endian rejected") {
    write_text(path, "ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n");
    CHECK_THROWS_WITH(risknav::io::read_frame_ply(path), ContainsSubstring("unsupported format"));
  }

  SECTION("ascii row with wrong arity") {
    write_text(path,
               "ply\nformat ascii 1.0\nelement vertex 1\n"
               "property double x\nproperty double y\nproperty double z\nproperty double t\n"
               "end_header\n"
               "1 2 3\n");
    CHECK_THROWS_WITH(risknav::io::read_frame_ply(path), ContainsSubstring("expected 4 values"));
  }
}

TEST_CASE("pose codec round-trips and validates", "[io]") {
  const std::string path = tmp_path("risknav_poses.csv");

  SECTION("round-trip is exact") {
    std::vector<Pose> poses;
    poses.push_back(Pose::identity(0.5));
    Pose p;
    p.q = Quat(Eigen::AngleAxisd(0.7, Vec3(1.0, 2.0, 2.0).normalized()));
    p.t = Vec3(0.1, -2.25, 3.5);
    p.stamp = 1.25;
    poses.push_back(p);

    risknav::io::write_poses_csv(path, poses);
    const std::vector<Pose> got = risknav::io::read_poses_csv(path);
    REQUIRE(got.size() == 2);
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].stamp == poses[i].stamp);
      CHECK(got[i].t == poses[i].t);
      CHECK(got[i].q.coeffs() == poses[i].q.coeffs());
    }
  }

  SECTION("slightly off-norm quaternions are renormalized") {
    write_text(path, "stamp,tx,ty,tz,qx,qy,qz,qw\n0,0,0,0,0,0,0,1.0005\n");
    const std::vector<Pose> got = risknav::io::read_poses_csv(path);
    REQUIRE(got.size() == 1);
    CHECK(got[0].q.norm() == Catch::Approx(1.0).margin(1e-12));
    CHECK(got[0].q.w() == Catch::Approx(1.0).margin(1e-12));
  }

  SECTION("badly off-norm quaternions are rejected") {
    write_text(path, "stamp,tx,ty,tz,qx,qy,qz,qw\n0,0,0,0,0,0,0,1.5\n");
    CHECK_THROWS_WITH(risknav::io::read_poses_csv(path), ContainsSubstring("quaternion norm"));
  }

  SECTION("non-monotone stamps are rejected") {
    write_text(path, "stamp,tx,ty,tz,qx,qy,qz,qw\n1,0,0,0,0,0,0,1\n1,0,0,0,0,0,0,1\n");
    CHECK_THROWS_WITH(risknav::io::read_poses_csv(path), ContainsSubstring("not increasing"));
  }

  SECTION("wrong header is rejected") {
    write_text(path, "stamp,x,y,z\n");
    CHECK_THROWS_WITH(risknav::io::read_poses_csv(path), ContainsSubstring("bad header"));
  }
}
