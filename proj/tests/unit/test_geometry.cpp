#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"

#include "avi/geometry.hpp"
#include "oracles.hpp"

using namespace avi;

namespace {

VoxelGrid oracle_voxelize(const PointCloud& cloud, const AABB& box, int res) {
  VoxelGrid g(res);
  for (const auto& p : cloud.points)
    g.set(oracle::cell_of(p.x(), box.min.x(), box.max.x(), res), oracle::cell_of(p.y(), box.min.y(), box.max.y(), res),
          oracle::cell_of(p.z(), box.min.z(), box.max.z(), res));
  return g;
}

}  // namespace

TEST_CASE("voxelize agrees with per-point cell assignment") {
  std::mt19937_64 rng(11);
  const AABB box{Vec3(-0.3, 0.1, 2.0), Vec3(0.5, 0.4, 2.9)};
  for (int res : {2, 7, 64}) {
    std::uniform_real_distribution<double> ux(box.min.x(), box.max.x()), uy(box.min.y(), box.max.y()),
        uz(box.min.z(), box.max.z());
    PointCloud cloud;
    for (int i = 0; i < 3000; ++i) cloud.points.emplace_back(ux(rng), uy(rng), uz(rng));
    VoxelizeStats stats;
    CHECK(voxelize(cloud, box, res, &stats) == oracle_voxelize(cloud, box, res));
    CHECK(stats.clamped == 0);
  }
}

TEST_CASE("voxelize puts max-face points in the last cell and clamps outside points") {
  const AABB box = AABB::unit();
  PointCloud cloud;
  cloud.points = {Vec3(1.0, 1.0, 1.0), Vec3(0.0, 0.0, 0.0), Vec3(-0.2, 0.5, 1.7)};
  VoxelizeStats stats;
  const auto g = voxelize(cloud, box, 4, &stats);
  CHECK(g.get(3, 3, 3));
  CHECK(g.get(0, 0, 0));
  CHECK(g.get(0, 2, 3));
  CHECK(g.occupied_count() == 3);
  CHECK(stats.clamped == 1);
}

TEST_CASE("devoxelize then voxelize is the identity on grids") {
  std::mt19937_64 rng(3);
  const AABB box{Vec3(0.2, -1.0, 0.0), Vec3(0.6, -0.5, 0.3)};
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = oracle::random_grid(rng, 16, 0.3);
    CHECK(voxelize(devoxelize(g, box), box, 16) == g);
  }
}

TEST_CASE("voxelize then devoxelize moves each point at most half a voxel diagonal") {
  std::mt19937_64 rng(5);
  const AABB box{Vec3(0, 0, 0), Vec3(0.8, 0.4, 0.2)};
  const int res = 32;
  const double half_diag = 0.5 * (box.extent() / res).norm();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 p = box.min + Vec3(u(rng), u(rng), u(rng)).cwiseProduct(box.extent());
    PointCloud one;
    one.points = {p};
    const auto back = devoxelize(voxelize(one, box, res), box);
    REQUIRE(back.size() == 1);
    CHECK((back.points[0] - p).norm() <= half_diag + 1e-15);
  }
}

TEST_CASE("axis-angle rotations match the Rodrigues formula") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> ang(-std::numbers::pi, std::numbers::pi);
  for (int i = 0; i < 50; ++i) {
    const Vec3 axis = oracle::random_axis(rng);
    const double a = ang(rng);
    const auto xf = RigidTransform::from_axis_angle(axis, a);
    CHECK((xf.rotation - oracle::rodrigues(axis, a)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(xf.valid());
  }
}

TEST_CASE("compose, invert and pose updates are consistent") {
  std::mt19937_64 rng(23);
  const auto a = RigidTransform::from_axis_angle(oracle::random_axis(rng), 0.7, Vec3(0.1, -0.2, 0.3));
  const auto b = RigidTransform::from_axis_angle(oracle::random_axis(rng), -1.2, Vec3(-0.4, 0.0, 0.9));
  const Vec3 p(0.3, 0.2, -0.5);
  CHECK((compose(a, b).apply(p) - a.apply(b.apply(p))).norm() < 1e-12);
  const auto round = compose(invert(a), a);
  CHECK((round.rotation - Mat3::Identity()).norm() < 1e-12);
  CHECK(round.translation.norm() < 1e-12);

  Pose pose;
  pose.position = Vec3(0.5, 0.5, 0.2);
  pose.orientation = Eigen::Quaterniond(Eigen::AngleAxisd(0.3, Vec3::UnitZ()));
  const Pose moved = apply_to_pose(a, pose);
  CHECK((moved.position - a.apply(pose.position)).norm() < 1e-12);
  CHECK((moved.rotation() - a.rotation * pose.rotation()).norm() < 1e-12);
  CHECK(std::abs(moved.orientation.norm() - 1.0) < 1e-12);
}

TEST_CASE("rotation_angle_between is the geodesic distance") {
  std::mt19937_64 rng(29);
  for (double a : {0.0, 1e-7, 0.01, 0.5, 2.0, 3.1}) {
    const Mat3 r0 = oracle::rodrigues(oracle::random_axis(rng), 0.4);
    const Mat3 r1 = r0 * oracle::rodrigues(oracle::random_axis(rng), a);
    CHECK(rotation_angle_between(r0, r1) == doctest::Approx(a).epsilon(1e-6));
    if (a > 1e-3) CHECK(rotation_angle_between(r0, r1) == doctest::Approx(oracle::geodesic(r0, r1)).epsilon(1e-9));
  }
}

TEST_CASE("apply_transform rejects non-rigid matrices") {
  PointCloud c;
  c.points = {Vec3::Zero()};
  RigidTransform bad;
  bad.rotation(0, 0) = 2.0;
  CHECK_THROWS_AS(apply_transform(c, bad), Error);
  bad = RigidTransform{};
  bad.rotation(2, 2) = -1.0;  // reflection
  CHECK_THROWS_AS(apply_transform(c, bad), Error);
}

TEST_CASE("point-cloud text round trip is bitwise") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-10, 10);
  PointCloud c;
  for (int i = 0; i < 100; ++i) c.points.emplace_back(u(rng), u(rng) * 1e-9, u(rng) * 1e9);
  const auto back = parse_point_cloud(format_point_cloud(c));
  REQUIRE(back.size() == c.size());
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(back.points[i] == c.points[i]);
  CHECK(parse_point_cloud("# header\n1 2 3\n\n  # indented comment\n4 5 6\n").size() == 2);
  CHECK_THROWS_AS(parse_point_cloud("1 2 3 4\n"), Error);
  CHECK_THROWS_AS(parse_point_cloud("1 2\n"), Error);
  CHECK_THROWS_AS(parse_point_cloud("1 2 nan\n"), Error);
}

TEST_CASE("voxel-grid binary round trip and header checks") {
  std::mt19937_64 rng(37);
  const auto g = oracle::random_grid(rng, 9, 0.5);
  const auto bytes = encode_voxel_grid(g);
  CHECK(bytes.size() == 16 + (9 * 9 * 9 + 7) / 8);
  CHECK(decode_voxel_grid(bytes) == g);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_voxel_grid(bad), Error);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(decode_voxel_grid(bad), Error);
}

TEST_CASE("degenerate inputs are rejected") {
  CHECK_THROWS_AS(VoxelGrid(1), Error);
  CHECK_THROWS_AS(bounding_box(PointCloud{}), Error);
  const AABB flat{Vec3::Zero(), Vec3(1, 1, 0)};
  CHECK_THROWS_AS(voxelize(PointCloud{}, flat, 4), Error);
}
