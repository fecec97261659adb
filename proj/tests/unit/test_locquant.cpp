#include <cmath>
#include <random>

#include "doctest.h"

#include "avi/locquant.hpp"

using namespace avi;

namespace {

QuantConfig with_bins(int b, bool lq = true) {
  QuantConfig cfg;
  cfg.position_bins = b;
  cfg.lq_enabled = lq;
  return cfg;
}

PointCloud single(const Vec3& p) {
  PointCloud c;
  c.points = {p};
  return c;
}

}  // namespace

TEST_CASE("effective resolution for the four perception configurations") {
  CHECK(effective_resolution(with_bins(64, false), 64, 1.0) == 64);
  CHECK(effective_resolution(with_bins(64), 64, 1.0) == 64);
  CHECK(effective_resolution(with_bins(128), 64, 1.0) == 128);
  CHECK(effective_resolution(with_bins(256), 64, 1.0) == 256);
  CHECK(effective_resolution(with_bins(64, false), 64, 0.5) == 128);
}

TEST_CASE("effective resolution rounds non-integral ratios up and rejects bad fractions") {
  CHECK(effective_resolution(with_bins(64, false), 64, 0.3) == 214);  // 64 / 0.3 = 213.33
  CHECK(effective_resolution(with_bins(256), 64, 0.1) == 640);
  CHECK(effective_resolution(with_bins(256), 64, 0.9) == 256);
  CHECK_THROWS_AS(effective_resolution(with_bins(64), 64, 0.0), Error);
  CHECK_THROWS_AS(effective_resolution(with_bins(64), 64, 1.5), Error);
}

TEST_CASE("vocabulary segments are laid out back to back") {
  const auto v = extend_vocabulary(32000, 8192);
  CHECK(v.position_size() == 768);
  CHECK(v.scale_size() == 128);
  CHECK(v.location_size() == 896);
  CHECK(v.position_offset(0) == 32000);
  CHECK(v.position_offset(1) == 32256);
  CHECK(v.position_offset(2) == 32512);
  CHECK(v.scale_offset() == 32768);
  CHECK(v.shape_offset() == 32896);
  CHECK(v.total_size() == 32000 + 896 + 8192);
  CHECK(v.is_text(31999));
  CHECK_FALSE(v.is_text(32000));
  CHECK(v.is_shape(32896));
  CHECK_FALSE(v.is_shape(v.total_size()));
  CHECK(v.separator() >= v.total_size());
  CHECK(v.pair_separator() != v.separator());
  CHECK_THROWS_AS(extend_vocabulary(0, 8192), Error);
  CHECK_THROWS_AS(extend_vocabulary(100, 1), Error);
}

TEST_CASE("location tokens round trip and reject ids from the wrong segment") {
  const auto v = extend_vocabulary(1000, 512);
  const LocationDescriptor d{1, 128, 256, 77};
  const auto t = tokens_of(d, v);
  CHECK(t[0] == 1000);
  CHECK(t[1] == 1000 + 256 + 127);
  CHECK(t[2] == 1000 + 512 + 255);
  CHECK(t[3] == 1000 + 768 + 76);
  CHECK(descriptor_of(t, v) == d);
  auto swapped = t;
  std::swap(swapped[0], swapped[1]);
  CHECK_THROWS_AS(descriptor_of(swapped, v), Error);
  auto text = t;
  text[3] = 5;
  CHECK_THROWS_AS(descriptor_of(text, v), Error);
  CHECK_THROWS_AS(tokens_of(LocationDescriptor{0, 1, 1, 1}, v), Error);
}

TEST_CASE("smaller bin counts use the head of each position segment") {
  const auto cfg = with_bins(64);
  const auto v = extend_vocabulary(10, 2);
  const auto d = quantize_location(single(Vec3(1.0, 0.0, 0.5)), cfg);
  CHECK(d.x_bin == 64);
  CHECK(d.y_bin == 1);
  CHECK(d.z_bin == 33);
  CHECK(tokens_of(d, v)[0] == v.position_offset(0) + 63);
}

TEST_CASE("bins follow floor(fraction * B) + 1 with the max face in the last bin") {
  QuantConfig cfg;
  const auto d = quantize_location(single(Vec3(0.5, 0.0, 1.0)), cfg);
  CHECK(d.x_bin == 129);
  CHECK(d.y_bin == 1);
  CHECK(d.z_bin == 256);
  CHECK(d.s_bin == 1);  // a single point has zero extent
}

TEST_CASE("scale bin tracks the largest bounding-box edge") {
  QuantConfig cfg;
  PointCloud c;
  c.points = {Vec3(0.2, 0.2, 0.2), Vec3(0.45, 0.3, 0.25)};  // largest edge 0.25
  const auto d = quantize_location(c, cfg);
  CHECK(d.s_bin == 33);  // floor(0.25 * 128) + 1
  CHECK(dequantize_location(d, cfg).scale_fraction == doctest::Approx(32.5 / 128));
}

TEST_CASE("non-cubic workspaces quantize each axis over its own extent") {
  QuantConfig cfg;
  cfg.workspace = AABB{Vec3(-1.0, 0.0, 0.0), Vec3(1.0, 0.5, 0.25)};
  const auto d = quantize_location(single(Vec3(0.0, 0.25, 0.125)), cfg);
  CHECK(d.x_bin == 129);
  CHECK(d.y_bin == 129);
  CHECK(d.z_bin == 129);
  const auto back = dequantize_location(d, cfg);
  CHECK(std::abs(back.centroid.x() - 0.0) <= 2.0 / 512);
  CHECK(std::abs(back.centroid.y() - 0.25) <= 0.5 / 512);
}

TEST_CASE("centroid round trip stays within half a bin on random clouds") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int b : {2, 17, 64, 256}) {
    const auto cfg = with_bins(b);
    for (int i = 0; i < 500; ++i) {
      PointCloud c;
      for (int k = 0; k < 5; ++k) c.points.emplace_back(u(rng), u(rng), u(rng));
      const auto back = dequantize_location(quantize_location(c, cfg), cfg);
      const Vec3 err = (back.centroid - c.centroid()).cwiseAbs();
      CHECK(err.maxCoeff() <= 1.0 / (2.0 * b) + 1e-12);
    }
  }
}

TEST_CASE("quantize rejects empty clouds and centroids outside the workspace") {
  QuantConfig cfg;
  CHECK_THROWS_AS(quantize_location(PointCloud{}, cfg), Error);
  CHECK_THROWS_AS(quantize_location(single(Vec3(1.5, 0.5, 0.5)), cfg), Error);
  CHECK_THROWS_AS(dequantize_location(LocationDescriptor{257, 1, 1, 1}, cfg), Error);
  CHECK_THROWS_AS(dequantize_location(LocationDescriptor{1, 1, 1, 129}, cfg), Error);
}

TEST_CASE("object frame is a cube at the decoded centroid") {
  QuantConfig cfg;
  cfg.workspace = AABB{Vec3(0, 0, 0), Vec3(2.0, 1.0, 1.0)};
  const LocationDescriptor d{100, 50, 20, 64};
  const auto loc = dequantize_location(d, cfg);
  const auto frame = object_frame(d, cfg);
  CHECK((frame.center() - loc.centroid).norm() < 1e-12);
  const double edge = loc.scale_fraction * 2.0;
  CHECK(frame.extent().x() == doctest::Approx(edge));
  CHECK(frame.extent().y() == doctest::Approx(edge));
  CHECK(frame.extent().z() == doctest::Approx(edge));
}

TEST_CASE("compose_scene places decoded grids and drops points outside the workspace") {
  QuantConfig cfg;
  VoxelGrid g(4);
  g.fill(true);
  const LocationDescriptor inside{128, 128, 128, 16};
  const LocationDescriptor edge{1, 128, 128, 64};  // half the frame hangs over x = 0
  const auto scene = compose_scene({{g, inside}, {g, edge}}, cfg);
  CHECK(scene.cloud.size() + scene.clipped_points == 128);
  CHECK(scene.clipped_points == 32);
  for (const auto& p : scene.cloud.points) CHECK(cfg.workspace.contains(p));
}

TEST_CASE("quantization config JSON round trip and validation") {
  QuantConfig cfg;
  cfg.position_bins = 128;
  cfg.workspace = AABB{Vec3(-0.5, -0.5, 0.0), Vec3(0.5, 0.5, 0.8)};
  const nlohmann::json j = cfg;
  const auto back = j.get<QuantConfig>();
  CHECK(back.position_bins == 128);
  CHECK(back.workspace.max.z() == 0.8);
  nlohmann::json bad = j;
  bad["position_bins"] = 300;
  CHECK_THROWS_AS(bad.get<QuantConfig>(), Error);
  bad = j;
  bad["workspace"]["max"] = {-0.5, 0.5, 0.8};
  CHECK_THROWS_AS(bad.get<QuantConfig>(), Error);
}
