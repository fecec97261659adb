#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "doctest.h"

#include "avi/vqtok.hpp"
#include "oracles.hpp"

using namespace avi;

namespace {

Codebook binary_codebook(std::mt19937_64& rng, int k, int dim) {
  std::vector<std::vector<double>> e{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
  std::bernoulli_distribution b(0.5);
  while (static_cast<int>(e.size()) < k) {
    std::vector<double> v(dim);
    for (auto& x : v) x = b(rng) ? 1.0 : 0.0;
    e.push_back(v);
  }
  return Codebook(e);
}

double sq_dist(std::uint64_t mask, const std::vector<double>& e) {
  double d = 0.0;
  for (std::size_t c = 0; c < e.size(); ++c) {
    const double x = (mask >> c) & 1u ? 1.0 : 0.0;
    d += (x - e[c]) * (x - e[c]);
  }
  return d;
}

VoxelGrid solid_sphere(int res, const Vec3& center, double radius) {
  VoxelGrid g(res);
  for (int i = 0; i < res; ++i)
    for (int j = 0; j < res; ++j)
      for (int k = 0; k < res; ++k)
        if ((Vec3(i + 0.5, j + 0.5, k + 0.5) - center).norm() <= radius) g.set(i, j, k);
  return g;
}

VoxelGrid solid_box(int res, const Vec3& lo, const Vec3& hi) {
  VoxelGrid g(res);
  for (int i = 0; i < res; ++i)
    for (int j = 0; j < res; ++j)
      for (int k = 0; k < res; ++k) {
        const Vec3 c(i + 0.5, j + 0.5, k + 0.5);
        if ((c.array() >= lo.array()).all() && (c.array() <= hi.array()).all()) g.set(i, j, k);
      }
  return g;
}

VoxelGrid random_primitive(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Vec3 c(20 + 24 * u(rng), 20 + 24 * u(rng), 20 + 24 * u(rng));
  if (u(rng) < 0.5) return solid_sphere(64, c, 8 + 10 * u(rng));
  const Vec3 half(6 + 10 * u(rng), 6 + 10 * u(rng), 6 + 10 * u(rng));
  return solid_box(64, c - half, c + half);
}

}  // namespace

TEST_CASE("standard patch layout yields 8192 patches of 32 voxels") {
  const auto l = PatchLayout::standard();
  CHECK(l.patch_grid() == std::array<int, 3>{16, 16, 32});
  CHECK(l.patches_total() == kShapeTokens);
  CHECK(l.voxels_per_patch() == 32);
  CHECK_THROWS_AS((PatchLayout{64, {3, 4, 2}}.validate()), Error);
  CHECK_THROWS_AS((PatchLayout{64, {8, 8, 8}}.validate()), Error);
}

TEST_CASE("patch masks use patch-major then voxel-major ordering") {
  const auto l = PatchLayout::standard();
  VoxelGrid g(64);
  // Voxel (4*px + dx, 4*py + dy, 2*pz + dz) with px=3, py=5, pz=7, dx=2, dy=1, dz=1.
  g.set(14, 21, 15);
  const int p = (3 * 16 + 5) * 32 + 7;
  const int comp = (2 * 4 + 1) * 2 + 1;
  CHECK(patch_mask(g, p, l) == (std::uint64_t{1} << comp));
  for (int q : {0, p - 1, p + 1}) CHECK(patch_mask(g, q, l) == 0);
  const auto v = patch_vector(g, p, l);
  CHECK(v[comp] == 1.0);
}

TEST_CASE("codebook construction enforces the reserved entries") {
  const int dim = 32;
  std::vector<std::vector<double>> e{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
  CHECK_NOTHROW(Codebook{e});
  auto bad = e;
  bad[0][3] = 0.2;
  CHECK_THROWS_AS(Codebook{bad}, Error);
  bad = e;
  bad[1][0] = 0.9;
  CHECK_THROWS_AS(Codebook{bad}, Error);
  bad = e;
  bad.push_back(std::vector<double>(dim, 1.5));
  CHECK_THROWS_AS(Codebook{bad}, Error);
  CHECK_THROWS_AS(Codebook{{std::vector<double>(dim, 0.0)}}, Error);
}

TEST_CASE("nearest entry matches a brute-force scan") {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SUBCASE("continuous prototypes") {
    std::vector<std::vector<double>> e{std::vector<double>(32, 0.0), std::vector<double>(32, 1.0)};
    for (int k = 0; k < 62; ++k) {
      std::vector<double> v(32);
      for (auto& x : v) x = u(rng);
      e.push_back(v);
    }
    const Codebook cb(e);
    for (int t = 0; t < 2000; ++t) {
      const std::uint64_t mask = rng() & 0xFFFFFFFFu;
      double best = std::numeric_limits<double>::infinity();
      for (const auto& x : e) best = std::min(best, sq_dist(mask, x));
      CHECK(sq_dist(mask, e[cb.nearest(mask)]) == doctest::Approx(best).epsilon(1e-12));
    }
  }
  SUBCASE("binary prototypes break ties toward the lowest index") {
    auto cb = binary_codebook(rng, 40, 32);
    for (int t = 0; t < 2000; ++t) {
      const std::uint64_t mask = rng() & 0xFFFFFFFFu;
      std::size_t best = 0;
      for (std::size_t k = 1; k < cb.size(); ++k)
        if (sq_dist(mask, cb.entry(k)) < sq_dist(mask, cb.entry(best))) best = k;
      CHECK(static_cast<std::size_t>(cb.nearest(mask)) == best);
    }
  }
}

TEST_CASE("empty and full grids map to the reserved tokens") {
  std::mt19937_64 rng(47);
  const auto cb = binary_codebook(rng, 64, 32);
  VoxelGrid g(64);
  const auto empty = encode_grid(g, cb);
  CHECK(empty.tokens.size() == 8192);
  CHECK(std::all_of(empty.tokens.begin(), empty.tokens.end(), [](auto t) { return t == 0; }));
  g.fill(true);
  const auto full = encode_grid(g, cb);
  CHECK(std::all_of(full.tokens.begin(), full.tokens.end(), [](auto t) { return t == 1; }));
  CHECK(decode_grid(full, cb) == g);
}

TEST_CASE("decode rejects malformed token grids") {
  std::mt19937_64 rng(53);
  const auto cb = binary_codebook(rng, 8, 32);
  TokenGrid t;
  t.tokens.assign(8191, 0);
  CHECK_THROWS_AS(decode_grid(t, cb), Error);
  t.tokens.assign(8192, 0);
  t.tokens[17] = 8;
  CHECK_THROWS_AS(decode_grid(t, cb), Error);
}

TEST_CASE("a codebook covering every pattern reconstructs exactly") {
  std::mt19937_64 rng(59);
  std::vector<VoxelGrid> grids{random_primitive(rng), random_primitive(rng)};
  const auto trained = train_codebook(grids, 4096, 1);
  CHECK(trained.distinct_patterns + 2 <= 4096);
  for (const auto& g : grids) CHECK(decode_grid(encode_grid(g, trained.codebook), trained.codebook) == g);
}

TEST_CASE("trained codebooks are binary, deterministic and re-encode exactly") {
  std::mt19937_64 rng(61);
  std::vector<VoxelGrid> grids;
  for (int i = 0; i < 6; ++i) grids.push_back(oracle::random_grid(rng, 64, 0.05));
  const auto a = train_codebook(grids, 64, 9);
  const auto b = train_codebook(grids, 64, 9);
  CHECK(a.codebook == b.codebook);
  CHECK(a.codebook.size() == 64);
  // Sparse noise averages toward empty, so some prototypes collapse and padding fills the tail.
  std::set<std::vector<double>> seen;
  std::size_t padding = 0;
  for (std::size_t k = 0; k < a.codebook.size(); ++k) {
    for (double v : a.codebook.entry(k)) CHECK((v == 0.0 || v == 1.0));
    if (k > 0 && a.codebook.entry(k) == a.codebook.entry(0))
      ++padding;
    else
      seen.insert(a.codebook.entry(k));
  }
  CHECK(seen.size() + padding == a.codebook.size());
  CHECK(a.padded == (padding > 0));
  for (int i = 0; i < 5; ++i) {
    const auto g = oracle::random_grid(rng, 64, 0.1);
    const auto t = encode_grid(g, a.codebook);
    CHECK(encode_grid(decode_grid(t, a.codebook), a.codebook) == t);
  }
}

TEST_CASE("training with few distinct patterns pads and flags the codebook") {
  VoxelGrid g(64);
  g.set(0, 0, 0);
  const auto r = train_codebook({g}, 16, 3);
  CHECK(r.padded);
  CHECK(r.distinct_patterns == 1);
  CHECK(r.codebook.size() == 16);
  const auto empty_only = train_codebook({VoxelGrid(64)}, 8, 3);
  CHECK(empty_only.padded);
  CHECK(empty_only.distinct_patterns == 0);
  CHECK_THROWS_AS(train_codebook({}, 8, 3), Error);
  CHECK_THROWS_AS(train_codebook({g}, 1, 3), Error);
}

TEST_CASE("trained codebook reconstructs held-out solid primitives") {
  std::mt19937_64 rng(67);
  std::vector<VoxelGrid> train;
  for (int i = 0; i < 24; ++i) train.push_back(random_primitive(rng));
  const auto cb = train_codebook(train, 512, 5).codebook;
  double worst = 1.0;
  for (int i = 0; i < 10; ++i) {
    const auto g = random_primitive(rng);
    worst = std::min(worst, voxel_iou(g, decode_grid(encode_grid(g, cb), cb)));
  }
  INFO("worst held-out IoU " << worst);
  CHECK(worst >= 0.85);
}

TEST_CASE("voxel IoU") {
  VoxelGrid a(4), b(4);
  CHECK(voxel_iou(a, b) == 1.0);
  a.set(0, 0, 0);
  a.set(1, 0, 0);
  b.set(1, 0, 0);
  CHECK(voxel_iou(a, b) == 0.5);
  CHECK_THROWS_AS(voxel_iou(a, VoxelGrid(8)), Error);
}

TEST_CASE("codebook JSON round trip") {
  std::mt19937_64 rng(71);
  const auto cb = binary_codebook(rng, 12, 32);
  const auto j = codebook_to_json(cb);
  CHECK(j.at("k") == 12);
  CHECK(j.at("dim") == 32);
  CHECK(codebook_from_json(j) == cb);
  auto bad = j;
  bad["k"] = 13;
  CHECK_THROWS_AS(codebook_from_json(bad), Error);
}
