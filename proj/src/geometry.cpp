#include "avi/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "avi/io.hpp"

namespace avi {

Vec3 PointCloud::centroid() const {
  if (points.empty()) throw Error("centroid of an empty cloud");
  Vec3 sum = Vec3::Zero();
  for (const auto& p : points) sum += p;
  return sum / static_cast<double>(points.size());
}

bool AABB::contains(const Vec3& p) const {
  return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
}

RigidTransform RigidTransform::from_axis_angle(const Vec3& axis, double angle, const Vec3& t) {
  return RigidTransform{Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix(), t};
}

bool RigidTransform::valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const Mat3 gram = rotation.transpose() * rotation;
  if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

VoxelGrid::VoxelGrid(int resolution) : resolution_(resolution) {
  if (resolution < 2) throw Error("voxel grid resolution must be >= 2, got " + std::to_string(resolution));
  const auto n = static_cast<std::size_t>(resolution);
  cells_.assign(n * n * n, 0);
}

std::size_t VoxelGrid::occupied_count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

void VoxelGrid::fill(bool on) { std::fill(cells_.begin(), cells_.end(), on ? 1 : 0); }

AABB bounding_box(const PointCloud& cloud) {
  if (cloud.empty()) throw Error("bounding_box: empty cloud");
  AABB box{cloud.points.front(), cloud.points.front()};
  for (const auto& p : cloud.points) {
    box.min = box.min.cwiseMin(p);
    box.max = box.max.cwiseMax(p);
  }
  return box;
}

namespace {

int cell_of(double coord, double lo, double extent, int resolution, bool& clamped) {
  const double f = (coord - lo) / extent * resolution;
  if (f < 0.0) {
    clamped = true;
    return 0;
  }
  if (f >= resolution) {
    // The max face itself belongs to the last cell; anything past it is clamped.
    if (coord > lo + extent) clamped = true;
    return resolution - 1;
  }
  return static_cast<int>(std::floor(f));
}

}  // namespace

VoxelGrid voxelize(const PointCloud& cloud, const AABB& box, int resolution, VoxelizeStats* stats) {
  if (box.degenerate()) throw Error("voxelize: box has non-positive extent");
  VoxelGrid grid(resolution);
  const Vec3 extent = box.extent();
  std::size_t clamped_points = 0;
  for (const auto& p : cloud.points) {
    if (!p.allFinite()) throw Error("voxelize: non-finite point");
    bool clamped = false;
    const int i = cell_of(p.x(), box.min.x(), extent.x(), resolution, clamped);
    const int j = cell_of(p.y(), box.min.y(), extent.y(), resolution, clamped);
    const int k = cell_of(p.z(), box.min.z(), extent.z(), resolution, clamped);
    if (clamped) ++clamped_points;
    grid.set(i, j, k);
  }
  if (stats) stats->clamped = clamped_points;
  return grid;
}

PointCloud devoxelize(const VoxelGrid& grid, const AABB& box) {
  PointCloud out;
  const int n = grid.resolution();
  const Vec3 w = box.extent() / static_cast<double>(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k)
        if (grid.get(i, j, k))
          out.points.emplace_back(box.min.x() + (i + 0.5) * w.x(), box.min.y() + (j + 0.5) * w.y(),
                                  box.min.z() + (k + 0.5) * w.z());
  return out;
}

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& xf) {
  if (!xf.valid()) throw Error("apply_transform: rotation is not orthonormal with det +1");
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(xf.apply(p));
  return out;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return RigidTransform{a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

RigidTransform invert(const RigidTransform& a) {
  const Mat3 rt = a.rotation.transpose();
  return RigidTransform{rt, -(rt * a.translation)};
}

Pose apply_to_pose(const RigidTransform& xf, const Pose& pose) {
  Pose out;
  out.position = xf.apply(pose.position);
  out.orientation = (Eigen::Quaterniond(xf.rotation) * pose.orientation).normalized();
  return out;
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
  const Mat3 rel = a.transpose() * b;
  const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  // acos loses precision near zero; recover the angle from the skew part instead.
  const Vec3 skew(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
  return std::atan2(0.5 * skew.norm(), c);
}

PointCloud parse_point_cloud(const std::string& text) {
  PointCloud cloud;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    double x, y, z;
    if (!(fields >> x >> y >> z)) throw Error("point cloud line " + std::to_string(n) + ": expected 'x y z'");
    std::string rest;
    if (fields >> rest) throw Error("point cloud line " + std::to_string(n) + ": trailing fields");
    Vec3 p(x, y, z);
    if (!p.allFinite()) throw Error("point cloud line " + std::to_string(n) + ": non-finite coordinate");
    cloud.points.push_back(p);
  }
  return cloud;
}

PointCloud read_point_cloud(const std::string& path) { return parse_point_cloud(io::read_text(path)); }

std::string format_point_cloud(const PointCloud& cloud) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& p : cloud.points) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  return out.str();
}

std::vector<std::uint8_t> encode_voxel_grid(const VoxelGrid& grid) {
  std::vector<std::uint8_t> out{'A', 'V', 'I', 'V'};
  io::put_u32(out, static_cast<std::uint32_t>(grid.resolution()));
  io::put_u32(out, 0);
  io::put_u32(out, 0);
  const std::size_t bits = grid.cell_count();
  const std::size_t offset = out.size();
  out.resize(offset + (bits + 7) / 8, 0);
  for (std::size_t i = 0; i < bits; ++i)
    if (grid.at(i)) out[offset + i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  return out;
}

VoxelGrid decode_voxel_grid(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || bytes[0] != 'A' || bytes[1] != 'V' || bytes[2] != 'I' || bytes[3] != 'V')
    throw Error("voxel grid: bad magic");
  const auto res = io::get_u32(bytes, 4);
  if (res < 2 || res > 4096) throw Error("voxel grid: unsupported resolution " + std::to_string(res));
  VoxelGrid grid(static_cast<int>(res));
  const std::size_t bits = grid.cell_count();
  if (bytes.size() != 16 + (bits + 7) / 8) throw Error("voxel grid: payload size mismatch");
  for (std::size_t i = 0; i < bits; ++i) grid.set_flat(i, (bytes[16 + i / 8] >> (i % 8)) & 1u);
  return grid;
}

VoxelGrid read_voxel_grid(const std::string& path) { return decode_voxel_grid(io::read_bytes(path)); }

}  // namespace avi
