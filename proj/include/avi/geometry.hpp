#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace avi {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Raised for violated preconditions and malformed inputs anywhere in the pipeline.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered list of 3D points in workspace meters.
struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  Vec3 centroid() const;
};

/// Axis-aligned box; closed on both faces.
struct AABB {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Ones();

  Vec3 extent() const { return max - min; }
  Vec3 center() const { return 0.5 * (min + max); }
  double largest_edge() const { return extent().maxCoeff(); }
  bool contains(const Vec3& p) const;
  bool degenerate() const { return !(extent().array() > 0.0).all(); }

  static AABB unit() { return AABB{}; }
};

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return RigidTransform{}; }
  static RigidTransform from_translation(const Vec3& t) { return RigidTransform{Mat3::Identity(), t}; }
  static RigidTransform from_axis_angle(const Vec3& axis, double angle, const Vec3& t = Vec3::Zero());

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  /// RᵀR = I and det(R) = +1, each within `tol`.
  bool valid(double tol = 1e-9) const;
};

struct Pose {
  Vec3 position = Vec3::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();

  /// Rotation mapping this frame's axes into the parent frame.
  Mat3 rotation() const { return orientation.toRotationMatrix(); }
  RigidTransform as_transform() const { return RigidTransform{rotation(), position}; }
};

/// Binary occupancy over a cube of `resolution`³ cells, x-major then y then z.
class VoxelGrid {
 public:
  explicit VoxelGrid(int resolution = 64);

  int resolution() const { return resolution_; }
  std::size_t cell_count() const { return cells_.size(); }

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * resolution_ + j) * resolution_ + k;
  }
  bool get(int i, int j, int k) const { return cells_[index(i, j, k)] != 0; }
  void set(int i, int j, int k, bool on = true) { cells_[index(i, j, k)] = on ? 1 : 0; }
  bool at(std::size_t flat) const { return cells_[flat] != 0; }
  void set_flat(std::size_t flat, bool on) { cells_[flat] = on ? 1 : 0; }

  std::size_t occupied_count() const;
  void fill(bool on);

  bool operator==(const VoxelGrid&) const = default;

 private:
  int resolution_;
  std::vector<std::uint8_t> cells_;
};

/// Componentwise min/max of the points. Throws on an empty cloud.
AABB bounding_box(const PointCloud& cloud);

/// Voxelization counters; points strictly outside the box are clamped to the border cell.
struct VoxelizeStats {
  std::size_t clamped = 0;
};

/// Occupies every half-open cell [min + i·w, min + (i+1)·w) that holds at least one point.
/// Points on the max face land in the last cell; points outside the box are clamped into the
/// nearest border cell and counted in `stats`.
VoxelGrid voxelize(const PointCloud& cloud, const AABB& box, int resolution, VoxelizeStats* stats = nullptr);

/// One point per occupied voxel, at the cell center.
PointCloud devoxelize(const VoxelGrid& grid, const AABB& box);

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& xf);

/// Applies `b` first, then `a`.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& a);
Pose apply_to_pose(const RigidTransform& xf, const Pose& pose);

/// Geodesic angle of the relative rotation RaᵀRb, in radians.
double rotation_angle_between(const Mat3& a, const Mat3& b);

// Point-cloud text format: "x y z" per line, '#' comments.
PointCloud read_point_cloud(const std::string& path);
PointCloud parse_point_cloud(const std::string& text);
std::string format_point_cloud(const PointCloud& cloud);

// Voxel-grid binary format: "AVIV", u32 resolution, u32 reserved x2, packed bits LSB-first.
std::vector<std::uint8_t> encode_voxel_grid(const VoxelGrid& grid);
VoxelGrid decode_voxel_grid(const std::vector<std::uint8_t>& bytes);
VoxelGrid read_voxel_grid(const std::string& path);

}  // namespace avi
