#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "avi/geometry.hpp"
#include "avi/locquant.hpp"

namespace avi {

struct CameraIntrinsics {
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  int width = 1, height = 1;

  void validate() const;
};

/// Row-major depth in meters; 0 marks an invalid pixel.
struct DepthImage {
  int width = 0, height = 0;
  std::vector<float> depth;

  float at(int u, int v) const { return depth[static_cast<std::size_t>(v) * width + u]; }
  void validate() const;
};

/// Row-major instance labels; 0 is background, 1..object_count are objects.
struct MaskSet {
  int width = 0, height = 0;
  std::vector<std::uint16_t> labels;
  int object_count = 0;

  void validate() const;
};

struct ObjectSegment {
  int id = 0;
  PointCloud cloud;
  LocationDescriptor descriptor;
  std::vector<std::size_t> pixels;  // row-major pixel index of every point, in order
};

struct SegmentationDiagnostics {
  std::vector<int> dropped_labels;     // labels with no valid point inside the workspace
  std::size_t outside_workspace = 0;   // valid labeled points discarded by the workspace filter
};

struct SceneDecomposition {
  std::vector<ObjectSegment> segments;
  AABB workspace;
  SegmentationDiagnostics diagnostics;

  const ObjectSegment* find(int id) const;
};

/// Lifts every pixel with depth > 0 through the pinhole model, then into the world by
/// `camera_pose` (camera-to-world). Points come out in row-major pixel order.
PointCloud unproject(const DepthImage& depth, const CameraIntrinsics& intrinsics, const Pose& camera_pose,
                     std::vector<std::size_t>* pixel_index = nullptr);

/// Splits the lifted scene into one segment per mask label, keeping only points inside the
/// quantization workspace, and attaches each segment's location descriptor.
SceneDecomposition lift_masks(const DepthImage& depth, const CameraIntrinsics& intrinsics, const Pose& camera_pose,
                              const MaskSet& masks, const QuantConfig& quant);

// Binary images: 16-byte header (magic, u32 width, u32 height, u32 reserved) + LE payload.
std::vector<std::uint8_t> encode_depth(const DepthImage& depth);
DepthImage decode_depth(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_masks(const MaskSet& masks);
/// Object count is taken as the largest label present.
MaskSet decode_masks(const std::vector<std::uint8_t>& bytes);

struct CameraSetup {
  CameraIntrinsics intrinsics;
  Pose pose;
};
// {"fx":..,"fy":..,"cx":..,"cy":..,"width":..,"height":..,"position":[3],"orientation_wxyz":[4]}
nlohmann::json camera_to_json(const CameraSetup& camera);
CameraSetup camera_from_json(const nlohmann::json& j);

}  // namespace avi
