#include "avi/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

#include "avi/io.hpp"

namespace avi {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error("camera: focal lengths must be positive");
  if (width < 1 || height < 1) throw Error("camera: image size must be positive");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height))
    throw Error("camera: principal point outside the image");
}

void DepthImage::validate() const {
  if (width < 0 || height < 0 || depth.size() != static_cast<std::size_t>(width) * height)
    throw Error("depth image: buffer size does not match dimensions");
  for (float d : depth)
    if (!std::isfinite(d) || d < 0.0f) throw Error("depth image: values must be finite and >= 0");
}

void MaskSet::validate() const {
  if (width < 0 || height < 0 || labels.size() != static_cast<std::size_t>(width) * height)
    throw Error("mask set: buffer size does not match dimensions");
  for (auto l : labels)
    if (l > object_count) throw Error("mask set: label " + std::to_string(l) + " exceeds object count");
}

const ObjectSegment* SceneDecomposition::find(int id) const {
  for (const auto& s : segments)
    if (s.id == id) return &s;
  return nullptr;
}

PointCloud unproject(const DepthImage& depth, const CameraIntrinsics& intrinsics, const Pose& camera_pose,
                     std::vector<std::size_t>* pixel_index) {
  intrinsics.validate();
  depth.validate();
  if (depth.width != intrinsics.width || depth.height != intrinsics.height)
    throw Error("unproject: depth image is " + std::to_string(depth.width) + "x" + std::to_string(depth.height) +
                " but intrinsics expect " + std::to_string(intrinsics.width) + "x" + std::to_string(intrinsics.height));
  const auto to_world = camera_pose.as_transform();
  PointCloud cloud;
  if (pixel_index) pixel_index->clear();
  for (int v = 0; v < depth.height; ++v)
    for (int u = 0; u < depth.width; ++u) {
      const double d = depth.at(u, v);
      if (d <= 0.0) continue;
      const Vec3 cam(d * (u - intrinsics.cx) / intrinsics.fx, d * (v - intrinsics.cy) / intrinsics.fy, d);
      cloud.points.push_back(to_world.apply(cam));
      if (pixel_index) pixel_index->push_back(static_cast<std::size_t>(v) * depth.width + u);
    }
  return cloud;
}

SceneDecomposition lift_masks(const DepthImage& depth, const CameraIntrinsics& intrinsics, const Pose& camera_pose,
                              const MaskSet& masks, const QuantConfig& quant) {
  quant.validate();
  masks.validate();
  if (masks.width != depth.width || masks.height != depth.height)
    throw Error("lift_masks: mask and depth dimensions differ");
  if (masks.object_count < 1) throw Error("lift_masks: no objects in mask set");

  std::vector<std::size_t> pixels;
  const PointCloud scene = unproject(depth, intrinsics, camera_pose, &pixels);

  std::map<int, ObjectSegment> by_label;
  SceneDecomposition out;
  out.workspace = quant.workspace;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const int label = masks.labels[pixels[i]];
    if (label == 0) continue;
    if (!quant.workspace.contains(scene.points[i])) {
      ++out.diagnostics.outside_workspace;
      continue;
    }
    auto& seg = by_label[label];
    seg.id = label;
    seg.cloud.points.push_back(scene.points[i]);
    seg.pixels.push_back(pixels[i]);
  }

  for (int label = 1; label <= masks.object_count; ++label) {
    auto it = by_label.find(label);
    if (it == by_label.end()) {
      out.diagnostics.dropped_labels.push_back(label);
      continue;
    }
    it->second.descriptor = quantize_location(it->second.cloud, quant);
    out.segments.push_back(std::move(it->second));
  }
  if (out.segments.empty()) throw Error("lift_masks: every segment is empty after lifting");
  return out;
}

namespace {

std::vector<std::uint8_t> image_header(const char* magic, int w, int h) {
  std::vector<std::uint8_t> out(magic, magic + 4);
  io::put_u32(out, static_cast<std::uint32_t>(w));
  io::put_u32(out, static_cast<std::uint32_t>(h));
  io::put_u32(out, 0);
  return out;
}

std::pair<int, int> read_header(const std::vector<std::uint8_t>& bytes, const char* magic, std::size_t elem) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), magic, 4) != 0)
    throw Error(std::string("expected ") + magic + " image header");
  const auto w = io::get_u32(bytes, 4);
  const auto h = io::get_u32(bytes, 8);
  if (w > 1u << 15 || h > 1u << 15) throw Error("image dimensions too large");
  if (bytes.size() != 16 + static_cast<std::size_t>(w) * h * elem) throw Error("image payload size mismatch");
  return {static_cast<int>(w), static_cast<int>(h)};
}

}  // namespace

std::vector<std::uint8_t> encode_depth(const DepthImage& depth) {
  depth.validate();
  auto out = image_header("AVID", depth.width, depth.height);
  for (float d : depth.depth) {
    std::uint32_t bits;
    std::memcpy(&bits, &d, 4);
    io::put_u32(out, bits);
  }
  return out;
}

DepthImage decode_depth(const std::vector<std::uint8_t>& bytes) {
  const auto [w, h] = read_header(bytes, "AVID", 4);
  DepthImage img{w, h, std::vector<float>(static_cast<std::size_t>(w) * h)};
  for (std::size_t i = 0; i < img.depth.size(); ++i) {
    const std::uint32_t bits = io::get_u32(bytes, 16 + 4 * i);
    std::memcpy(&img.depth[i], &bits, 4);
  }
  img.validate();
  return img;
}

std::vector<std::uint8_t> encode_masks(const MaskSet& masks) {
  masks.validate();
  auto out = image_header("AVIM", masks.width, masks.height);
  for (auto l : masks.labels) {
    out.push_back(static_cast<std::uint8_t>(l & 0xFF));
    out.push_back(static_cast<std::uint8_t>(l >> 8));
  }
  return out;
}

MaskSet decode_masks(const std::vector<std::uint8_t>& bytes) {
  const auto [w, h] = read_header(bytes, "AVIM", 2);
  MaskSet m{w, h, std::vector<std::uint16_t>(static_cast<std::size_t>(w) * h), 0};
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    m.labels[i] = static_cast<std::uint16_t>(bytes[16 + 2 * i] | (bytes[17 + 2 * i] << 8));
    m.object_count = std::max<int>(m.object_count, m.labels[i]);
  }
  return m;
}

nlohmann::json camera_to_json(const CameraSetup& camera) {
  const auto& k = camera.intrinsics;
  const auto& q = camera.pose.orientation;
  return {{"fx", k.fx},         {"fy", k.fy},
          {"cx", k.cx},         {"cy", k.cy},
          {"width", k.width},   {"height", k.height},
          {"position", {camera.pose.position.x(), camera.pose.position.y(), camera.pose.position.z()}},
          {"orientation_wxyz", {q.w(), q.x(), q.y(), q.z()}}};
}

CameraSetup camera_from_json(const nlohmann::json& j) {
  CameraSetup cam;
  cam.intrinsics.fx = j.at("fx").get<double>();
  cam.intrinsics.fy = j.at("fy").get<double>();
  cam.intrinsics.cx = j.at("cx").get<double>();
  cam.intrinsics.cy = j.at("cy").get<double>();
  cam.intrinsics.width = j.at("width").get<int>();
  cam.intrinsics.height = j.at("height").get<int>();
  cam.intrinsics.validate();
  const auto p = j.at("position").get<std::array<double, 3>>();
  const auto q = j.at("orientation_wxyz").get<std::array<double, 4>>();
  cam.pose.position = Vec3(p[0], p[1], p[2]);
  Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
  if (std::abs(quat.norm() - 1.0) > 1e-6) throw Error("camera: orientation quaternion is not unit length");
  cam.pose.orientation = quat.normalized();
  return cam;
}

}  // namespace avi
