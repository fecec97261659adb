#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "avi/geometry.hpp"

namespace avi {

inline constexpr int kMaxPositionBins = 256;
inline constexpr int kMaxScaleBins = 128;
inline constexpr std::int64_t kPositionTokens = 3 * kMaxPositionBins;         // 768
inline constexpr std::int64_t kLocationTokens = kPositionTokens + kMaxScaleBins;  // 896

struct QuantConfig {
  int position_bins = 256;
  int scale_bins = 128;
  AABB workspace = AABB::unit();
  bool lq_enabled = true;

  void validate() const;
  Vec3 bin_width() const { return workspace.extent() / static_cast<double>(position_bins); }
};

/// Quantized object placement; every bin is 1-indexed.
struct LocationDescriptor {
  int x_bin = 1;
  int y_bin = 1;
  int z_bin = 1;
  int s_bin = 1;

  int axis(int a) const { return a == 0 ? x_bin : (a == 1 ? y_bin : z_bin); }
  bool operator==(const LocationDescriptor&) const = default;
};

/// Token-id layout over the extended vocabulary:
///   text [0, base) | pos-x | pos-y | pos-z (256 each) | scale (128) | shape (codebook)
/// followed by control ids that belong to no segment.
class Vocabulary {
 public:
  Vocabulary(std::int64_t base_size, std::int64_t codebook_size);

  std::int64_t base_size() const { return base_; }
  std::int64_t codebook_size() const { return codebook_; }

  std::int64_t position_offset(int axis) const { return base_ + axis * kMaxPositionBins; }
  std::int64_t scale_offset() const { return base_ + kPositionTokens; }
  std::int64_t shape_offset() const { return base_ + kLocationTokens; }
  std::int64_t location_size() const { return kLocationTokens; }
  std::int64_t position_size() const { return kPositionTokens; }
  std::int64_t scale_size() const { return kMaxScaleBins; }

  /// Ids backed by embedding rows: |V0| + 896 + codebook.
  std::int64_t total_size() const { return base_ + kLocationTokens + codebook_; }

  /// Separates the instruction from the object blocks.
  std::int64_t separator() const { return total_size(); }
  /// Separates an input sequence from its successor in training corpora.
  std::int64_t pair_separator() const { return total_size() + 1; }

  bool is_text(std::int64_t id) const { return id >= 0 && id < base_; }
  bool is_shape(std::int64_t id) const { return id >= shape_offset() && id < total_size(); }

  bool operator==(const Vocabulary&) const = default;

 private:
  std::int64_t base_;
  std::int64_t codebook_;
};

Vocabulary extend_vocabulary(std::int64_t base_size, std::int64_t codebook_size);

LocationDescriptor quantize_location(const PointCloud& cloud, const QuantConfig& cfg);

struct DecodedLocation {
  Vec3 centroid;
  double scale_fraction;
};
DecodedLocation dequantize_location(const LocationDescriptor& desc, const QuantConfig& cfg);

std::array<std::int64_t, 4> tokens_of(const LocationDescriptor& desc, const Vocabulary& vocab);
LocationDescriptor descriptor_of(std::span<const std::int64_t> tokens, const Vocabulary& vocab);

/// World-space detail per axis: max(B, ceil(V/s)) with location quantization, ceil(V/s) without.
int effective_resolution(const QuantConfig& cfg, int grid_resolution, double scale_fraction);

/// The cube an object's shape grid spans in the world: centered at the decoded centroid with
/// edge scale_fraction · (largest workspace edge).
AABB object_frame(const LocationDescriptor& desc, const QuantConfig& cfg);

/// Voxelizes a cloud into the object frame of `desc`.
VoxelGrid object_grid(const PointCloud& cloud, const LocationDescriptor& desc, const QuantConfig& cfg,
                      int resolution = 64, VoxelizeStats* stats = nullptr);

struct ComposedScene {
  PointCloud cloud;
  std::size_t clipped_points = 0;  // decoded points outside the workspace, dropped
};

ComposedScene compose_scene(const std::vector<std::pair<VoxelGrid, LocationDescriptor>>& segments,
                            const QuantConfig& cfg);

// JSON: {"position_bins":256,"scale_bins":128,"workspace":{"min":[..],"max":[..]},"lq_enabled":true}
void to_json(nlohmann::json& j, const AABB& box);
void from_json(const nlohmann::json& j, AABB& box);
void to_json(nlohmann::json& j, const QuantConfig& cfg);
void from_json(const nlohmann::json& j, QuantConfig& cfg);
void to_json(nlohmann::json& j, const LocationDescriptor& d);
void from_json(const nlohmann::json& j, LocationDescriptor& d);

}  // namespace avi
