#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "avi/geometry.hpp"

namespace avi {

/// Partition of a cubic grid into equal rectangular patches, each of which becomes one token.
struct PatchLayout {
  int grid_resolution = 64;
  std::array<int, 3> patch_shape{4, 4, 2};

  void validate() const;
  std::array<int, 3> patch_grid() const;
  int patches_total() const;
  int voxels_per_patch() const { return patch_shape[0] * patch_shape[1] * patch_shape[2]; }

  static PatchLayout standard() { return PatchLayout{}; }
};

inline constexpr int kShapeTokens = 8192;

/// Fixed-size set of patch prototypes. Entry 0 is the empty patch and entry 1 the full patch.
/// Immutable after construction; lookup tables for encoding are built once here.
class Codebook {
 public:
  Codebook(std::vector<std::vector<double>> entries);

  std::size_t size() const { return entries_.size(); }
  int dim() const { return dim_; }
  const std::vector<double>& entry(std::size_t k) const { return entries_[k]; }
  const std::vector<std::vector<double>>& entries() const { return entries_; }

  /// Entry k thresholded at 0.5, as a bit mask over patch components.
  std::uint64_t decoded_mask(std::size_t k) const { return masks_[k]; }

  /// Index of the nearest entry (squared Euclidean), lowest index on ties.
  std::int32_t nearest(std::uint64_t patch_mask) const;

  bool operator==(const Codebook& other) const { return entries_ == other.entries_; }

 private:
  std::vector<std::vector<double>> entries_;
  int dim_;
  std::vector<std::uint64_t> masks_;
  std::vector<double> norms_;
  // tables_[(chunk * 256 + byte) * K + k] = sum of entry k's components selected by `byte`.
  std::vector<double> tables_;
  std::int32_t empty_token_;
};

struct TokenGrid {
  std::vector<std::int32_t> tokens;
  bool operator==(const TokenGrid&) const = default;
};

/// Occupancy bits of one patch, flattened x-major, as a mask (bit c = component c).
std::uint64_t patch_mask(const VoxelGrid& grid, int patch_index, const PatchLayout& layout);
std::vector<double> patch_vector(const VoxelGrid& grid, int patch_index, const PatchLayout& layout);

struct CodebookTraining {
  Codebook codebook;
  std::size_t distinct_patterns = 0;  // excluding the all-zero and all-one patches
  int iterations = 0;
  bool padded = false;                // fewer distinct prototypes than K - 2
};

/// k-means (k = K - 2, k-means++ seeding) over every non-trivial patch of `grids`. Final
/// prototypes are thresholded at 0.5 so that decoding and re-encoding a token is exact;
/// duplicates collapse and the tail is padded with copies of the empty entry.
CodebookTraining train_codebook(const std::vector<VoxelGrid>& grids, int k, std::uint64_t seed,
                                const PatchLayout& layout = PatchLayout::standard());

TokenGrid encode_grid(const VoxelGrid& grid, const Codebook& codebook, const PatchLayout& layout = PatchLayout::standard());
VoxelGrid decode_grid(const TokenGrid& tokens, const Codebook& codebook, const PatchLayout& layout = PatchLayout::standard());

/// Intersection over union of occupied voxels; 1 when both grids are empty.
double voxel_iou(const VoxelGrid& a, const VoxelGrid& b);

// Codebook file: {"k":512,"dim":32,"entries":[[...],...]}
nlohmann::json codebook_to_json(const Codebook& codebook);
Codebook codebook_from_json(const nlohmann::json& j);

}  // namespace avi
