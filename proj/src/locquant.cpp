#include "avi/locquant.hpp"

#include <algorithm>
#include <cmath>

namespace avi {

void QuantConfig::validate() const {
  if (position_bins < 2 || position_bins > kMaxPositionBins)
    throw Error("position_bins must be in [2, 256], got " + std::to_string(position_bins));
  if (scale_bins < 2 || scale_bins > kMaxScaleBins)
    throw Error("scale_bins must be in [2, 128], got " + std::to_string(scale_bins));
  if (workspace.degenerate()) throw Error("workspace must have positive extent on every axis");
}

Vocabulary::Vocabulary(std::int64_t base_size, std::int64_t codebook_size) : base_(base_size), codebook_(codebook_size) {
  if (base_size < 1) throw Error("vocabulary base size must be >= 1");
  if (codebook_size < 2) throw Error("codebook size must be >= 2");
}

Vocabulary extend_vocabulary(std::int64_t base_size, std::int64_t codebook_size) {
  return Vocabulary(base_size, codebook_size);
}

namespace {

int bin_of(double fraction, int bins) {
  return std::clamp(static_cast<int>(std::floor(fraction * bins)), 0, bins - 1) + 1;
}

void check_bins(const LocationDescriptor& d, const QuantConfig& cfg) {
  for (int a = 0; a < 3; ++a)
    if (d.axis(a) < 1 || d.axis(a) > cfg.position_bins)
      throw Error("position bin " + std::to_string(d.axis(a)) + " outside [1, " + std::to_string(cfg.position_bins) + "]");
  if (d.s_bin < 1 || d.s_bin > cfg.scale_bins)
    throw Error("scale bin " + std::to_string(d.s_bin) + " outside [1, " + std::to_string(cfg.scale_bins) + "]");
}

}  // namespace

LocationDescriptor quantize_location(const PointCloud& cloud, const QuantConfig& cfg) {
  cfg.validate();
  if (cloud.empty()) throw Error("quantize_location: empty cloud");
  const Vec3 c = cloud.centroid();
  if (!cfg.workspace.contains(c)) throw Error("quantize_location: centroid outside workspace");
  const Vec3 f = (c - cfg.workspace.min).cwiseQuotient(cfg.workspace.extent());
  const double s = bounding_box(cloud).largest_edge() / cfg.workspace.largest_edge();
  return LocationDescriptor{bin_of(f.x(), cfg.position_bins), bin_of(f.y(), cfg.position_bins),
                            bin_of(f.z(), cfg.position_bins), bin_of(s, cfg.scale_bins)};
}

DecodedLocation dequantize_location(const LocationDescriptor& desc, const QuantConfig& cfg) {
  cfg.validate();
  check_bins(desc, cfg);
  const Vec3 bins(desc.x_bin - 0.5, desc.y_bin - 0.5, desc.z_bin - 0.5);
  const Vec3 centroid = cfg.workspace.min + (bins / cfg.position_bins).cwiseProduct(cfg.workspace.extent());
  return {centroid, (desc.s_bin - 0.5) / cfg.scale_bins};
}

std::array<std::int64_t, 4> tokens_of(const LocationDescriptor& desc, const Vocabulary& vocab) {
  for (int a = 0; a < 3; ++a)
    if (desc.axis(a) < 1 || desc.axis(a) > kMaxPositionBins) throw Error("tokens_of: position bin out of range");
  if (desc.s_bin < 1 || desc.s_bin > kMaxScaleBins) throw Error("tokens_of: scale bin out of range");
  return {vocab.position_offset(0) + desc.x_bin - 1, vocab.position_offset(1) + desc.y_bin - 1,
          vocab.position_offset(2) + desc.z_bin - 1, vocab.scale_offset() + desc.s_bin - 1};
}

LocationDescriptor descriptor_of(std::span<const std::int64_t> tokens, const Vocabulary& vocab) {
  if (tokens.size() != 4) throw Error("descriptor_of: expected 4 location tokens");
  std::array<int, 4> bins{};
  for (int a = 0; a < 3; ++a) {
    const std::int64_t rel = tokens[a] - vocab.position_offset(a);
    if (rel < 0 || rel >= kMaxPositionBins)
      throw Error("descriptor_of: token " + std::to_string(tokens[a]) + " is not in position segment " +
                  std::string(1, static_cast<char>('x' + a)));
    bins[a] = static_cast<int>(rel) + 1;
  }
  const std::int64_t rel = tokens[3] - vocab.scale_offset();
  if (rel < 0 || rel >= kMaxScaleBins)
    throw Error("descriptor_of: token " + std::to_string(tokens[3]) + " is not in the scale segment");
  bins[3] = static_cast<int>(rel) + 1;
  return {bins[0], bins[1], bins[2], bins[3]};
}

int effective_resolution(const QuantConfig& cfg, int grid_resolution, double scale_fraction) {
  if (grid_resolution < 2) throw Error("effective_resolution: grid resolution must be >= 2");
  if (!(scale_fraction > 0.0) || scale_fraction > 1.0)
    throw Error("effective_resolution: scale fraction must be in (0, 1]");
  const double q = grid_resolution / scale_fraction;
  const double nearest = std::round(q);
  // Integral ratios (the common case) must not be bumped up by rounding noise.
  const int object_res = static_cast<int>(std::abs(q - nearest) <= 1e-9 * q ? nearest : std::ceil(q));
  return cfg.lq_enabled ? std::max(cfg.position_bins, object_res) : object_res;
}

AABB object_frame(const LocationDescriptor& desc, const QuantConfig& cfg) {
  const auto loc = dequantize_location(desc, cfg);
  const double half = 0.5 * loc.scale_fraction * cfg.workspace.largest_edge();
  return AABB{loc.centroid.array() - half, loc.centroid.array() + half};
}

VoxelGrid object_grid(const PointCloud& cloud, const LocationDescriptor& desc, const QuantConfig& cfg, int resolution,
                      VoxelizeStats* stats) {
  return voxelize(cloud, object_frame(desc, cfg), resolution, stats);
}

ComposedScene compose_scene(const std::vector<std::pair<VoxelGrid, LocationDescriptor>>& segments,
                            const QuantConfig& cfg) {
  ComposedScene scene;
  for (const auto& [grid, desc] : segments) {
    for (const auto& p : devoxelize(grid, object_frame(desc, cfg)).points) {
      if (cfg.workspace.contains(p))
        scene.cloud.points.push_back(p);
      else
        ++scene.clipped_points;
    }
  }
  return scene;
}

void to_json(nlohmann::json& j, const AABB& box) {
  j = {{"min", {box.min.x(), box.min.y(), box.min.z()}}, {"max", {box.max.x(), box.max.y(), box.max.z()}}};
}

void from_json(const nlohmann::json& j, AABB& box) {
  const auto lo = j.at("min").get<std::array<double, 3>>();
  const auto hi = j.at("max").get<std::array<double, 3>>();
  box.min = Vec3(lo[0], lo[1], lo[2]);
  box.max = Vec3(hi[0], hi[1], hi[2]);
}

void to_json(nlohmann::json& j, const QuantConfig& cfg) {
  j = {{"position_bins", cfg.position_bins},
       {"scale_bins", cfg.scale_bins},
       {"workspace", cfg.workspace},
       {"lq_enabled", cfg.lq_enabled}};
}

void from_json(const nlohmann::json& j, QuantConfig& cfg) {
  cfg = QuantConfig{};
  cfg.position_bins = j.value("position_bins", cfg.position_bins);
  cfg.scale_bins = j.value("scale_bins", cfg.scale_bins);
  if (j.contains("workspace")) cfg.workspace = j.at("workspace").get<AABB>();
  cfg.lq_enabled = j.value("lq_enabled", cfg.lq_enabled);
  cfg.validate();
}

void to_json(nlohmann::json& j, const LocationDescriptor& d) {
  j = {{"x_bin", d.x_bin}, {"y_bin", d.y_bin}, {"z_bin", d.z_bin}, {"s_bin", d.s_bin}};
}

void from_json(const nlohmann::json& j, LocationDescriptor& d) {
  d.x_bin = j.at("x_bin").get<int>();
  d.y_bin = j.at("y_bin").get<int>();
  d.z_bin = j.at("z_bin").get<int>();
  d.s_bin = j.at("s_bin").get<int>();
}

}  // namespace avi
