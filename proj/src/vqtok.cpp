#include "avi/vqtok.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <unordered_map>

namespace avi {

namespace {

std::uint64_t full_mask(int dim) { return dim >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << dim) - 1; }

int chunk_count(int dim) { return (dim + 7) / 8; }

// Row-major table of per-byte partial dot products for a set of prototypes.
std::vector<double> build_tables(const std::vector<std::vector<double>>& protos, int dim) {
  const std::size_t k = protos.size();
  const int chunks = chunk_count(dim);
  std::vector<double> tables(static_cast<std::size_t>(chunks) * 256 * k, 0.0);
  for (int c = 0; c < chunks; ++c)
    for (int byte = 1; byte < 256; ++byte) {
      double* row = &tables[(static_cast<std::size_t>(c) * 256 + byte) * k];
      for (int b = 0; b < 8; ++b) {
        const int comp = c * 8 + b;
        if (comp >= dim || !((byte >> b) & 1)) continue;
        for (std::size_t e = 0; e < k; ++e) row[e] += protos[e][comp];
      }
    }
  return tables;
}

// Squared distances from a binary pattern to every prototype, written into `acc`.
void distances(std::uint64_t mask, int dim, const std::vector<double>& norms, const std::vector<double>& tables,
               std::vector<double>& acc) {
  const std::size_t k = norms.size();
  const double ones = std::popcount(mask);
  for (std::size_t e = 0; e < k; ++e) acc[e] = 0.0;
  for (int c = 0; c < chunk_count(dim); ++c) {
    const unsigned byte = static_cast<unsigned>((mask >> (8 * c)) & 0xFF);
    if (byte == 0) continue;
    const double* row = &tables[(static_cast<std::size_t>(c) * 256 + byte) * k];
    for (std::size_t e = 0; e < k; ++e) acc[e] += row[e];
  }
  for (std::size_t e = 0; e < k; ++e) acc[e] = norms[e] - 2.0 * acc[e] + ones;
}

std::size_t argmin_lowest(const std::vector<double>& acc) {
  std::size_t best = 0;
  for (std::size_t e = 1; e < acc.size(); ++e)
    if (acc[e] < acc[best]) best = e;
  return best;
}

std::vector<double> norms_of(const std::vector<std::vector<double>>& protos) {
  std::vector<double> n;
  n.reserve(protos.size());
  for (const auto& p : protos) {
    double s = 0.0;
    for (double v : p) s += v * v;
    n.push_back(s);
  }
  return n;
}

std::vector<double> mask_to_vector(std::uint64_t mask, int dim) {
  std::vector<double> v(dim, 0.0);
  for (int c = 0; c < dim; ++c) v[c] = (mask >> c) & 1u ? 1.0 : 0.0;
  return v;
}

}  // namespace

void PatchLayout::validate() const {
  if (grid_resolution < 2) throw Error("patch layout: grid resolution must be >= 2");
  for (int a = 0; a < 3; ++a)
    if (patch_shape[a] < 1 || grid_resolution % patch_shape[a] != 0)
      throw Error("patch layout: patch edge " + std::to_string(patch_shape[a]) + " does not divide " +
                  std::to_string(grid_resolution));
  if (voxels_per_patch() > 64) throw Error("patch layout: at most 64 voxels per patch");
}

std::array<int, 3> PatchLayout::patch_grid() const {
  return {grid_resolution / patch_shape[0], grid_resolution / patch_shape[1], grid_resolution / patch_shape[2]};
}

int PatchLayout::patches_total() const {
  const auto g = patch_grid();
  return g[0] * g[1] * g[2];
}

Codebook::Codebook(std::vector<std::vector<double>> entries) : entries_(std::move(entries)) {
  if (entries_.size() < 2) throw Error("codebook needs at least 2 entries");
  dim_ = static_cast<int>(entries_.front().size());
  if (dim_ < 1 || dim_ > 64) throw Error("codebook dimension must be in [1, 64]");
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    const auto& e = entries_[k];
    if (static_cast<int>(e.size()) != dim_) throw Error("codebook entry " + std::to_string(k) + " has wrong dimension");
    for (double v : e)
      if (!std::isfinite(v) || v < 0.0 || v > 1.0)
        throw Error("codebook entry " + std::to_string(k) + " has a component outside [0, 1]");
  }
  for (double v : entries_[0])
    if (v != 0.0) throw Error("codebook entry 0 must be the all-zero patch");
  for (double v : entries_[1])
    if (v != 1.0) throw Error("codebook entry 1 must be the all-one patch");

  masks_.reserve(entries_.size());
  for (const auto& e : entries_) {
    std::uint64_t m = 0;
    for (int c = 0; c < dim_; ++c)
      if (e[c] >= 0.5) m |= std::uint64_t{1} << c;
    masks_.push_back(m);
  }
  norms_ = norms_of(entries_);
  tables_ = build_tables(entries_, dim_);
  empty_token_ = static_cast<std::int32_t>(argmin_lowest(norms_));
}

std::int32_t Codebook::nearest(std::uint64_t patch_mask) const {
  if (patch_mask == 0) return empty_token_;
  thread_local std::vector<double> acc;
  acc.resize(entries_.size());
  distances(patch_mask, dim_, norms_, tables_, acc);
  return static_cast<std::int32_t>(argmin_lowest(acc));
}

std::uint64_t patch_mask(const VoxelGrid& grid, int patch_index, const PatchLayout& layout) {
  if (grid.resolution() != layout.grid_resolution) throw Error("patch_mask: grid resolution does not match layout");
  if (patch_index < 0 || patch_index >= layout.patches_total())
    throw Error("patch index " + std::to_string(patch_index) + " out of range");
  const auto g = layout.patch_grid();
  const auto& s = layout.patch_shape;
  const int px = patch_index / (g[1] * g[2]);
  const int py = (patch_index / g[2]) % g[1];
  const int pz = patch_index % g[2];
  std::uint64_t mask = 0;
  int comp = 0;
  for (int dx = 0; dx < s[0]; ++dx)
    for (int dy = 0; dy < s[1]; ++dy)
      for (int dz = 0; dz < s[2]; ++dz, ++comp)
        if (grid.get(px * s[0] + dx, py * s[1] + dy, pz * s[2] + dz)) mask |= std::uint64_t{1} << comp;
  return mask;
}

std::vector<double> patch_vector(const VoxelGrid& grid, int patch_index, const PatchLayout& layout) {
  return mask_to_vector(patch_mask(grid, patch_index, layout), layout.voxels_per_patch());
}

namespace {

struct WeightedPattern {
  std::uint64_t mask;
  double weight;
};

std::vector<std::vector<double>> kmeans(const std::vector<WeightedPattern>& pts, int dim, int k, std::uint64_t seed,
                                        int& iterations) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto pick = [&](const std::vector<double>& w) {
    double total = 0.0;
    for (double x : w) total += x;
    const double r = unit(rng) * total;
    double run = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      run += w[i];
      if (r < run && w[i] > 0.0) return i;
    }
    for (std::size_t i = w.size(); i-- > 0;)
      if (w[i] > 0.0) return i;
    return std::size_t{0};
  };

  // k-means++ seeding over distinct patterns weighted by multiplicity.
  std::vector<std::vector<double>> centers;
  std::vector<double> weights(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) weights[i] = pts[i].weight;
  centers.push_back(mask_to_vector(pts[pick(weights)].mask, dim));
  std::vector<double> best(pts.size(), std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < k) {
    const std::uint64_t last = [&] {
      std::uint64_t m = 0;
      for (int c = 0; c < dim; ++c)
        if (centers.back()[c] > 0.5) m |= std::uint64_t{1} << c;
      return m;
    }();
    for (std::size_t i = 0; i < pts.size(); ++i) {
      best[i] = std::min(best[i], static_cast<double>(std::popcount(pts[i].mask ^ last)));
      weights[i] = pts[i].weight * best[i];
    }
    centers.push_back(mask_to_vector(pts[pick(weights)].mask, dim));
  }

  std::vector<std::size_t> assign(pts.size(), 0);
  std::vector<double> acc(k);
  double prev_inertia = std::numeric_limits<double>::infinity();
  iterations = 0;
  for (int it = 0; it < 100; ++it) {
    ++iterations;
    const auto norms = norms_of(centers);
    const auto tables = build_tables(centers, dim);
    double inertia = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      distances(pts[i].mask, dim, norms, tables, acc);
      assign[i] = argmin_lowest(acc);
      inertia += pts[i].weight * std::max(0.0, acc[assign[i]]);
    }
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<double> mass(k, 0.0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      mass[assign[i]] += pts[i].weight;
      for (int c = 0; c < dim; ++c)
        if ((pts[i].mask >> c) & 1u) sums[assign[i]][c] += pts[i].weight;
    }
    for (int j = 0; j < k; ++j)
      if (mass[j] > 0.0)
        for (int c = 0; c < dim; ++c) centers[j][c] = sums[j][c] / mass[j];
    const double change = std::abs(prev_inertia - inertia) / std::max(inertia, 1e-300);
    prev_inertia = inertia;
    if (inertia == 0.0 || change < 1e-6) break;
  }
  return centers;
}

}  // namespace

CodebookTraining train_codebook(const std::vector<VoxelGrid>& grids, int k, std::uint64_t seed,
                                const PatchLayout& layout) {
  layout.validate();
  if (grids.empty()) throw Error("train_codebook: no training grids");
  if (k < 2) throw Error("train_codebook: K must be >= 2");
  const int dim = layout.voxels_per_patch();
  const std::uint64_t full = full_mask(dim);

  std::map<std::uint64_t, double> counts;
  for (const auto& g : grids)
    for (int p = 0; p < layout.patches_total(); ++p) {
      const auto m = patch_mask(g, p, layout);
      if (m != 0 && m != full) counts[m] += 1.0;
    }

  std::vector<WeightedPattern> pts;
  pts.reserve(counts.size());
  for (const auto& [m, w] : counts) pts.push_back({m, w});

  const int free_slots = k - 2;
  std::vector<std::uint64_t> protos;
  int iterations = 0;
  if (static_cast<int>(pts.size()) <= free_slots) {
    for (const auto& p : pts) protos.push_back(p.mask);
  } else if (free_slots > 0) {
    for (const auto& c : kmeans(pts, dim, free_slots, seed, iterations)) {
      std::uint64_t m = 0;
      for (int i = 0; i < dim; ++i)
        if (c[i] >= 0.5) m |= std::uint64_t{1} << i;
      protos.push_back(m);
    }
  }

  std::vector<std::vector<double>> entries{mask_to_vector(0, dim), mask_to_vector(full, dim)};
  std::vector<std::uint64_t> seen{0, full};
  for (auto m : protos) {
    if (std::find(seen.begin(), seen.end(), m) != seen.end()) continue;
    seen.push_back(m);
    entries.push_back(mask_to_vector(m, dim));
  }
  const bool padded = static_cast<int>(entries.size()) < k;
  while (static_cast<int>(entries.size()) < k) entries.push_back(mask_to_vector(0, dim));
  return CodebookTraining{Codebook(std::move(entries)), pts.size(), iterations, padded};
}

TokenGrid encode_grid(const VoxelGrid& grid, const Codebook& codebook, const PatchLayout& layout) {
  layout.validate();
  if (codebook.dim() != layout.voxels_per_patch()) throw Error("encode_grid: codebook dimension does not match layout");
  TokenGrid out;
  out.tokens.resize(layout.patches_total());
  // Surface grids repeat a small set of patch patterns, so each is searched once.
  std::unordered_map<std::uint64_t, std::int32_t> seen;
  for (int p = 0; p < layout.patches_total(); ++p) {
    const std::uint64_t mask = patch_mask(grid, p, layout);
    auto [it, fresh] = seen.try_emplace(mask, 0);
    if (fresh) it->second = codebook.nearest(mask);
    out.tokens[p] = it->second;
  }
  return out;
}

VoxelGrid decode_grid(const TokenGrid& tokens, const Codebook& codebook, const PatchLayout& layout) {
  layout.validate();
  if (static_cast<int>(tokens.tokens.size()) != layout.patches_total())
    throw Error("decode_grid: expected " + std::to_string(layout.patches_total()) + " tokens");
  if (codebook.dim() != layout.voxels_per_patch()) throw Error("decode_grid: codebook dimension does not match layout");
  VoxelGrid grid(layout.grid_resolution);
  const auto g = layout.patch_grid();
  const auto& s = layout.patch_shape;
  for (int p = 0; p < layout.patches_total(); ++p) {
    const auto t = tokens.tokens[p];
    if (t < 0 || static_cast<std::size_t>(t) >= codebook.size())
      throw Error("decode_grid: token " + std::to_string(t) + " outside codebook");
    const std::uint64_t mask = codebook.decoded_mask(static_cast<std::size_t>(t));
    if (mask == 0) continue;
    const int px = p / (g[1] * g[2]);
    const int py = (p / g[2]) % g[1];
    const int pz = p % g[2];
    int comp = 0;
    for (int dx = 0; dx < s[0]; ++dx)
      for (int dy = 0; dy < s[1]; ++dy)
        for (int dz = 0; dz < s[2]; ++dz, ++comp)
          if ((mask >> comp) & 1u) grid.set(px * s[0] + dx, py * s[1] + dy, pz * s[2] + dz);
  }
  return grid;
}

double voxel_iou(const VoxelGrid& a, const VoxelGrid& b) {
  if (a.resolution() != b.resolution()) throw Error("voxel_iou: resolution mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.cell_count(); ++i) {
    inter += a.at(i) && b.at(i);
    uni += a.at(i) || b.at(i);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

nlohmann::json codebook_to_json(const Codebook& codebook) {
  return {{"k", codebook.size()}, {"dim", codebook.dim()}, {"entries", codebook.entries()}};
}

Codebook codebook_from_json(const nlohmann::json& j) {
  auto entries = j.at("entries").get<std::vector<std::vector<double>>>();
  if (j.contains("k") && j.at("k").get<std::size_t>() != entries.size())
    throw Error("codebook file: k does not match the number of entries");
  if (j.contains("dim") && !entries.empty() && j.at("dim").get<std::size_t>() != entries.front().size())
    throw Error("codebook file: dim does not match entry length");
  return Codebook(std::move(entries));
}

}  // namespace avi
