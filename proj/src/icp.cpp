#include "avi/icp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/SVD>

namespace avi {

void IcpConfig::validate() const {
  if (max_iterations < 1) throw Error("icp: max_iterations must be >= 1");
  if (!(convergence_tol > 0.0)) throw Error("icp: convergence_tol must be positive");
  if (!(max_correspondence_distance >= 0.0)) throw Error("icp: max_correspondence_distance must be >= 0");
}

namespace {
constexpr std::size_t kLeafSize = 8;
}

KdTree::KdTree(const std::vector<Vec3>& points) : points_(points), order_(points.size()) {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  nodes_.reserve(2 * points_.size() / kLeafSize + 1);
  if (!points_.empty()) build(0, points_.size());
}

std::size_t KdTree::build(std::size_t begin, std::size_t end) {
  const std::size_t id = nodes_.size();
  nodes_.push_back(Node{-1, 0.0, begin, end, 0, 0});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[order_[begin]], hi = lo;
  for (std::size_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] == lo[axis]) return id;  // all points coincide

  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
  const double split = points_[order_[mid]][axis];
  const std::size_t left = build(begin, mid);
  const std::size_t right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(std::size_t node_id, const Vec3& q, std::size_t& best, double& best_d2) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (std::size_t i = node.begin; i < node.end; ++i) {
      const std::size_t idx = order_[i];
      const double d2 = (points_[idx] - q).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
        best_d2 = d2;
        best = idx;
      }
    }
    return;
  }
  // Left holds coordinates <= split, right holds >= split.
  const double diff = q[node.axis] - node.split;
  const std::size_t near = diff <= 0.0 ? node.left : node.right;
  const std::size_t far = diff <= 0.0 ? node.right : node.left;
  search(near, q, best, best_d2);
  // Equal distances must still be visited so the lowest-index tie wins.
  if (diff * diff <= best_d2) search(far, q, best, best_d2);
}

std::pair<std::size_t, double> KdTree::nearest(const Vec3& query) const {
  if (points_.empty()) throw Error("KdTree::nearest on an empty tree");
  std::size_t best = points_.size();
  double best_d2 = std::numeric_limits<double>::infinity();
  search(0, query, best, best_d2);
  return {best, best_d2};
}

RigidTransform kabsch(const PointCloud& source, const PointCloud& target) {
  if (source.size() != target.size())
    throw Error("kabsch: source has " + std::to_string(source.size()) + " points, target " +
                std::to_string(target.size()));
  if (source.size() < 3) throw Error("kabsch: need at least 3 paired points");
  const Vec3 xs = source.centroid();
  const Vec3 ys = target.centroid();
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) h += (source.points[i] - xs) * (target.points[i] - ys).transpose();

  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sigma = svd.singularValues();
  if (!(sigma[0] > 0.0) || sigma[1] <= 1e-12 * sigma[0])
    throw Error("kabsch: degenerate correspondence set (cross-covariance rank < 2, singular values " +
                std::to_string(sigma[0]) + ", " + std::to_string(sigma[1]) + ", " + std::to_string(sigma[2]) + ")");
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  RigidTransform xf;
  xf.rotation = v * d * u.transpose();
  xf.translation = ys - xf.rotation * xs;
  return xf;
}

std::vector<Correspondence> nearest_correspondences(const PointCloud& source, const PointCloud& target,
                                                    double max_distance) {
  if (source.empty() || target.empty()) throw Error("nearest_correspondences: empty cloud");
  const KdTree tree(target.points);
  std::vector<Correspondence> out;
  out.reserve(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    const auto [j, d2] = tree.nearest(source.points[i]);
    const double d = std::sqrt(d2);
    if (d <= max_distance) out.push_back({i, j, d});
  }
  return out;
}

namespace {

struct Matched {
  std::vector<Correspondence> pairs;
  double rmse = 0.0;
};

Matched match(const PointCloud& moved, const KdTree& tree, double max_distance) {
  Matched m;
  m.pairs.reserve(moved.size());
  double sse = 0.0;
  for (std::size_t i = 0; i < moved.size(); ++i) {
    const auto [j, d2] = tree.nearest(moved.points[i]);
    const double d = std::sqrt(d2);
    if (d > max_distance) continue;
    m.pairs.push_back({i, j, d});
    sse += d2;
  }
  m.rmse = m.pairs.empty() ? 0.0 : std::sqrt(sse / static_cast<double>(m.pairs.size()));
  return m;
}

IcpResult failure(IcpResult r, std::string why) {
  r.converged = false;
  r.diagnostic = std::move(why);
  return r;
}

}  // namespace

IcpResult icp_align(const PointCloud& source, const PointCloud& target, const IcpConfig& cfg,
                    const RigidTransform& init) {
  cfg.validate();
  IcpResult result;
  result.transform = init;
  if (source.size() < cfg.min_points || target.size() < cfg.min_points)
    return failure(result, "fewer than " + std::to_string(cfg.min_points) + " points in source or target");
  if (!init.valid()) return failure(result, "initial transform is not a rotation");

  const KdTree tree(target.points);
  auto current = match(apply_transform(source, init), tree, cfg.max_correspondence_distance);
  if (current.pairs.size() < cfg.min_points)
    return failure(result, "only " + std::to_string(current.pairs.size()) + " correspondences within range");
  result.rmse = current.rmse;
  result.rmse_history.push_back(current.rmse);
  if (current.rmse == 0.0) {  // exact fit already; a Kabsch step would only add round-off
    result.converged = true;
    return result;
  }

  for (int it = 1; it <= cfg.max_iterations; ++it) {
    PointCloud src, dst;
    src.points.reserve(current.pairs.size());
    dst.points.reserve(current.pairs.size());
    const PointCloud moved = apply_transform(source, result.transform);
    for (const auto& c : current.pairs) {
      src.points.push_back(moved.points[c.source]);
      dst.points.push_back(target.points[c.target]);
    }
    RigidTransform step;
    try {
      step = kabsch(src, dst);
    } catch (const Error& e) {
      result.iterations = it;
      return failure(result, e.what());
    }
    result.transform = compose(step, result.transform);
    result.iterations = it;

    auto next = match(apply_transform(source, result.transform), tree, cfg.max_correspondence_distance);
    if (next.pairs.size() < cfg.min_points)
      return failure(result, "only " + std::to_string(next.pairs.size()) + " correspondences within range");
    result.rmse_history.push_back(next.rmse);
    const double change = std::abs(current.rmse - next.rmse);
    result.rmse = next.rmse;
    current = std::move(next);
    if (change < cfg.convergence_tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

IcpResult object_delta(const VoxelGrid& before_grid, const LocationDescriptor& before_desc,
                       const VoxelGrid& predicted_grid, const LocationDescriptor& predicted_desc,
                       const QuantConfig& quant, const IcpConfig& icp) {
  const PointCloud source = devoxelize(before_grid, object_frame(before_desc, quant));
  const PointCloud target = devoxelize(predicted_grid, object_frame(predicted_desc, quant));
  if (source.size() < icp.min_points || target.size() < icp.min_points) {
    IcpResult r;
    r.diagnostic = "decoded object has fewer than " + std::to_string(icp.min_points) + " points (source " +
                   std::to_string(source.size()) + ", predicted " + std::to_string(target.size()) + ")";
    return r;
  }
  const Vec3 seed = dequantize_location(predicted_desc, quant).centroid - dequantize_location(before_desc, quant).centroid;
  return icp_align(source, target, icp, RigidTransform::from_translation(seed));
}

IcpResult object_delta(const ObjectSegment& before, const VoxelGrid& predicted_grid,
                       const LocationDescriptor& predicted_desc, const QuantConfig& quant, const IcpConfig& icp) {
  const VoxelGrid before_grid = object_grid(before.cloud, before.descriptor, quant, predicted_grid.resolution());
  return object_delta(before_grid, before.descriptor, predicted_grid, predicted_desc, quant, icp);
}

nlohmann::json transform_to_json(const RigidTransform& xf) {
  nlohmann::json rot = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) rot.push_back({xf.rotation(r, 0), xf.rotation(r, 1), xf.rotation(r, 2)});
  return {{"rotation", rot}, {"translation", {xf.translation.x(), xf.translation.y(), xf.translation.z()}}};
}

RigidTransform transform_from_json(const nlohmann::json& j) {
  RigidTransform xf;
  if (j.contains("rotation")) {
    const auto rows = j.at("rotation").get<std::array<std::array<double, 3>, 3>>();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) xf.rotation(r, c) = rows[r][c];
  }
  if (j.contains("translation")) {
    const auto t = j.at("translation").get<std::array<double, 3>>();
    xf.translation = Vec3(t[0], t[1], t[2]);
  }
  if (!xf.valid(1e-6)) throw Error("transform: rotation is not orthonormal with det +1");
  return xf;
}

nlohmann::json icp_result_to_json(const IcpResult& r) {
  auto j = transform_to_json(r.transform);
  j["rmse"] = r.rmse;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  if (!r.diagnostic.empty()) j["diagnostic"] = r.diagnostic;
  return j;
}

IcpConfig icp_config_from_json(const nlohmann::json& j) {
  IcpConfig cfg;
  cfg.max_iterations = j.value("max_iterations", cfg.max_iterations);
  cfg.convergence_tol = j.value("convergence_tol", cfg.convergence_tol);
  if (j.contains("max_correspondence_distance") && !j.at("max_correspondence_distance").is_null())
    cfg.max_correspondence_distance = j.at("max_correspondence_distance").get<double>();
  cfg.min_points = j.value("min_points", cfg.min_points);
  cfg.validate();
  return cfg;
}

}  // namespace avi
