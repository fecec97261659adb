#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "avi/geometry.hpp"
#include "avi/locquant.hpp"
#include "avi/segmentation.hpp"

namespace avi {

struct IcpConfig {
  int max_iterations = 50;
  double convergence_tol = 1e-8;  // absolute RMSE change between iterations, meters
  double max_correspondence_distance = std::numeric_limits<double>::infinity();
  std::size_t min_points = 3;

  void validate() const;
};

struct IcpResult {
  RigidTransform transform;
  double rmse = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> rmse_history;  // correspondence RMSE at the initial and every updated estimate
  std::string diagnostic;            // set when the alignment failed
};

struct Correspondence {
  std::size_t source;
  std::size_t target;
  double distance;
};

/// Exact nearest-neighbour index over a fixed set of points. Ties go to the lowest index.
class KdTree {
 public:
  explicit KdTree(const std::vector<Vec3>& points);

  /// Index and squared distance of the nearest point; the tree must be non-empty.
  std::pair<std::size_t, double> nearest(const Vec3& query) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    int axis = -1;  // -1 for leaves
    double split = 0.0;
    std::size_t begin = 0, end = 0;
    std::size_t left = 0, right = 0;
  };

  std::size_t build(std::size_t begin, std::size_t end);
  void search(std::size_t node, const Vec3& q, std::size_t& best, double& best_d2) const;

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

/// Closed-form rotation and translation minimizing Σ‖R xᵢ + t − yᵢ‖² for index-paired clouds.
/// Throws when the cross-covariance has rank < 2.
RigidTransform kabsch(const PointCloud& source, const PointCloud& target);

std::vector<Correspondence> nearest_correspondences(const PointCloud& source, const PointCloud& target,
                                                    double max_distance = std::numeric_limits<double>::infinity());

IcpResult icp_align(const PointCloud& source, const PointCloud& target, const IcpConfig& cfg = {},
                    const RigidTransform& init = RigidTransform::identity());

/// Transform from the current object to its predicted next state. Both sides are taken through
/// the same quantized representation: the current cloud is voxelized in its own object frame at
/// the predicted grid's resolution, so the result is the token-space motion. ICP is seeded with
/// the translation between the two decoded centroids.
IcpResult object_delta(const ObjectSegment& before, const VoxelGrid& predicted_grid,
                       const LocationDescriptor& predicted_desc, const QuantConfig& quant, const IcpConfig& icp);

/// Same, with the current object already in tokenized form.
IcpResult object_delta(const VoxelGrid& before_grid, const LocationDescriptor& before_desc,
                       const VoxelGrid& predicted_grid, const LocationDescriptor& predicted_desc,
                       const QuantConfig& quant, const IcpConfig& icp);

nlohmann::json transform_to_json(const RigidTransform& xf);
RigidTransform transform_from_json(const nlohmann::json& j);
// {"rotation":[[..]x3],"translation":[..],"rmse":..,"iterations":..,"converged":..}
nlohmann::json icp_result_to_json(const IcpResult& r);
IcpConfig icp_config_from_json(const nlohmann::json& j);

}  // namespace avi
