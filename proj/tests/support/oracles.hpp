#pragma once

// Reference implementations used to check the library. They are written independently of
// the code under test and favour obviousness over speed.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "avi/geometry.hpp"

namespace oracle {

using avi::Mat3;
using avi::Vec3;

/// O(N) scan returning (index, squared distance); ties go to the lowest index.
std::pair<std::size_t, double> nearest(const std::vector<Vec3>& points, const Vec3& q);

/// Rotation about a unit axis by the Rodrigues formula, built entry by entry.
Mat3 rodrigues(const Vec3& axis, double angle);

/// Geodesic distance between two rotations, from their Frobenius distance.
double geodesic(const Mat3& a, const Mat3& b);

/// Cell of a point along one axis: floor((p − lo) / extent · n), with the max face in cell n − 1.
int cell_of(double p, double lo, double hi, int n);

/// Uniform random unit vector.
Vec3 random_axis(std::mt19937_64& rng);

/// Points drawn uniformly from a box of the given half extents, centred at the origin.
avi::PointCloud box_volume(std::mt19937_64& rng, const Vec3& half, std::size_t n);

avi::VoxelGrid random_grid(std::mt19937_64& rng, int resolution, double density);

/// Binomial standard error formatted "M.MM ± S.SS" via integer rounding of hundredths.
std::string binomial_format(int successes, int trials);

}  // namespace oracle
