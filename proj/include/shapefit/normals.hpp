#pragma once

#include <string>
#include <vector>

#include "shapefit/geometry.hpp"

namespace shapefit {

inline constexpr std::size_t kDefaultNormalNeighbors = 12;

struct NormalEstimate {
    PointCloud cloud;                      // copy of the input with normals set
    std::vector<std::size_t> undefined;    // points whose normal is NONE (NaN row)
    std::vector<std::string> warnings;
};

/**
 * Local-covariance normals: for every point the eigenvector of the smallest
 * eigenvalue of the covariance of the point and its k nearest neighbours.
 *
 * Signs are fixed outward from the centroid where that is unambiguous and
 * propagated along the neighbour graph (most parallel neighbours first)
 * everywhere else. A neighbourhood of covariance rank < 2 gets an undefined
 * normal and a warning.
 */
NormalEstimate estimate_normals(const PointCloud& cloud, std::size_t k = kDefaultNormalNeighbors);

/// estimate_normals(cloud).cloud when the cloud has no normals, else the cloud.
PointCloud ensure_normals(const PointCloud& cloud, std::size_t k = kDefaultNormalNeighbors);

}  // namespace shapefit
