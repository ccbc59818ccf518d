#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "shapefit/geometry.hpp"

namespace shapefit {

struct Neighbor {
    std::size_t index = 0;
    double distance = 0.0;  // Euclidean, mm

    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Exhaustive nearest neighbour; ties go to the lowest index.
/// Throws InvalidArgument("empty point set") on an empty cloud.
Neighbor nearest_neighbor(const Vec3& query, const PointCloud& cloud);
Neighbor nearest_neighbor(const Vec3& query, const Points& points);

/**
 * Static k-d tree over a point matrix. Queries return exactly what an
 * exhaustive scan returns, including the lowest-index tie rule; the tree only
 * changes the cost. The indexed matrix is copied, so the tree owns its data.
 */
class KdTree {
public:
    explicit KdTree(Points points, std::size_t leaf_size = 12);

    std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
    const Points& points() const { return points_; }

    Neighbor nearest(const Vec3& query) const;
    /// The k closest points ordered by (distance, index).
    std::vector<Neighbor> knn(const Vec3& query, std::size_t k) const;
    /// Nearest neighbour of every row of `queries`.
    std::vector<Neighbor> nearest_all(const Points& queries) const;

private:
    struct Node {
        // Leaf when left == 0 (the root is never a child).
        std::size_t begin = 0;
        std::size_t end = 0;
        std::size_t left = 0;
        std::size_t right = 0;
        int axis = 0;
        double split = 0.0;
    };

    std::size_t build(std::size_t begin, std::size_t end);
    void search_nearest(std::size_t node, const Vec3& q, double& best_d2, std::size_t& best_idx) const;
    void search_knn(std::size_t node, const Vec3& q, std::size_t k,
                    std::vector<std::pair<double, std::size_t>>& heap) const;

    Points points_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
    std::size_t leaf_size_;
};

/// Median distance from each point to its nearest other point.
double median_spacing(const Points& points);

}  // namespace shapefit
