#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "shapefit/error.hpp"

namespace shapefit {

/// N x 3 row-major storage so every point is contiguous in memory.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Provenance tag meaning "no original index" (injected point).
inline constexpr std::int64_t kNoIndex = -1;

/**
 * Ordered list of 3D points in millimetres with optional unit normals and
 * optional provenance labels.
 *
 * A normal row filled with NaN marks a point whose normal could not be
 * estimated (see has_normal()); every other normal row is a unit vector.
 */
class PointCloud {
public:
    PointCloud() = default;
    explicit PointCloud(Points points);
    PointCloud(Points points, Points normals);

    std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
    bool empty() const { return points_.rows() == 0; }

    const Points& points() const { return points_; }
    Points& points() { return points_; }
    Vec3 point(std::size_t i) const { return points_.row(static_cast<Eigen::Index>(i)).transpose(); }

    bool has_normals() const { return normals_.has_value(); }
    const Points& normals() const;
    Points& normals();
    void set_normals(Points normals);
    void clear_normals() { normals_.reset(); }
    /// True when normals are present and the normal of point i is defined.
    bool has_normal(std::size_t i) const;
    Vec3 normal(std::size_t i) const;

    bool has_labels() const { return labels_.has_value(); }
    const std::vector<std::int64_t>& labels() const;
    void set_labels(std::vector<std::int64_t> labels);
    void clear_labels() { labels_.reset(); }

    Vec3 centroid() const;

    /// Copy of the points at the given indices, carrying normals and labels.
    PointCloud select(std::span<const std::size_t> indices) const;

    /// Throws InvalidArgument when an invariant is broken (non-finite
    /// coordinate, non-unit normal, size mismatch).
    void validate() const;

private:
    Points points_;
    std::optional<Points> normals_;
    std::optional<std::vector<std::int64_t>> labels_;
};

/// Similarity transform p -> scale * rotation * p + translation.
struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    double scale = 1.0;

    static RigidTransform identity() { return {}; }

    Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
    RigidTransform inverse() const;
    /// (*this) after `first`: x -> this(first(x)).
    RigidTransform compose(const RigidTransform& first) const;
    Eigen::Matrix4d matrix() const;

    /// Throws InvalidArgument unless rotation is proper orthonormal within
    /// 1e-9 and scale is positive.
    void validate() const;
};

/// Rotation angle in radians of the relative rotation a^T * b.
double rotation_angle_between(const Mat3& a, const Mat3& b);

/// Rotation about a unit axis by an angle in radians.
Mat3 axis_angle(const Vec3& axis, double angle);

/**
 * Template-to-target assignment produced by a registration.
 *
 * assignments[m] is the target index matched to template point m, or
 * nullopt when the template point is considered missing.
 */
struct CorrespondenceMap {
    std::vector<std::optional<std::size_t>> assignments;
    std::set<std::size_t> outlier_targets;
    double threshold_used = 0.0;

    std::size_t assigned_count() const;
    std::vector<std::size_t> missing_templates() const;
    /// Target indices that appear in at least one assignment.
    std::set<std::size_t> assigned_targets() const;

    /// Throws InvalidArgument when an index is out of range or an outlier
    /// target is also assigned.
    void validate(std::size_t target_size) const;
};

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& tf);
Points apply_transform(const Points& points, const RigidTransform& tf);

struct BoundingBox {
    Vec3 min;
    Vec3 max;

    Vec3 center() const { return 0.5 * (min + max); }
    Vec3 extent() const { return max - min; }
    double diagonal() const { return extent().norm(); }
    bool contains(const Vec3& p) const;
};

BoundingBox bounding_box(const PointCloud& cloud);
BoundingBox bounding_box(const Points& points);

/// Largest pairwise distance approximated by the bounding-box diagonal.
double shape_diameter(const Points& points);

/**
 * Least-squares similarity between matched sequences: minimises
 * sum_i w_i * |s R src_i + t - dst_i|^2 with det(R) = +1.
 *
 * Scale is estimated only when `with_scale`; otherwise it is 1.
 * Throws InvalidArgument("degenerate correspondence set") for fewer than
 * three pairs or a collinear configuration.
 */
RigidTransform fit_rigid_least_squares(const Points& source, const Points& target,
                                       bool with_scale = false);
RigidTransform fit_rigid_weighted(const Points& source, const Points& target,
                                  const Eigen::VectorXd& weights, bool with_scale = false);

/// Mean of |a_i - b_i| over index-corresponded rows.
double mean_distance(const Points& a, const Points& b);

}  // namespace shapefit
