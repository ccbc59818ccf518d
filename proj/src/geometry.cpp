#include "shapefit/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace shapefit {

namespace {

constexpr double kNormalUnitTol = 1e-6;
constexpr double kRotationTol = 1e-9;
// Ratio between the middle and largest covariance eigenvalue below which a
// point configuration is treated as collinear.
constexpr double kCollinearRatio = 1e-12;

bool is_collinear(const Points& centered, const Eigen::VectorXd& weights) {
    Mat3 cov = Mat3::Zero();
    for (Eigen::Index i = 0; i < centered.rows(); ++i) {
        const Vec3 d = centered.row(i).transpose();
        cov += weights(i) * d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov, Eigen::EigenvaluesOnly);
    const Vec3 ev = es.eigenvalues();  // ascending
    return !(ev(2) > 0.0) || ev(1) <= kCollinearRatio * ev(2);
}

}  // namespace

PointCloud::PointCloud(Points points) : points_(std::move(points)) {}

PointCloud::PointCloud(Points points, Points normals) : points_(std::move(points)) {
    set_normals(std::move(normals));
}

const Points& PointCloud::normals() const {
    if (!normals_) throw Error("point cloud has no normals");
    return *normals_;
}

Points& PointCloud::normals() {
    if (!normals_) throw Error("point cloud has no normals");
    return *normals_;
}

void PointCloud::set_normals(Points normals) {
    if (normals.rows() != points_.rows()) {
        throw InvalidArgument("normal count does not match point count");
    }
    normals_ = std::move(normals);
}

bool PointCloud::has_normal(std::size_t i) const {
    return normals_ && std::isfinite((*normals_)(static_cast<Eigen::Index>(i), 0));
}

Vec3 PointCloud::normal(std::size_t i) const {
    return normals().row(static_cast<Eigen::Index>(i)).transpose();
}

const std::vector<std::int64_t>& PointCloud::labels() const {
    if (!labels_) throw Error("point cloud has no labels");
    return *labels_;
}

void PointCloud::set_labels(std::vector<std::int64_t> labels) {
    if (labels.size() != size()) throw InvalidArgument("label count does not match point count");
    labels_ = std::move(labels);
}

Vec3 PointCloud::centroid() const {
    if (empty()) throw InvalidArgument("empty point set");
    return points_.colwise().mean().transpose();
}

PointCloud PointCloud::select(std::span<const std::size_t> indices) const {
    Points pts(static_cast<Eigen::Index>(indices.size()), 3);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= size()) throw InvalidArgument("index out of range");
        pts.row(static_cast<Eigen::Index>(k)) = points_.row(static_cast<Eigen::Index>(indices[k]));
    }
    PointCloud out(std::move(pts));
    if (normals_) {
        Points nrm(static_cast<Eigen::Index>(indices.size()), 3);
        for (std::size_t k = 0; k < indices.size(); ++k) {
            nrm.row(static_cast<Eigen::Index>(k)) = normals_->row(static_cast<Eigen::Index>(indices[k]));
        }
        out.set_normals(std::move(nrm));
    }
    if (labels_) {
        std::vector<std::int64_t> lab;
        lab.reserve(indices.size());
        for (std::size_t idx : indices) lab.push_back((*labels_)[idx]);
        out.set_labels(std::move(lab));
    }
    return out;
}

void PointCloud::validate() const {
    if (!points_.allFinite()) throw InvalidArgument("point cloud has non-finite coordinates");
    if (normals_) {
        if (normals_->rows() != points_.rows()) {
            throw InvalidArgument("normal count does not match point count");
        }
        for (Eigen::Index i = 0; i < normals_->rows(); ++i) {
            const auto n = normals_->row(i);
            if (!std::isfinite(n(0))) continue;  // undefined normal
            if (std::abs(n.norm() - 1.0) > kNormalUnitTol) {
                throw InvalidArgument("normal is not unit length");
            }
        }
    }
    if (labels_ && labels_->size() != size()) {
        throw InvalidArgument("label count does not match point count");
    }
}

RigidTransform RigidTransform::inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.scale = 1.0 / scale;
    inv.translation = -(inv.rotation * translation) / scale;
    return inv;
}

RigidTransform RigidTransform::compose(const RigidTransform& first) const {
    RigidTransform out;
    out.rotation = rotation * first.rotation;
    out.scale = scale * first.scale;
    out.translation = scale * (rotation * first.translation) + translation;
    return out;
}

Eigen::Matrix4d RigidTransform::matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = scale * rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
}

void RigidTransform::validate() const {
    if (!(scale > 0.0) || !std::isfinite(scale)) throw InvalidArgument("transform scale must be positive");
    if (!rotation.allFinite() || !translation.allFinite()) {
        throw InvalidArgument("transform has non-finite entries");
    }
    const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (ortho >= kRotationTol || std::abs(rotation.determinant() - 1.0) > kRotationTol) {
        throw InvalidArgument("rotation is not a proper orthonormal matrix");
    }
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
    const Mat3 rel = a.transpose() * b;
    const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c);
}

Mat3 axis_angle(const Vec3& axis, double angle) {
    return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

std::size_t CorrespondenceMap::assigned_count() const {
    return static_cast<std::size_t>(
        std::count_if(assignments.begin(), assignments.end(), [](const auto& a) { return a.has_value(); }));
}

std::vector<std::size_t> CorrespondenceMap::missing_templates() const {
    std::vector<std::size_t> out;
    for (std::size_t m = 0; m < assignments.size(); ++m) {
        if (!assignments[m]) out.push_back(m);
    }
    return out;
}

std::set<std::size_t> CorrespondenceMap::assigned_targets() const {
    std::set<std::size_t> out;
    for (const auto& a : assignments) {
        if (a) out.insert(*a);
    }
    return out;
}

void CorrespondenceMap::validate(std::size_t target_size) const {
    for (const auto& a : assignments) {
        if (a && *a >= target_size) throw InvalidArgument("assignment outside target bounds");
    }
    const auto assigned = assigned_targets();
    for (std::size_t o : outlier_targets) {
        if (o >= target_size) throw InvalidArgument("outlier index outside target bounds");
        if (assigned.count(o)) throw InvalidArgument("outlier target is also assigned");
    }
}

Points apply_transform(const Points& points, const RigidTransform& tf) {
    Points out = (points * tf.rotation.transpose()) * tf.scale;
    out.rowwise() += tf.translation.transpose();
    return out;
}

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& tf) {
    PointCloud out(apply_transform(cloud.points(), tf));
    if (cloud.has_normals()) {
        // NaN rows stay NaN under the rotation.
        out.set_normals(cloud.normals() * tf.rotation.transpose());
    }
    if (cloud.has_labels()) out.set_labels(cloud.labels());
    return out;
}

bool BoundingBox::contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
}

BoundingBox bounding_box(const Points& points) {
    if (points.rows() == 0) throw InvalidArgument("empty point set");
    return {points.colwise().minCoeff().transpose(), points.colwise().maxCoeff().transpose()};
}

BoundingBox bounding_box(const PointCloud& cloud) { return bounding_box(cloud.points()); }

double shape_diameter(const Points& points) { return bounding_box(points).diagonal(); }

RigidTransform fit_rigid_weighted(const Points& source, const Points& target,
                                  const Eigen::VectorXd& weights, bool with_scale) {
    if (source.rows() != target.rows() || weights.size() != source.rows()) {
        throw InvalidArgument("matched sequences differ in length");
    }
    if (source.rows() < 3) throw InvalidArgument("degenerate correspondence set");
    const double wsum = weights.sum();
    if (!(wsum > 0.0)) throw InvalidArgument("degenerate correspondence set");

    const Vec3 cs = (source.transpose() * weights) / wsum;
    const Vec3 ct = (target.transpose() * weights) / wsum;
    Points src = source.rowwise() - cs.transpose();
    Points dst = target.rowwise() - ct.transpose();
    if (is_collinear(src, weights) || is_collinear(dst, weights)) {
        throw InvalidArgument("degenerate correspondence set");
    }

    // Cross-covariance dst^T W src, so that R maps source onto target.
    const Mat3 cross = dst.transpose() * weights.asDiagonal() * src;
    Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;

    RigidTransform tf;
    tf.rotation = svd.matrixU() * d * svd.matrixV().transpose();
    if (with_scale) {
        const double var = (src.array().square().rowwise().sum().matrix().transpose() * weights)(0);
        tf.scale = (svd.singularValues().asDiagonal() * d).trace() / var;
    }
    tf.translation = ct - tf.scale * tf.rotation * cs;
    return tf;
}

RigidTransform fit_rigid_least_squares(const Points& source, const Points& target, bool with_scale) {
    return fit_rigid_weighted(source, target, Eigen::VectorXd::Ones(source.rows()), with_scale);
}

double mean_distance(const Points& a, const Points& b) {
    if (a.rows() != b.rows()) throw InvalidArgument("point count mismatch");
    if (a.rows() == 0) throw InvalidArgument("empty point set");
    return (a - b).rowwise().norm().mean();
}

}  // namespace shapefit
