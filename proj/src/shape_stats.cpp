#include "shapefit/shape_stats.hpp"

#include <cmath>
#include <fstream>

#include "shapefit/metrics.hpp"
#include "shapefit/point_io.hpp"

namespace shapefit {

namespace {

double objective(const std::vector<PointCloud>& shapes, const Points& mean) {
    double f = 0.0;
    for (const PointCloud& s : shapes) f += (s.points() - mean).squaredNorm();
    return f;
}

Points average(const std::vector<PointCloud>& shapes) {
    Points m = Points::Zero(static_cast<Eigen::Index>(shapes.front().size()), 3);
    for (const PointCloud& s : shapes) m += s.points();
    return m / static_cast<double>(shapes.size());
}

double centroid_size(const Points& p) { return std::sqrt(p.squaredNorm()); }

}  // namespace

AlignedDataset gpa(const std::vector<PointCloud>& shapes, const GpaParams& params) {
    if (shapes.size() < 2) throw InvalidArgument("at least two shapes are required");
    if (shapes.front().empty()) throw InvalidArgument("empty point set");
    if (params.max_iterations < 1) throw InvalidArgument("max_iterations must be positive");
    for (const PointCloud& s : shapes) {
        if (s.size() != shapes.front().size()) throw InvalidArgument("shapes differ in point count");
    }

    const std::size_t n = shapes.size();
    std::vector<RigidTransform> centring(n);
    std::vector<Points> centred(n);
    for (std::size_t i = 0; i < n; ++i) {
        centring[i].translation = -shapes[i].centroid();
        centred[i] = apply_transform(shapes[i].points(), centring[i]);
    }
    const Points anchor = centred[0];
    const double anchor_size = centroid_size(anchor);

    AlignedDataset out;
    out.shapes.resize(n);
    out.alignment_transforms.resize(n);
    Points mean = anchor;
    for (int it = 1; it <= params.max_iterations; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            const RigidTransform fit = fit_rigid_least_squares(centred[i], mean, params.with_scale);
            out.alignment_transforms[i] = fit.compose(centring[i]);
            out.shapes[i] = PointCloud(apply_transform(centred[i], fit));
        }
        Points next = average(out.shapes);

        // Gauge: rotate (and rescale) the mean back onto the first shape.
        RigidTransform gauge = fit_rigid_least_squares(next, anchor, false);
        gauge.translation.setZero();
        if (params.with_scale) {
            const double size = centroid_size(next);
            if (size > 0.0) gauge.scale = anchor_size / size;
        }
        next = apply_transform(next, gauge);
        for (std::size_t i = 0; i < n; ++i) {
            out.shapes[i].points() = apply_transform(out.shapes[i].points(), gauge);
            out.alignment_transforms[i] = gauge.compose(out.alignment_transforms[i]);
        }

        out.objective_history.push_back(objective(out.shapes, next));
        const double change = std::sqrt((next - mean).squaredNorm() / static_cast<double>(next.rows()));
        mean = std::move(next);
        out.iterations_used = it;
        if (change < params.tol) {
            out.converged = true;
            break;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (shapes[i].has_labels()) out.shapes[i].set_labels(shapes[i].labels());
    }
    out.mean = PointCloud(mean);
    return out;
}

PointCloud mean_shape(const std::vector<PointCloud>& shapes) {
    if (shapes.empty()) throw InvalidArgument("at least one shape is required");
    for (const PointCloud& s : shapes) {
        if (s.size() != shapes.front().size()) throw InvalidArgument("shapes differ in point count");
    }
    return PointCloud(average(shapes));
}

PointCloud mean_shape(const AlignedDataset& dataset) { return mean_shape(dataset.shapes); }

DeformationStats deformation_stats(const std::vector<PointCloud>& shapes, const PointCloud& mean) {
    if (shapes.empty()) throw InvalidArgument("at least one shape is required");
    const Eigen::Index m = static_cast<Eigen::Index>(mean.size());
    DeformationStats st;
    st.distances.resize(static_cast<Eigen::Index>(shapes.size()), m);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (shapes[i].size() != mean.size()) throw InvalidArgument("shapes differ in point count");
        st.distances.row(static_cast<Eigen::Index>(i)) = (shapes[i].points() - mean.points()).rowwise().norm().transpose();
    }
    const Eigen::VectorXd rows = st.distances.rowwise().mean();
    const Eigen::VectorXd cols = st.distances.colwise().mean().transpose();
    st.per_shape_mean.assign(rows.data(), rows.data() + rows.size());
    st.per_point_mean.assign(cols.data(), cols.data() + cols.size());
    return st;
}

DeformationStats deformation_stats(const AlignedDataset& dataset) {
    return deformation_stats(dataset.shapes, mean_shape(dataset));
}

std::size_t most_different_shape(const DeformationStats& stats) {
    if (stats.per_shape_mean.empty()) throw InvalidArgument("at least one shape is required");
    std::size_t best = 0;
    for (std::size_t i = 1; i < stats.per_shape_mean.size(); ++i) {
        if (stats.per_shape_mean[i] > stats.per_shape_mean[best]) best = i;
    }
    return best;
}

std::size_t most_different_shape(const AlignedDataset& dataset) {
    return most_different_shape(deformation_stats(dataset));
}

void write_deformation_outputs(const std::filesystem::path& dir, const DeformationStats& stats, const PointCloud& mean,
                               const std::vector<std::string>& names) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "per_shape.csv", std::ios::binary);
        if (!out) throw IoError("cannot write " + (dir / "per_shape.csv").string());
        out << "shape_index,name,mean_deformation\r\n";
        for (std::size_t i = 0; i < stats.per_shape_mean.size(); ++i) {
            const std::string name = i < names.size() ? names[i] : std::to_string(i);
            out << i << ',' << csv_escape(name) << ',' << io::format_double(stats.per_shape_mean[i]) << "\r\n";
        }
    }
    {
        std::ofstream out(dir / "per_point.csv", std::ios::binary);
        if (!out) throw IoError("cannot write " + (dir / "per_point.csv").string());
        out << "point_index,mean_deformation\r\n";
        for (std::size_t m = 0; m < stats.per_point_mean.size(); ++m) {
            out << m << ',' << io::format_double(stats.per_point_mean[m]) << "\r\n";
        }
    }
    io::PlyWriteOptions opts;
    opts.scalar_fields.push_back({"deformation", stats.per_point_mean});
    io::write_ply(dir / "mean_deformation.ply", PointCloud(mean.points()), opts);
}

}  // namespace shapefit
