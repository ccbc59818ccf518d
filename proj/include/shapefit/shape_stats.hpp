#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "shapefit/geometry.hpp"

namespace shapefit {

struct GpaParams {
    int max_iterations = 100;
    double tol = 1e-10;  // mm, RMS change of the mean between iterations
    bool with_scale = false;
};

struct AlignedDataset {
    std::vector<PointCloud> shapes;
    /// Maps input shape i onto shapes[i].
    std::vector<RigidTransform> alignment_transforms;
    int iterations_used = 0;
    bool converged = false;
    /// Sum of squared distances to the mean after each iteration.
    std::vector<double> objective_history;
    PointCloud mean;
};

/**
 * Generalized Procrustes analysis. Shapes are centred, then repeatedly fitted
 * to the current mean; the mean is re-anchored to the orientation (and, with
 * scale, the size) of the first centred shape after every update. Returns the
 * last iterate with converged = false when max_iterations is reached.
 */
AlignedDataset gpa(const std::vector<PointCloud>& shapes, const GpaParams& params = {});

PointCloud mean_shape(const std::vector<PointCloud>& shapes);
PointCloud mean_shape(const AlignedDataset& dataset);

struct DeformationStats {
    /// distances(i, m) = |shape_i[m] - mean[m]|.
    Eigen::MatrixXd distances;
    std::vector<double> per_shape_mean;
    std::vector<double> per_point_mean;
};

DeformationStats deformation_stats(const std::vector<PointCloud>& shapes, const PointCloud& mean);
DeformationStats deformation_stats(const AlignedDataset& dataset);

/// argmax of per_shape_mean, lowest index on ties.
std::size_t most_different_shape(const DeformationStats& stats);
std::size_t most_different_shape(const AlignedDataset& dataset);

/// per_shape.csv, per_point.csv and mean_deformation.ply (scalar field
/// "deformation") inside `dir`. `names` labels shapes in per_shape.csv.
void write_deformation_outputs(const std::filesystem::path& dir, const DeformationStats& stats, const PointCloud& mean,
                               const std::vector<std::string>& names = {});

}  // namespace shapefit
