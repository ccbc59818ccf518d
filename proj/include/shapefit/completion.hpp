#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "shapefit/geometry.hpp"
#include "shapefit/nonrigid.hpp"

namespace shapefit {

/// Shapes are flattened point-major: (x0, y0, z0, x1, ...).
Eigen::VectorXd flatten(const Points& points);
Points unflatten(const Eigen::VectorXd& v);

/// Linear shape model mean + W a with orthonormal W and per-column variances.
struct PcaShapeModel {
    Eigen::VectorXd mean;        // 3M
    Eigen::MatrixXd components;  // 3M x d, orthonormal columns
    Eigen::VectorXd eigenvalues; // d, descending, mm^2
    double noise_sigma2 = 0.0;   // mm^2
    std::size_t point_count = 0;

    std::size_t rank() const { return static_cast<std::size_t>(eigenvalues.size()); }
    PointCloud mean_shape() const { return PointCloud(unflatten(mean)); }
    /// First d components only.
    PcaShapeModel truncated(std::size_t d) const;
    /// Least-squares projection of a full shape onto mean + span(W).
    Eigen::VectorXd project(const Points& shape) const;
    void validate() const;
};

/**
 * PCA of corresponded, already aligned shapes through the n x n inner-product
 * matrix. noise_sigma2 is the mean of the 3M - d discarded eigenvalues, floored
 * at 1e-12 times the leading one so that it stays positive.
 * Throws InvalidArgument when d exceeds the number of nonzero eigenvalues.
 */
PcaShapeModel build_pca_model(const std::vector<PointCloud>& aligned, std::size_t d);

/// Number of eigenvalues above 1e-12 of the leading one; the largest valid d.
std::size_t pca_available_components(const std::vector<PointCloud>& aligned);

struct PartialObservation {
    std::vector<std::size_t> observed_indices;
    Points observed_positions;
    /// mm^2; the model's own noise variance when unset.
    std::optional<double> observation_noise;

    void validate(std::size_t point_count) const;
};

struct PpcaCompletion {
    Eigen::VectorXd shape;             // 3M
    Eigen::VectorXd alpha;             // d
    Eigen::MatrixXd alpha_covariance;  // d x d

    PointCloud cloud() const { return PointCloud(unflatten(shape)); }
};

/**
 * Posterior of a ~ N(0, I) under x_b = mu_b + W_b a + noise:
 * a = M^-1 W_b^T (x_b - mu_b) / sigma2 with M = W_b^T W_b / sigma2 + I.
 * Throws Error("ill-conditioned completion") when M cannot be factorised.
 */
PpcaCompletion ppca_complete(const PcaShapeModel& model, const PartialObservation& obs);

/// Gaussian-process model of deformations u(x) = shape(x) - x over a reference.
struct GpShapeModel {
    PointCloud reference;
    Points mean_deformation;      // M x 3
    Eigen::MatrixXd eigenvectors; // 3M x r, orthonormal
    Eigen::VectorXd eigenvalues;  // r, descending, > 0
    double gaussian_sigma = 0.0;     // mm
    double gaussian_amplitude = 0.0; // mm^2
    /// Centred training deformations, n x 3M; kept for exact-kernel regression.
    Eigen::MatrixXd sample_deformations;

    std::size_t point_count() const { return reference.size(); }
    std::size_t rank() const { return static_cast<std::size_t>(eigenvalues.size()); }
    /// reference + mean_deformation + sum_i a_i sqrt(lambda_i) phi_i.
    PointCloud instance(const Eigen::VectorXd& alpha) const;
    void validate() const;
};

/// k_final(x, x') = k_SSM(x, x') + amplitude exp(-|x - x'|^2 / sigma^2) I3 on
/// reference points i, j, as a 3x3 block.
Eigen::MatrixXd gp_kernel_matrix(const GpShapeModel& model, const std::vector<std::size_t>& rows,
                                 const std::vector<std::size_t>& cols);

/**
 * Mean deformation and leading r eigenpairs of the summed kernel on the
 * reference. Dense for 3M <= 1500, matrix-free randomized otherwise.
 */
GpShapeModel build_gp_model(const std::vector<PointCloud>& aligned, const PointCloud& reference,
                            double gaussian_sigma, double gaussian_amplitude, std::size_t r,
                            std::uint64_t seed = 0);

struct GpCompletion {
    PointCloud shape;
    Eigen::VectorXd alpha;  // empty for the exact-kernel path
    std::string status;     // "posterior mean" or "prior mean"
};

/// Observation noise defaults to 1e-6 mm^2 when the observation leaves it unset.
GpCompletion gp_complete(const GpShapeModel& model, const PartialObservation& obs, bool exact_kernel = false);

/// The registration's deformed template, unchanged.
PointCloud deformed_template_completion(const BcpdResult& result);
PointCloud deformed_template_completion(const CpdResult& result);

}  // namespace shapefit
