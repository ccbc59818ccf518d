#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "shapefit/geometry.hpp"

namespace shapefit {

inline constexpr double kDefaultMissingThreshold = 0.5;
inline constexpr double kDefaultOutlierThreshold = 0.3;

/// Leading eigenpairs of the motion-coherence kernel
/// G_ij = exp(-|y_i - y_j|^2 / (2 beta^2)) on a template.
struct KernelBasis {
    Eigen::MatrixXd vectors;  // M x K, orthonormal columns
    Eigen::VectorXd values;   // K, descending, all > 0
    double beta = 0.0;

    std::size_t point_count() const { return static_cast<std::size_t>(vectors.rows()); }
    std::size_t rank() const { return static_cast<std::size_t>(values.size()); }
};

/// Eigenvalues below 1e-12 of the largest are dropped, so rank() may be < terms.
KernelBasis make_kernel_basis(const Points& templ, double beta, std::size_t terms, std::uint64_t seed = 0);

/// G of the template, exp(-d^2 / (2 beta^2)).
Eigen::MatrixXd coherence_kernel(const Points& templ, double beta);

struct CpdParams {
    double w = 0.1;
    double beta = 20.0;   // mm
    double lambda = 2.0;
    int max_iterations = 150;
    double sigma2_tol = 1e-6;  // relative change of sigma^2
    std::size_t low_rank_terms = 100;  // 0 = exact kernel
    std::uint64_t seed = 0;
    double missing_threshold = kDefaultMissingThreshold;
    double outlier_threshold = kDefaultOutlierThreshold;

    void validate() const;
};

enum class NonrigidStatus { converged, max_iterations, degenerate_variance };

std::string to_string(NonrigidStatus status);

struct CpdIteration {
    double sigma2 = 0.0;
    /// -sum_n log p(x_n) + lambda/2 tr(W^T G W), evaluated at the E-step.
    double objective = 0.0;
    /// max_n |sum_m P_mn + P_out,n - 1| at the E-step.
    double normalization_error = 0.0;
};

struct CpdResult {
    PointCloud deformed_template;
    Eigen::MatrixXd posterior;  // M x N, P(m | x_n)
    Eigen::VectorXd outlier_posterior;  // N
    Eigen::MatrixXd coefficients;  // W, M x 3, deformation = G W
    double sigma2_final = 0.0;
    CorrespondenceMap correspondences;
    NonrigidStatus status = NonrigidStatus::max_iterations;
    int iterations = 0;
    std::vector<CpdIteration> history;
};

CpdResult cpd_nonrigid(const PointCloud& templ, const PointCloud& target, const CpdParams& params,
                       const KernelBasis* basis = nullptr);

struct BcpdParams {
    double w = 0.1;
    double beta = 10.0;    // mm
    double lambda = 100.0;
    double gamma = 1.0;    // scales the initial sigma^2
    double kappa = std::numeric_limits<double>::infinity();  // inf = equal mixing weights
    int max_iterations = 150;
    double convergence_tol = 1e-6;
    std::size_t low_rank_terms = 100;  // 0 = exact kernel
    std::uint64_t seed = 0;
    double missing_threshold = kDefaultMissingThreshold;
    double outlier_threshold = kDefaultOutlierThreshold;

    void validate() const;
};

struct BcpdIteration {
    double sigma2 = 0.0;
    double normalization_error = 0.0;
    double rotation_orthonormality_error = 0.0;  // max |R^T R - I|
    double rotation_determinant = 1.0;
};

struct BcpdResult {
    PointCloud deformed_template;
    RigidTransform similarity;
    Points displacements;  // v_m; deformed_m = s R (y_m + v_m) + t
    Eigen::MatrixXd correspondence_probabilities;  // M x N
    Eigen::VectorXd outlier_probabilities;         // N
    Eigen::VectorXd displacement_variance;         // sigma_m^2, M
    double sigma2_final = 0.0;
    CorrespondenceMap correspondences;
    NonrigidStatus status = NonrigidStatus::max_iterations;
    int iterations = 0;
    std::vector<BcpdIteration> history;

    /// s R (y_m + v_m) + t recomputed from the stored parts.
    Points reassemble(const Points& templ) const;
};

/// With low_rank_terms > 0 a matching `basis` may be passed to skip the
/// kernel eigendecomposition (it must have been built with the same beta).
BcpdResult bcpd(const PointCloud& templ, const PointCloud& target, const BcpdParams& params,
                const KernelBasis* basis = nullptr);

/**
 * Template m is matched to argmax_n P_mn (lowest n on ties) when that value
 * reaches missing_threshold, otherwise it is missing. Target n is an outlier
 * when sum_m P_mn < outlier_threshold and no template is matched to it.
 */
CorrespondenceMap extract_correspondences(const Eigen::MatrixXd& probabilities, double missing_threshold,
                                          double outlier_threshold);

}  // namespace shapefit
