#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>

#include "shapefit/geometry.hpp"

namespace shapefit {

/// Leading eigenpairs of a symmetric PSD operator, eigenvalues descending.
struct EigenPairs {
    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;  // one unit column per eigenvalue
};

/// Products A * X for a symmetric operator A given column blocks X.
using SymmetricOperator = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

/// Top-r eigenpairs of a dense symmetric matrix by full decomposition.
EigenPairs dense_top_eigenpairs(const Eigen::MatrixXd& sym, Eigen::Index r);

/**
 * Top-r eigenpairs of a PSD operator by randomized subspace iteration
 * (Gaussian start block, QR re-orthonormalisation, Rayleigh-Ritz), iterated
 * until the leading r Ritz values settle to `rel_tol` or `max_iterations`.
 */
EigenPairs randomized_top_eigenpairs(const SymmetricOperator& op, Eigen::Index dim, Eigen::Index r,
                                     std::uint64_t seed, double rel_tol = 1e-12, int max_iterations = 60);

/// Picks the dense path for small problems (dim <= 1500) or large ranks and
/// the randomized path otherwise.
EigenPairs top_eigenpairs(const Eigen::MatrixXd& sym, Eigen::Index r, std::uint64_t seed = 0);

/// K_ij = exp(-|a_i - b_j|^2 / denom).
Eigen::MatrixXd gaussian_kernel(const Points& a, const Points& b, double denom);

/// Symmetric kernel K_ij = exp(-|p_i - p_j|^2 / denom).
Eigen::MatrixXd gaussian_kernel(const Points& p, double denom);

}  // namespace shapefit
