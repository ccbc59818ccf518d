#include "shapefit/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "shapefit/random.hpp"

namespace shapefit {

namespace {

constexpr Eigen::Index kDenseLimit = 1500;
constexpr Eigen::Index kOversample = 10;

/// Sort eigenpairs of a self-adjoint solver (ascending) into descending order.
EigenPairs top_from_solver(const Eigen::VectorXd& values, const Eigen::MatrixXd& vectors, Eigen::Index r) {
    const Eigen::Index n = values.size();
    r = std::min(r, n);
    EigenPairs out;
    out.values.resize(r);
    out.vectors.resize(vectors.rows(), r);
    for (Eigen::Index k = 0; k < r; ++k) {
        out.values(k) = values(n - 1 - k);
        out.vectors.col(k) = vectors.col(n - 1 - k);
    }
    return out;
}

Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& y) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
    return qr.householderQ() * Eigen::MatrixXd::Identity(y.rows(), y.cols());
}

}  // namespace

EigenPairs dense_top_eigenpairs(const Eigen::MatrixXd& sym, Eigen::Index r) {
    if (sym.rows() != sym.cols()) throw InvalidArgument("eigendecomposition needs a square matrix");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) throw Error("eigendecomposition failed");
    return top_from_solver(es.eigenvalues(), es.eigenvectors(), r);
}

EigenPairs randomized_top_eigenpairs(const SymmetricOperator& op, Eigen::Index dim, Eigen::Index r,
                                     std::uint64_t seed, double rel_tol, int max_iterations) {
    r = std::min(r, dim);
    const Eigen::Index p = std::min(dim, r + kOversample);
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd omega(dim, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        for (Eigen::Index i = 0; i < dim; ++i) omega(i, j) = normal(rng);
    }

    Eigen::MatrixXd q = orthonormalize(op(omega));
    Eigen::VectorXd previous = Eigen::VectorXd::Constant(r, -1.0);
    EigenPairs out;
    for (int it = 0; it < max_iterations; ++it) {
        const Eigen::MatrixXd aq = op(q);
        const Eigen::MatrixXd small = q.transpose() * aq;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (small + small.transpose()));
        const EigenPairs ritz = top_from_solver(es.eigenvalues(), es.eigenvectors(), r);
        out.values = ritz.values;
        out.vectors = q * ritz.vectors;
        const double scale = std::max(std::abs(ritz.values(0)), 1e-300);
        if ((ritz.values - previous).cwiseAbs().maxCoeff() <= rel_tol * scale) break;
        previous = ritz.values;
        q = orthonormalize(aq);
    }
    return out;
}

EigenPairs top_eigenpairs(const Eigen::MatrixXd& sym, Eigen::Index r, std::uint64_t seed) {
    if (sym.rows() <= kDenseLimit || 4 * r >= sym.rows()) return dense_top_eigenpairs(sym, r);
    return randomized_top_eigenpairs([&](const Eigen::MatrixXd& x) -> Eigen::MatrixXd { return sym * x; },
                                     sym.rows(), r, seed);
}

Eigen::MatrixXd gaussian_kernel(const Points& a, const Points& b, double denom) {
    Eigen::MatrixXd k(a.rows(), b.rows());
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            const double d2 = (a.row(i) - b.row(j)).squaredNorm();
            k(i, j) = std::exp(-d2 / denom);
        }
    }
    return k;
}

Eigen::MatrixXd gaussian_kernel(const Points& p, double denom) {
    const Eigen::Index n = p.rows();
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        k(j, j) = 1.0;
        for (Eigen::Index i = j + 1; i < n; ++i) {
            const double v = std::exp(-(p.row(i) - p.row(j)).squaredNorm() / denom);
            k(i, j) = v;
            k(j, i) = v;
        }
    }
    return k;
}

}  // namespace shapefit
