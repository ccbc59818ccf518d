#include "shapefit/nonrigid.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "shapefit/linalg.hpp"

namespace shapefit {

namespace {

constexpr double kDegenerateSigma2 = 1e-12;
constexpr double kDimension = 3.0;
constexpr double kLogCutoff = -60.0;

/// Posterior of a mixture whose m-th inlier term has log-weight
/// base + shift_m - |x_n - y_m|^2 / (2 sigma2) and whose outlier term has
/// log-weight log_out, together with its marginals.
struct EStep {
    Eigen::MatrixXd p;    // M x N
    Eigen::VectorXd out;  // N
    Eigen::VectorXd nu;   // row sums of p, M
    Eigen::VectorXd nu_t; // column sums of p, N
    Eigen::MatrixXd px;   // p * x, M x 3
    double log_likelihood = 0.0;  // sum_n log of the unnormalised column total
    double normalization_error = 0.0;
};

void e_step(const Points& y, const Points& x, double sigma2, double base, const Eigen::VectorXd& shift,
            double log_out, EStep& e) {
    const Eigen::Index m_count = y.rows();
    const Eigen::Index n_count = x.rows();
    e.p.resize(m_count, n_count);
    e.out.resize(n_count);
    e.nu_t.resize(n_count);
    e.nu.setZero(m_count);
    e.px.setZero(m_count, 3);
    e.log_likelihood = 0.0;
    e.normalization_error = 0.0;
    const double inv = 1.0 / (2.0 * sigma2);
    const Eigen::ArrayXd y0 = y.col(0).array(), y1 = y.col(1).array(), y2 = y.col(2).array();
    const Eigen::ArrayXd lifted = shift.array() + base;
    Eigen::ArrayXd a(m_count);
    for (Eigen::Index n = 0; n < n_count; ++n) {
        a = lifted - ((y0 - x(n, 0)).square() + (y1 - x(n, 1)).square() + (y2 - x(n, 2)).square()) * inv;
        const double top = std::max(log_out, a.maxCoeff());
        auto col = e.p.col(n).array();
        // Terms below e^-60 of the largest are dropped; they would only feed denormals downstream.
        col = (a - top < kLogCutoff).select(0.0, (a - top).exp());
        const double outlier = std::exp(log_out - top);
        const double den = col.sum() + outlier;
        col /= den;
        e.out(n) = outlier / den;
        e.nu_t(n) = col.sum();
        e.log_likelihood += top + std::log(den);
        e.normalization_error = std::max(e.normalization_error, std::abs(e.nu_t(n) + e.out(n) - 1.0));
        e.nu.array() += col;
        for (int k = 0; k < 3; ++k) e.px.col(k).array() += col * x(n, k);
    }
}

double mean_pair_sq_distance(const Points& y, const Points& x) {
    // sum_mn |x_n - y_m|^2 through centred moments.
    const Vec3 cx = x.colwise().mean().transpose();
    const Vec3 cy = y.colwise().mean().transpose();
    const double vx = (x.rowwise() - cx.transpose()).squaredNorm() / static_cast<double>(x.rows());
    const double vy = (y.rowwise() - cy.transpose()).squaredNorm() / static_cast<double>(y.rows());
    return vx + vy + (cx - cy).squaredNorm();
}

/// sum_mn P_mn |x_n - y_m|^2 from the marginals.
double weighted_sq_residual(const EStep& e, const Points& x, const Points& y) {
    double s = 0.0;
    for (Eigen::Index n = 0; n < x.rows(); ++n) s += e.nu_t(n) * x.row(n).squaredNorm();
    for (Eigen::Index m = 0; m < y.rows(); ++m) {
        s += e.nu(m) * y.row(m).squaredNorm() - 2.0 * e.px.row(m).dot(y.row(m));
    }
    return std::max(s, 0.0);
}

Points to_points(const Eigen::MatrixXd& m) { return Points(m); }

double bbox_volume(const Points& x) {
    const BoundingBox b = bounding_box(x);
    const double floor = std::max(1e-3 * b.diagonal(), 1e-9);
    const Vec3 e = b.extent().cwiseMax(floor);
    return e.prod();
}

void check_common(double w, double beta, double lambda, int max_iterations) {
    if (!(w > 0.0 && w < 1.0)) throw InvalidArgument("w must lie in (0,1)");
    if (!(beta > 0.0)) throw InvalidArgument("beta must be > 0");
    if (!(lambda > 0.0)) throw InvalidArgument("lambda must be > 0");
    if (max_iterations < 1) throw InvalidArgument("max_iterations must be >= 1");
}

void check_thresholds(double missing, double outlier) {
    if (!(missing >= 0.0 && missing <= 1.0) || !(outlier >= 0.0 && outlier <= 1.0)) {
        throw InvalidArgument("correspondence thresholds must lie in [0,1]");
    }
}

const KernelBasis* resolve_basis(const Points& y, double beta, std::size_t terms, std::uint64_t seed,
                                 const KernelBasis* given, KernelBasis& storage) {
    if (terms == 0) return nullptr;
    if (given) {
        if (given->point_count() != static_cast<std::size_t>(y.rows()) || given->beta != beta) {
            throw InvalidArgument("kernel basis does not match template or beta");
        }
        return given;
    }
    storage = make_kernel_basis(y, beta, terms, seed);
    return &storage;
}

}  // namespace

std::string to_string(NonrigidStatus status) {
    switch (status) {
        case NonrigidStatus::converged: return "converged";
        case NonrigidStatus::max_iterations: return "max iterations";
        case NonrigidStatus::degenerate_variance: return "converged (degenerate variance)";
    }
    return "unknown";
}

Eigen::MatrixXd coherence_kernel(const Points& templ, double beta) {
    return gaussian_kernel(templ, 2.0 * beta * beta);
}

KernelBasis make_kernel_basis(const Points& templ, double beta, std::size_t terms, std::uint64_t seed) {
    if (!(beta > 0.0)) throw InvalidArgument("beta must be > 0");
    if (terms == 0) throw InvalidArgument("kernel basis needs at least one term");
    const Eigen::MatrixXd g = coherence_kernel(templ, beta);
    const EigenPairs ep = top_eigenpairs(g, static_cast<Eigen::Index>(std::min<std::size_t>(terms, g.rows())), seed);
    Eigen::Index keep = 0;
    while (keep < ep.values.size() && ep.values(keep) > 1e-12 * ep.values(0)) ++keep;
    KernelBasis b;
    b.beta = beta;
    b.values = ep.values.head(keep);
    b.vectors = ep.vectors.leftCols(keep);
    return b;
}

void CpdParams::validate() const {
    check_common(w, beta, lambda, max_iterations);
    if (!(sigma2_tol > 0.0)) throw InvalidArgument("sigma2_tol must be > 0");
    check_thresholds(missing_threshold, outlier_threshold);
}

void BcpdParams::validate() const {
    check_common(w, beta, lambda, max_iterations);
    if (!(gamma > 0.0)) throw InvalidArgument("gamma must be > 0");
    if (!(kappa > 0.0)) throw InvalidArgument("kappa must be > 0");
    if (!(convergence_tol > 0.0)) throw InvalidArgument("convergence_tol must be > 0");
    check_thresholds(missing_threshold, outlier_threshold);
}

CpdResult cpd_nonrigid(const PointCloud& templ, const PointCloud& target, const CpdParams& params,
                       const KernelBasis* basis_in) {
    params.validate();
    if (templ.empty() || target.empty()) throw InvalidArgument("empty point set");
    const Eigen::Index m_count = static_cast<Eigen::Index>(templ.size());
    const Eigen::Index n_count = static_cast<Eigen::Index>(target.size());

    // Work in coordinates centred on the target.
    const Vec3 c = target.centroid();
    const Points x = target.points().rowwise() - c.transpose();
    const Points y = templ.points().rowwise() - c.transpose();

    KernelBasis storage;
    const KernelBasis* basis = resolve_basis(templ.points(), params.beta, params.low_rank_terms, params.seed,
                                             basis_in, storage);
    Eigen::MatrixXd g;
    if (!basis) g = coherence_kernel(templ.points(), params.beta);
    auto apply_g = [&](const Eigen::MatrixXd& w) -> Eigen::MatrixXd {
        if (!basis) return g * w;
        return basis->vectors * (basis->values.asDiagonal() * (basis->vectors.transpose() * w));
    };

    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m_count, 3);
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(m_count, 3);
    Points t = y;
    double sigma2 = mean_pair_sq_distance(y, x) / kDimension;
    const double log_ratio = std::log(params.w / (1.0 - params.w)) + std::log(static_cast<double>(m_count) / n_count);
    const Eigen::VectorXd no_shift = Eigen::VectorXd::Zero(m_count);

    CpdResult out;
    EStep e;
    for (int it = 0; it < params.max_iterations; ++it) {
        // Inlier log-weight 0, outlier log-weight log c, c = (2 pi s2)^(D/2) w/(1-w) M/N.
        const double log_c = 0.5 * kDimension * std::log(2.0 * std::numbers::pi * sigma2) + log_ratio;
        e_step(t, x, sigma2, 0.0, no_shift, log_c, e);
        const double log_k = std::log((1.0 - params.w) / m_count) - 0.5 * kDimension * std::log(2.0 * std::numbers::pi * sigma2);
        CpdIteration rec;
        rec.sigma2 = sigma2;
        rec.objective = -(e.log_likelihood + n_count * log_k) + 0.5 * params.lambda * (w.array() * v.array()).sum();
        rec.normalization_error = e.normalization_error;
        out.history.push_back(rec);
        out.iterations = it + 1;

        const Eigen::VectorXd& p1 = e.nu;
        const double np = p1.sum();
        const Eigen::MatrixXd& px = e.px;
        const Eigen::MatrixXd b = px - p1.asDiagonal() * y;
        const double ls = params.lambda * sigma2;
        if (!basis) {
            Eigen::MatrixXd a = p1.asDiagonal() * g;
            a.diagonal().array() += ls;
            w = a.partialPivLu().solve(b);
        } else {
            const Eigen::MatrixXd& q = basis->vectors;
            Eigen::MatrixXd small = q.transpose() * p1.asDiagonal() * q;
            small.diagonal() += ls * basis->values.cwiseInverse();
            w = (b - p1.asDiagonal() * (q * small.ldlt().solve(q.transpose() * b))) / ls;
        }
        v = apply_g(w);
        t = y + v;

        if (!(np > 0.0)) {
            out.status = NonrigidStatus::degenerate_variance;
            break;
        }
        const double next = weighted_sq_residual(e, x, t) / (np * kDimension);
        if (next < kDegenerateSigma2) {
            sigma2 = next;
            out.status = NonrigidStatus::degenerate_variance;
            break;
        }
        const double change = std::abs(next - sigma2) / sigma2;
        sigma2 = next;
        if (change < params.sigma2_tol) {
            out.status = NonrigidStatus::converged;
            break;
        }
    }

    out.deformed_template = PointCloud(to_points(t.rowwise() + c.transpose()));
    out.posterior = std::move(e.p);
    out.outlier_posterior = std::move(e.out);
    out.coefficients = std::move(w);
    out.sigma2_final = sigma2;
    out.correspondences = extract_correspondences(out.posterior, params.missing_threshold, params.outlier_threshold);
    return out;
}

Points BcpdResult::reassemble(const Points& templ) const {
    return apply_transform(Points(templ + displacements), similarity);
}

BcpdResult bcpd(const PointCloud& templ, const PointCloud& target, const BcpdParams& params,
                const KernelBasis* basis_in) {
    params.validate();
    if (templ.empty() || target.empty()) throw InvalidArgument("empty point set");
    const Eigen::Index m_count = static_cast<Eigen::Index>(templ.size());
    const double md = static_cast<double>(m_count);

    const Vec3 c = target.centroid();
    const Points x = target.points().rowwise() - c.transpose();
    const Points& y = templ.points();

    KernelBasis storage;
    const KernelBasis* basis = resolve_basis(y, params.beta, params.low_rank_terms, params.seed, basis_in, storage);
    Eigen::MatrixXd g;
    if (!basis) g = coherence_kernel(y, params.beta);

    double s = 1.0;
    Mat3 r = Mat3::Identity();
    Vec3 t = -templ.centroid() + Vec3::Zero();  // centroid of x is the origin here
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(m_count, 3);
    Eigen::VectorXd var = Eigen::VectorXd::Zero(m_count);
    Eigen::VectorXd log_alpha = Eigen::VectorXd::Constant(m_count, -std::log(md));

    auto place = [&]() -> Points {
        Points out = ((y + v) * r.transpose()) * s;
        out.rowwise() += t.transpose();
        return out;
    };
    Points yhat = place();
    double sigma2 = params.gamma * mean_pair_sq_distance(yhat, x) / kDimension;
    const double log_out = std::log(params.w) - std::log(bbox_volume(x));

    BcpdResult out;
    EStep e;
    for (int it = 0; it < params.max_iterations; ++it) {
        const double base = std::log(1.0 - params.w) - 0.5 * kDimension * std::log(2.0 * std::numbers::pi * sigma2);
        const Eigen::VectorXd shift = log_alpha - (s * s * kDimension / (2.0 * sigma2)) * var;
        e_step(yhat, x, sigma2, base, shift, log_out, e);
        out.iterations = it + 1;

        const Eigen::VectorXd& nu = e.nu;
        const double nhat = nu.sum();
        if (!(nhat > 1e-12)) {
            out.status = NonrigidStatus::degenerate_variance;
            out.history.push_back({sigma2, e.normalization_error, 0.0, r.determinant()});
            break;
        }
        const Eigen::MatrixXd& px = e.px;

        // Displacement field and its posterior covariance.
        const double k = s * s / sigma2;
        const Eigen::VectorXd sdiag = k * nu;
        const Eigen::MatrixXd b =
            k * (((px - nu * t.transpose()) * r) / s - nu.asDiagonal() * y);
        if (!basis) {
            const Eigen::VectorXd root = sdiag.cwiseSqrt();
            Eigen::MatrixXd inner = root.asDiagonal() * g * root.asDiagonal();
            inner.diagonal().array() += params.lambda;
            const Eigen::LLT<Eigen::MatrixXd> llt(inner);
            if (llt.info() != Eigen::Success) throw Error("displacement covariance is not positive definite");
            // Sigma = (G - G S^1/2 C^-1 S^1/2 G) / lambda with C = lambda I + S^1/2 G S^1/2.
            const Eigen::MatrixXd z = llt.matrixL().solve(root.asDiagonal() * g);
            var = (g.diagonal() - z.colwise().squaredNorm().transpose()) / params.lambda;
            const Eigen::MatrixXd gb = g * b;
            v = (gb - g * (root.asDiagonal() * llt.solve(root.asDiagonal() * gb))) / params.lambda;
        } else {
            // Sigma = Q (lambda Lambda^-1 + Q^T S Q)^-1 Q^T.
            const Eigen::MatrixXd& q = basis->vectors;
            Eigen::MatrixXd a = q.transpose() * sdiag.asDiagonal() * q;
            a.diagonal() += params.lambda * basis->values.cwiseInverse();
            const Eigen::LLT<Eigen::MatrixXd> llt(a);
            if (llt.info() != Eigen::Success) throw Error("displacement covariance is not positive definite");
            const Eigen::MatrixXd z = llt.matrixL().solve(q.transpose());
            var = z.colwise().squaredNorm().transpose();
            v = q * llt.solve(q.transpose() * b);
        }
        var = var.cwiseMax(0.0);

        if (std::isfinite(params.kappa)) {
            using boost::math::digamma;
            const double denom = digamma(params.kappa * md + nhat);
            for (Eigen::Index m = 0; m < m_count; ++m) log_alpha(m) = digamma(params.kappa + nu(m)) - denom;
        }

        // Similarity transform.
        const Eigen::MatrixXd u = y + v;
        const Vec3 xbar = (px.colwise().sum() / nhat).transpose();
        const Vec3 ubar = ((nu.transpose() * u) / nhat).transpose();
        const double varbar = nu.dot(var) / nhat;
        const Mat3 sxu = (px.transpose() * u) / nhat - xbar * ubar.transpose();
        Mat3 suu = (u.transpose() * nu.asDiagonal() * u) / nhat - ubar * ubar.transpose();
        suu.diagonal().array() += varbar;
        Eigen::JacobiSVD<Mat3> svd(sxu, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Mat3 d = Mat3::Identity();
        if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
        const Mat3 r_new = svd.matrixU() * d * svd.matrixV().transpose();
        const double s_new = (svd.singularValues().asDiagonal() * d).trace() / suu.trace();
        const Vec3 t_new = xbar - s_new * r_new * ubar;

        const double ds = std::abs(s_new - s);
        const double dr = (r_new - r).cwiseAbs().maxCoeff();
        const double dt = (t_new - t).norm();
        s = s_new;
        r = r_new;
        t = t_new;
        yhat = place();

        const double next = weighted_sq_residual(e, x, yhat) / (nhat * kDimension) + s * s * varbar;
        out.history.push_back({sigma2, e.normalization_error,
                               (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(), r.determinant()});
        if (next < kDegenerateSigma2) {
            sigma2 = next;
            out.status = NonrigidStatus::degenerate_variance;
            break;
        }
        const double change = std::abs(next - sigma2) / sigma2;
        sigma2 = next;
        const double tol = params.convergence_tol;
        if (change < tol && ds < tol && dr < tol && dt < tol * std::sqrt(sigma2 + 1.0)) {
            out.status = NonrigidStatus::converged;
            break;
        }
    }

    out.similarity.rotation = r;
    out.similarity.scale = s;
    out.similarity.translation = t + c;
    out.displacements = to_points(v);
    out.deformed_template = PointCloud(out.reassemble(y));
    out.correspondence_probabilities = std::move(e.p);
    out.outlier_probabilities = std::move(e.out);
    out.displacement_variance = std::move(var);
    out.sigma2_final = sigma2;
    out.correspondences =
        extract_correspondences(out.correspondence_probabilities, params.missing_threshold, params.outlier_threshold);
    return out;
}

CorrespondenceMap extract_correspondences(const Eigen::MatrixXd& p, double missing_threshold,
                                          double outlier_threshold) {
    check_thresholds(missing_threshold, outlier_threshold);
    CorrespondenceMap map;
    map.threshold_used = missing_threshold;
    map.assignments.resize(static_cast<std::size_t>(p.rows()));
    std::vector<bool> used(static_cast<std::size_t>(p.cols()), false);
    for (Eigen::Index m = 0; m < p.rows(); ++m) {
        if (p.cols() == 0) break;
        Eigen::Index best = 0;
        for (Eigen::Index n = 1; n < p.cols(); ++n) {
            if (p(m, n) > p(m, best)) best = n;
        }
        if (p(m, best) >= missing_threshold) {
            map.assignments[static_cast<std::size_t>(m)] = static_cast<std::size_t>(best);
            used[static_cast<std::size_t>(best)] = true;
        }
    }
    for (Eigen::Index n = 0; n < p.cols(); ++n) {
        if (!used[static_cast<std::size_t>(n)] && p.col(n).sum() < outlier_threshold) {
            map.outlier_targets.insert(static_cast<std::size_t>(n));
        }
    }
    return map;
}

}  // namespace shapefit
