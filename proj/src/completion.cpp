#include "shapefit/completion.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "shapefit/linalg.hpp"

namespace shapefit {

namespace {

constexpr double kGpDefaultNoise = 1e-6;
constexpr Eigen::Index kDenseLimit = 1500;

Eigen::MatrixXd stack_shapes(const std::vector<PointCloud>& shapes) {
    const Eigen::Index m = static_cast<Eigen::Index>(shapes.front().size());
    Eigen::MatrixXd x(static_cast<Eigen::Index>(shapes.size()), 3 * m);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (shapes[i].size() != shapes.front().size()) throw InvalidArgument("shapes differ in point count");
        x.row(static_cast<Eigen::Index>(i)) = flatten(shapes[i].points()).transpose();
    }
    return x;
}

/// Flip each column so that its largest-magnitude entry is positive.
void fix_signs(Eigen::MatrixXd& vectors) {
    for (Eigen::Index k = 0; k < vectors.cols(); ++k) {
        Eigen::Index at = 0;
        vectors.col(k).cwiseAbs().maxCoeff(&at);
        if (vectors(at, k) < 0.0) vectors.col(k) *= -1.0;
    }
}

/// Rows 3i..3i+2 of `full` for every index.
Eigen::MatrixXd select_rows(const Eigen::MatrixXd& full, const std::vector<std::size_t>& idx) {
    Eigen::MatrixXd out(3 * static_cast<Eigen::Index>(idx.size()), full.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        out.middleRows(3 * static_cast<Eigen::Index>(k), 3) = full.middleRows(3 * static_cast<Eigen::Index>(idx[k]), 3);
    }
    return out;
}

Eigen::VectorXd select_entries(const Eigen::VectorXd& full, const std::vector<std::size_t>& idx) {
    Eigen::VectorXd out(3 * static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
        out.segment<3>(3 * static_cast<Eigen::Index>(k)) = full.segment<3>(3 * static_cast<Eigen::Index>(idx[k]));
    }
    return out;
}

/// (G kron I3) X for point-major vectors, without forming the 3M x 3M matrix.
Eigen::MatrixXd apply_block_kernel(const Eigen::MatrixXd& g, const Eigen::MatrixXd& x) {
    const Eigen::Index m = g.rows();
    const Eigen::Index p = x.cols();
    Eigen::MatrixXd folded(m, 3 * p);
    for (Eigen::Index c = 0; c < p; ++c) {
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index a = 0; a < 3; ++a) folded(i, 3 * c + a) = x(3 * i + a, c);
        }
    }
    const Eigen::MatrixXd gf = g * folded;
    Eigen::MatrixXd out(3 * m, p);
    for (Eigen::Index c = 0; c < p; ++c) {
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index a = 0; a < 3; ++a) out(3 * i + a, c) = gf(i, 3 * c + a);
        }
    }
    return out;
}

double ssm_scale(const Eigen::MatrixXd& z) { return z.rows() > 1 ? 1.0 / static_cast<double>(z.rows() - 1) : 0.0; }

}  // namespace

Eigen::VectorXd flatten(const Points& points) {
    Eigen::VectorXd v(3 * points.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) v.segment<3>(3 * i) = points.row(i).transpose();
    return v;
}

Points unflatten(const Eigen::VectorXd& v) {
    if (v.size() % 3 != 0) throw InvalidArgument("flattened shape length is not a multiple of 3");
    Points p(v.size() / 3, 3);
    for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i) = v.segment<3>(3 * i).transpose();
    return p;
}

PcaShapeModel PcaShapeModel::truncated(std::size_t d) const {
    if (d == 0 || d > rank()) throw InvalidArgument("component count out of range");
    PcaShapeModel out = *this;
    out.components = components.leftCols(static_cast<Eigen::Index>(d));
    out.eigenvalues = eigenvalues.head(static_cast<Eigen::Index>(d));
    return out;
}

Eigen::VectorXd PcaShapeModel::project(const Points& shape) const {
    if (static_cast<std::size_t>(shape.rows()) != point_count) throw InvalidArgument("shape size does not match model");
    const Eigen::VectorXd x = flatten(shape);
    return mean + components * (components.transpose() * (x - mean));
}

void PcaShapeModel::validate() const {
    const Eigen::Index dim = 3 * static_cast<Eigen::Index>(point_count);
    if (point_count == 0 || mean.size() != dim) throw InvalidArgument("model mean has the wrong size");
    if (components.rows() != dim || components.cols() != eigenvalues.size())
        throw InvalidArgument("model components have the wrong shape");
    if (components.cols() > dim) throw InvalidArgument("more components than dimensions");
    if (!mean.allFinite() || !components.allFinite() || !eigenvalues.allFinite())
        throw InvalidArgument("model contains non-finite values");
    const Eigen::MatrixXd gram = components.transpose() * components;
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(gram.rows(), gram.cols());
    if (gram.size() > 0 && (gram - eye).cwiseAbs().maxCoeff() > 1e-8)
        throw InvalidArgument("model components are not orthonormal");
    for (Eigen::Index k = 0; k < eigenvalues.size(); ++k) {
        if (eigenvalues(k) <= 0.0) throw InvalidArgument("model eigenvalues must be positive");
        if (k > 0 && eigenvalues(k) > eigenvalues(k - 1)) throw InvalidArgument("model eigenvalues are not sorted");
    }
    if (!(noise_sigma2 >= 0.0)) throw InvalidArgument("model noise variance must be non-negative");
}

namespace {

struct InnerProductPca {
    Eigen::VectorXd mean;
    Eigen::MatrixXd centred;
    EigenPairs eig;
    Eigen::Index nonzero = 0;
};

InnerProductPca inner_product_pca(const std::vector<PointCloud>& aligned) {
    if (aligned.size() < 2) throw InvalidArgument("at least two shapes are required");
    if (aligned.front().empty()) throw InvalidArgument("empty point set");
    const Eigen::MatrixXd x = stack_shapes(aligned);
    InnerProductPca out;
    out.mean = x.colwise().mean().transpose();
    out.centred = x.rowwise() - out.mean.transpose();
    const Eigen::MatrixXd inner = out.centred * out.centred.transpose() / static_cast<double>(x.rows() - 1);
    out.eig = dense_top_eigenpairs(inner, x.rows());
    const double top = std::max(out.eig.values(0), 0.0);
    while (out.nonzero < out.eig.values.size() && out.eig.values(out.nonzero) > 1e-12 * top &&
           out.eig.values(out.nonzero) > 0.0)
        ++out.nonzero;
    return out;
}

}  // namespace

std::size_t pca_available_components(const std::vector<PointCloud>& aligned) {
    return static_cast<std::size_t>(inner_product_pca(aligned).nonzero);
}

PcaShapeModel build_pca_model(const std::vector<PointCloud>& aligned, std::size_t d) {
    if (d == 0) throw InvalidArgument("component count must be positive");
    InnerProductPca ip = inner_product_pca(aligned);
    const Eigen::MatrixXd& z = ip.centred;
    const EigenPairs& eig = ip.eig;
    const Eigen::Index n = z.rows();
    const Eigen::Index dim = z.cols();
    const double denom = static_cast<double>(n - 1);
    const double top = std::max(eig.values(0), 0.0);

    PcaShapeModel model;
    model.point_count = aligned.front().size();
    model.mean = std::move(ip.mean);
    if (static_cast<Eigen::Index>(d) > ip.nonzero)
        throw InvalidArgument("component count exceeds the number of nonzero eigenvalues");

    const Eigen::Index r = static_cast<Eigen::Index>(d);
    model.eigenvalues = eig.values.head(r);
    model.components.resize(dim, r);
    for (Eigen::Index k = 0; k < r; ++k) {
        model.components.col(k) = z.transpose() * eig.vectors.col(k) / std::sqrt(denom * eig.values(k));
    }
    // Gram-Schmidt cleanup keeps the orthonormality invariant tight.
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(model.components);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, r);
    for (Eigen::Index k = 0; k < r; ++k) {
        if (q.col(k).dot(model.components.col(k)) < 0.0) q.col(k) *= -1.0;
    }
    model.components = std::move(q);
    fix_signs(model.components);

    const double total = z.squaredNorm() / denom;
    const double kept = model.eigenvalues.sum();
    const double discarded = dim > r ? std::max(total - kept, 0.0) / static_cast<double>(dim - r) : 0.0;
    model.noise_sigma2 = std::max(discarded, 1e-12 * top);
    return model;
}

void PartialObservation::validate(std::size_t point_count) const {
    if (static_cast<std::size_t>(observed_positions.rows()) != observed_indices.size())
        throw InvalidArgument("observation indices and positions differ in length");
    std::set<std::size_t> seen;
    for (std::size_t idx : observed_indices) {
        if (idx >= point_count) throw InvalidArgument("observed index out of range");
        if (!seen.insert(idx).second) throw InvalidArgument("observed indices must be unique");
    }
    if (!observed_positions.allFinite()) throw InvalidArgument("observed positions must be finite");
    if (observation_noise && !(*observation_noise >= 0.0 && std::isfinite(*observation_noise)))
        throw InvalidArgument("observation noise must be non-negative");
}

PpcaCompletion ppca_complete(const PcaShapeModel& model, const PartialObservation& obs) {
    obs.validate(model.point_count);
    if (obs.observed_indices.empty()) throw InvalidArgument("no observed points");
    const double sigma2 = obs.observation_noise.value_or(model.noise_sigma2);
    const Eigen::MatrixXd wb = select_rows(model.components, obs.observed_indices);
    const Eigen::VectorXd diff = flatten(obs.observed_positions) - select_entries(model.mean, obs.observed_indices);

    // sigma2 * M, so that sigma2 -> 0 stays well scaled.
    const Eigen::Index d = model.components.cols();
    Eigen::MatrixXd scaled = wb.transpose() * wb;
    scaled.diagonal().array() += sigma2;
    Eigen::LLT<Eigen::MatrixXd> llt(scaled);
    if (llt.info() != Eigen::Success || !(sigma2 > 0.0 || llt.rcond() > 1e-14))
        throw Error("ill-conditioned completion");

    PpcaCompletion out;
    out.alpha = llt.solve(wb.transpose() * diff);
    out.alpha_covariance = sigma2 * llt.solve(Eigen::MatrixXd::Identity(d, d));
    if (!out.alpha.allFinite() || !out.alpha_covariance.allFinite()) throw Error("ill-conditioned completion");
    out.shape = model.components * out.alpha + model.mean;
    return out;
}

PointCloud GpShapeModel::instance(const Eigen::VectorXd& alpha) const {
    if (alpha.size() != eigenvalues.size()) throw InvalidArgument("coefficient count does not match model rank");
    const Eigen::VectorXd u = flatten(mean_deformation) + eigenvectors * (eigenvalues.cwiseSqrt().cwiseProduct(alpha));
    return PointCloud(Points(reference.points() + unflatten(u)));
}

void GpShapeModel::validate() const {
    const Eigen::Index m = static_cast<Eigen::Index>(reference.size());
    if (m == 0) throw InvalidArgument("empty point set");
    if (mean_deformation.rows() != m) throw InvalidArgument("mean deformation has the wrong size");
    if (eigenvalues.size() < 1) throw InvalidArgument("model rank must be at least 1");
    if (eigenvectors.rows() != 3 * m || eigenvectors.cols() != eigenvalues.size())
        throw InvalidArgument("model eigenvectors have the wrong shape");
    if (!eigenvectors.allFinite() || !mean_deformation.allFinite() || !eigenvalues.allFinite())
        throw InvalidArgument("model contains non-finite values");
    for (Eigen::Index k = 0; k < eigenvalues.size(); ++k) {
        if (eigenvalues(k) <= 0.0) throw InvalidArgument("model eigenvalues must be positive");
        if (k > 0 && eigenvalues(k) > eigenvalues(k - 1)) throw InvalidArgument("model eigenvalues are not sorted");
    }
    if (!(gaussian_sigma > 0.0)) throw InvalidArgument("gaussian sigma must be positive");
    if (!(gaussian_amplitude >= 0.0)) throw InvalidArgument("gaussian amplitude must be non-negative");
    if (sample_deformations.rows() > 0 && sample_deformations.cols() != 3 * m)
        throw InvalidArgument("sample deformations have the wrong shape");
}

Eigen::MatrixXd gp_kernel_matrix(const GpShapeModel& model, const std::vector<std::size_t>& rows,
                                 const std::vector<std::size_t>& cols) {
    const Eigen::Index nr = static_cast<Eigen::Index>(rows.size());
    const Eigen::Index nc = static_cast<Eigen::Index>(cols.size());
    const std::size_t m = model.point_count();
    for (std::size_t i : rows) if (i >= m) throw InvalidArgument("kernel index out of range");
    for (std::size_t j : cols) if (j >= m) throw InvalidArgument("kernel index out of range");

    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(3 * nr, 3 * nc);
    const Eigen::MatrixXd& z = model.sample_deformations;
    if (z.rows() > 1) {
        const Eigen::MatrixXd zr = select_rows(z.transpose(), rows);
        const Eigen::MatrixXd zc = select_rows(z.transpose(), cols);
        k.noalias() += ssm_scale(z) * zr * zc.transpose();
    }
    if (model.gaussian_amplitude > 0.0) {
        const double denom = model.gaussian_sigma * model.gaussian_sigma;
        const Points& ref = model.reference.points();
        for (Eigen::Index j = 0; j < nc; ++j) {
            for (Eigen::Index i = 0; i < nr; ++i) {
                const double d2 = (ref.row(static_cast<Eigen::Index>(rows[i])) - ref.row(static_cast<Eigen::Index>(cols[j]))).squaredNorm();
                const double g = model.gaussian_amplitude * std::exp(-d2 / denom);
                for (Eigen::Index a = 0; a < 3; ++a) k(3 * i + a, 3 * j + a) += g;
            }
        }
    }
    return k;
}

GpShapeModel build_gp_model(const std::vector<PointCloud>& aligned, const PointCloud& reference,
                            double gaussian_sigma, double gaussian_amplitude, std::size_t r, std::uint64_t seed) {
    if (aligned.empty()) throw InvalidArgument("at least one shape is required");
    if (reference.empty()) throw InvalidArgument("empty point set");
    if (!(gaussian_sigma > 0.0) || !std::isfinite(gaussian_sigma)) throw InvalidArgument("gaussian sigma must be positive");
    if (!(gaussian_amplitude >= 0.0) || !std::isfinite(gaussian_amplitude))
        throw InvalidArgument("gaussian amplitude must be non-negative");
    if (r == 0) throw InvalidArgument("model rank must be at least 1");
    for (const PointCloud& s : aligned) {
        if (s.size() != reference.size()) throw InvalidArgument("shape is not corresponded to the reference");
    }

    GpShapeModel model;
    model.reference = reference;
    model.gaussian_sigma = gaussian_sigma;
    model.gaussian_amplitude = gaussian_amplitude;

    const Eigen::VectorXd ref_flat = flatten(reference.points());
    Eigen::MatrixXd u = stack_shapes(aligned);
    u.rowwise() -= ref_flat.transpose();
    const Eigen::VectorXd mu = u.colwise().mean().transpose();
    model.mean_deformation = unflatten(mu);
    model.sample_deformations = u.rowwise() - mu.transpose();
    const Eigen::MatrixXd& z = model.sample_deformations;
    const double scale = ssm_scale(z);

    const Eigen::Index dim = ref_flat.size();
    const Eigen::Index want = std::min<Eigen::Index>(static_cast<Eigen::Index>(r), dim);
    EigenPairs eig;
    if (dim <= kDenseLimit || 4 * want >= dim) {
        std::vector<std::size_t> all(reference.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        eig = dense_top_eigenpairs(gp_kernel_matrix(model, all, all), want);
    } else {
        const Eigen::MatrixXd g = gaussian_kernel(reference.points(), gaussian_sigma * gaussian_sigma);
        auto op = [&](const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
            Eigen::MatrixXd y = Eigen::MatrixXd::Zero(dim, x.cols());
            if (scale > 0.0) y.noalias() += scale * (z.transpose() * (z * x));
            if (gaussian_amplitude > 0.0) y += gaussian_amplitude * apply_block_kernel(g, x);
            return y;
        };
        eig = randomized_top_eigenpairs(op, dim, want, seed, 1e-9, 60);
    }

    const double top = eig.values.size() > 0 ? eig.values(0) : 0.0;
    Eigen::Index keep = 0;
    while (keep < eig.values.size() && eig.values(keep) > 1e-12 * top && eig.values(keep) > 0.0) ++keep;
    if (keep == 0) throw InvalidArgument("kernel has no positive eigenvalues");
    model.eigenvalues = eig.values.head(keep);
    model.eigenvectors = eig.vectors.leftCols(keep);
    fix_signs(model.eigenvectors);
    return model;
}

GpCompletion gp_complete(const GpShapeModel& model, const PartialObservation& obs, bool exact_kernel) {
    obs.validate(model.point_count());
    GpCompletion out;
    if (obs.observed_indices.empty()) {
        out.shape = PointCloud(Points(model.reference.points() + model.mean_deformation));
        out.status = "prior mean";
        return out;
    }
    const double noise = obs.observation_noise.value_or(kGpDefaultNoise);
    const std::vector<std::size_t>& idx = obs.observed_indices;
    const Eigen::VectorXd mu = flatten(model.mean_deformation);
    const Eigen::VectorXd ref_b = select_entries(flatten(model.reference.points()), idx);
    const Eigen::VectorXd resid = flatten(obs.observed_positions) - ref_b - select_entries(mu, idx);

    Eigen::VectorXd u;
    if (exact_kernel) {
        std::vector<std::size_t> all(model.point_count());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        Eigen::MatrixXd kbb = gp_kernel_matrix(model, idx, idx);
        kbb.diagonal().array() += noise;
        Eigen::LLT<Eigen::MatrixXd> llt(kbb);
        if (llt.info() != Eigen::Success) throw Error("ill-conditioned completion");
        const Eigen::VectorXd weights = llt.solve(resid);
        u = mu + gp_kernel_matrix(model, all, idx) * weights;
    } else {
        const Eigen::MatrixXd lb = select_rows(model.eigenvectors, idx) * model.eigenvalues.cwiseSqrt().asDiagonal();
        Eigen::MatrixXd a = lb.transpose() * lb;
        a.diagonal().array() += noise;
        Eigen::LLT<Eigen::MatrixXd> llt(a);
        if (llt.info() != Eigen::Success) throw Error("ill-conditioned completion");
        out.alpha = llt.solve(lb.transpose() * resid);
        u = mu + model.eigenvectors * model.eigenvalues.cwiseSqrt().cwiseProduct(out.alpha);
    }
    if (!u.allFinite()) throw Error("ill-conditioned completion");
    out.shape = PointCloud(Points(model.reference.points() + unflatten(u)));
    out.status = "posterior mean";
    return out;
}

PointCloud deformed_template_completion(const BcpdResult& result) { return result.deformed_template; }

PointCloud deformed_template_completion(const CpdResult& result) { return result.deformed_template; }

}  // namespace shapefit
