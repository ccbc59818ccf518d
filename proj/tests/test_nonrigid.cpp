#include <gtest/gtest.h>

#include <numbers>

#include "shapefit/nonrigid.hpp"
#include "shapefit/random.hpp"
#include "shapefit/synthetic.hpp"
#include "support.hpp"

using namespace shapefit;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

const SyntheticFamily& family() {
    static const SyntheticFamily f = make_ear_family(200);
    return f;
}

// Responsibilities of the stated mixture evaluated term by term.
Eigen::MatrixXd mixture_oracle(const Points& y, const Points& x, double w, Eigen::VectorXd& outlier) {
    const double m = static_cast<double>(y.rows()), n = static_cast<double>(x.rows());
    double s2 = 0.0;
    for (Eigen::Index i = 0; i < y.rows(); ++i)
        for (Eigen::Index j = 0; j < x.rows(); ++j) s2 += (x.row(j) - y.row(i)).squaredNorm();
    s2 /= 3.0 * m * n;
    const double norm = std::pow(2.0 * std::numbers::pi * s2, -1.5);
    Eigen::MatrixXd p(y.rows(), x.rows());
    outlier.resize(x.rows());
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
        double px = w / n;
        Eigen::VectorXd terms(y.rows());
        for (Eigen::Index i = 0; i < y.rows(); ++i) {
            terms(i) = (1.0 - w) / m * norm * std::exp(-(x.row(j) - y.row(i)).squaredNorm() / (2.0 * s2));
            px += terms(i);
        }
        p.col(j) = terms / px;
        outlier(j) = (w / n) / px;
    }
    return p;
}

CorrespondenceMap rule_oracle(const Eigen::MatrixXd& p, double miss, double out) {
    CorrespondenceMap map;
    map.assignments.resize(static_cast<std::size_t>(p.rows()));
    for (Eigen::Index m = 0; m < p.rows(); ++m) {
        Eigen::Index best = 0;
        for (Eigen::Index n = 1; n < p.cols(); ++n)
            if (p(m, n) > p(m, best)) best = n;
        if (p(m, best) >= miss) map.assignments[static_cast<std::size_t>(m)] = static_cast<std::size_t>(best);
    }
    auto used = map.assigned_targets();
    for (Eigen::Index n = 0; n < p.cols(); ++n)
        if (p.col(n).sum() < out && !used.count(static_cast<std::size_t>(n))) map.outlier_targets.insert(static_cast<std::size_t>(n));
    return map;
}

}  // namespace

TEST(Cpd, OneIterationMatchesMixtureOracle) {
    Points y(3, 3), x(3, 3);
    y << 0, 0, 0, 1, 0, 0, 0, 1, 0;
    x << 0.1, 0, 0, 1, 0.2, 0, 0, 0.9, 0.3;
    CpdParams p;
    p.max_iterations = 1;
    p.low_rank_terms = 0;
    CpdResult r = cpd_nonrigid(PointCloud(y), PointCloud(x), p);
    Eigen::VectorXd out;
    Eigen::MatrixXd oracle = mixture_oracle(y, x, p.w, out);
    EXPECT_LT((r.posterior - oracle).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((r.outlier_posterior - out).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Cpd, SelfRegistrationStaysPut) {
    PointCloud t(family().mean);
    CpdResult r = cpd_nonrigid(t, t, CpdParams{});
    EXPECT_LT((r.deformed_template.points() - t.points()).rowwise().norm().maxCoeff(), 1e-3);
    for (Eigen::Index m = 0; m < r.posterior.rows(); ++m) {
        Eigen::Index arg;
        r.posterior.row(m).maxCoeff(&arg);
        EXPECT_EQ(arg, m);
    }
}

TEST(Cpd, ResponsibilitiesNormalizeEveryIteration) {
    Rng rng(2);
    PointCloud target(family().random_shape(rng).points().array() + 1.0);
    CpdResult r = cpd_nonrigid(PointCloud(family().mean), target, CpdParams{});
    for (const auto& h : r.history) EXPECT_LT(h.normalization_error, 1e-9);
    EXPECT_GE(r.posterior.minCoeff(), 0.0);
    EXPECT_LE(r.posterior.maxCoeff(), 1.0);
}

TEST(Cpd, ObjectiveIsNonIncreasing) {
    for (std::size_t terms : {std::size_t{0}, std::size_t{100}}) {
        Rng rng(4);
        PointCloud target = family().random_shape(rng);
        CpdParams p;
        p.low_rank_terms = terms;
        CpdResult r = cpd_nonrigid(PointCloud(family().mean), target, p);
        for (std::size_t i = 1; i < r.history.size(); ++i)
            EXPECT_LE(r.history[i].objective, r.history[i - 1].objective + 1e-8) << "terms " << terms << " it " << i;
    }
}

TEST(Cpd, ParamsValidate) {
    CpdParams p;
    p.w = 1.0;
    EXPECT_THROW(p.validate(), InvalidArgument);
    p = {};
    p.beta = 0;
    EXPECT_THROW(p.validate(), InvalidArgument);
    p = {};
    p.missing_threshold = 1.5;
    EXPECT_THROW(p.validate(), InvalidArgument);
}

TEST(Bcpd, SelfRegistration) {
    PointCloud t(family().mean);
    BcpdResult r = bcpd(t, t, BcpdParams{});
    EXPECT_LT((r.deformed_template.points() - t.points()).rowwise().norm().maxCoeff(), 1e-3);
    // Early iterations shrink s and the displacement field keeps the difference.
    EXPECT_NEAR(r.similarity.scale, 1.0, 1e-2);
    EXPECT_LT(rotation_angle_between(r.similarity.rotation, Mat3::Identity()), 1e-3);
    EXPECT_LT(r.similarity.translation.norm(), 0.1);
    EXPECT_LT(r.displacements.rowwise().norm().maxCoeff(), 0.5);
    EXPECT_GT(static_cast<double>(r.correspondences.assigned_count()), 0.95 * static_cast<double>(t.size()));
}

TEST(Bcpd, RecoversPureScaling) {
    PointCloud t(family().mean);
    PointCloud target(Points(1.2 * t.points()));
    BcpdParams p;
    p.lambda = 1000.0;
    BcpdResult r = bcpd(t, target, p);
    EXPECT_NEAR(r.similarity.scale, 1.2, 1e-2);
    EXPECT_LT(r.displacements.rowwise().norm().maxCoeff(), 1e-2 * shape_diameter(t.points()));
}

TEST(Bcpd, StoredPartsReassembleExactly) {
    Rng rng(6);
    PointCloud target = family().random_shape(rng);
    PointCloud t(family().mean);
    BcpdResult r = bcpd(t, target, BcpdParams{});
    EXPECT_EQ(r.reassemble(t.points()), r.deformed_template.points());
}

TEST(Bcpd, RotationStaysProperEveryIteration) {
    Rng rng(7);
    RigidTransform tf;
    tf.rotation = axis_angle(Vec3(1, 2, 3).normalized(), 25 * kDeg);
    PointCloud target = apply_transform(family().random_shape(rng), tf);
    BcpdResult r = bcpd(PointCloud(family().mean), target, BcpdParams{});
    ASSERT_FALSE(r.history.empty());
    for (const auto& h : r.history) {
        EXPECT_LT(h.rotation_orthonormality_error, 1e-8);
        EXPECT_NEAR(h.rotation_determinant, 1.0, 1e-8);
        EXPECT_LT(h.normalization_error, 1e-9);
    }
}

TEST(Bcpd, TranslationEquivariance) {
    Rng rng(8);
    PointCloud target = family().random_shape(rng);
    PointCloud t(family().mean);
    const Vec3 d(3.0, -7.0, 12.0);
    PointCloud shifted(Points(target.points().rowwise() + d.transpose()));
    BcpdParams p;
    p.seed = 3;
    BcpdResult a = bcpd(t, target, p), b = bcpd(t, shifted, p);
    EXPECT_LT((b.similarity.translation - a.similarity.translation - d).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((b.displacements - a.displacements).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Bcpd, FullRankLowRankMatchesExact) {
    Rng rng(9);
    PointCloud target = family().random_shape(rng);
    PointCloud t(family().mean);
    BcpdParams exact;
    exact.low_rank_terms = 0;
    BcpdParams low = exact;
    low.low_rank_terms = t.size();
    BcpdResult a = bcpd(t, target, exact), b = bcpd(t, target, low);
    EXPECT_LT((a.deformed_template.points() - b.deformed_template.points()).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((a.correspondence_probabilities - b.correspondence_probabilities).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Bcpd, SharedBasisIsChecked) {
    PointCloud t(family().mean);
    KernelBasis basis = make_kernel_basis(t.points(), 3.0, 20);
    BcpdParams p;
    p.beta = 4.0;
    p.low_rank_terms = 20;
    EXPECT_THROW(bcpd(t, t, p, &basis), InvalidArgument);
}

TEST(KernelBasis, LeadingPairsOfDenseKernel) {
    Points y = family().mean.topRows(80);
    KernelBasis b = make_kernel_basis(y, 5.0, 10);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(coherence_kernel(y, 5.0));
    Eigen::VectorXd top = es.eigenvalues().reverse().head(10);
    EXPECT_LT((b.values - top).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((b.vectors.transpose() * b.vectors - Eigen::MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(ExtractCorrespondences, IdentityPermutation) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Identity(4, 4);
    auto map = extract_correspondences(p, 0.5, 0.3);
    for (std::size_t m = 0; m < 4; ++m) EXPECT_EQ(*map.assignments[m], m);
    EXPECT_TRUE(map.outlier_targets.empty());
}

TEST(ExtractCorrespondences, WeakRowIsMissing) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Identity(3, 3);
    p.row(1).setConstant(0.2);
    auto map = extract_correspondences(p, 0.5, 0.3);
    EXPECT_FALSE(map.assignments[1].has_value());
    EXPECT_EQ(map.missing_templates(), std::vector<std::size_t>{1});
}

TEST(ExtractCorrespondences, RandomMatricesMatchRuleOracle) {
    Rng rng(10);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        Eigen::MatrixXd p(5, 6);
        for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng) * u(rng);
        auto map = extract_correspondences(p, 0.5, 0.3);
        auto oracle = rule_oracle(p, 0.5, 0.3);
        EXPECT_EQ(map.assignments, oracle.assignments);
        EXPECT_EQ(map.outlier_targets, oracle.outlier_targets);
    }
}

TEST(ExtractCorrespondences, ThresholdsOutsideUnitIntervalThrow) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Identity(2, 2);
    EXPECT_THROW(extract_correspondences(p, 1.2, 0.3), InvalidArgument);
    EXPECT_THROW(extract_correspondences(p, 0.5, -0.1), InvalidArgument);
}
