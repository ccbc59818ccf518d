#include <gtest/gtest.h>

#include <numeric>

#include "shapefit/completion.hpp"
#include "shapefit/model_io.hpp"
#include "shapefit/random.hpp"
#include "shapefit/synthetic.hpp"
#include "support.hpp"

using namespace shapefit;
using shapefit::testing::TempDir;

namespace {

std::vector<PointCloud> family_sample(const SyntheticFamily& fam, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<PointCloud> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(fam.random_shape(rng));
    return out;
}

PartialObservation observe(const Points& shape, const std::vector<std::size_t>& idx, std::optional<double> noise) {
    PartialObservation obs;
    obs.observed_indices = idx;
    obs.observed_positions.resize(static_cast<Eigen::Index>(idx.size()), 3);
    for (std::size_t k = 0; k < idx.size(); ++k)
        obs.observed_positions.row(static_cast<Eigen::Index>(k)) = shape.row(static_cast<Eigen::Index>(idx[k]));
    obs.observation_noise = noise;
    return obs;
}

std::vector<std::size_t> random_subset(std::size_t n, double share, std::uint64_t seed) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(static_cast<std::size_t>(share * static_cast<double>(n)));
    std::sort(all.begin(), all.end());
    return all;
}

std::vector<std::size_t> complement(std::size_t n, const std::vector<std::size_t>& idx) {
    std::vector<bool> in(n, false);
    for (auto i : idx) in[i] = true;
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n; ++i)
        if (!in[i]) out.push_back(i);
    return out;
}

double max_point_error(const Points& a, const Points& b, const std::vector<std::size_t>& idx) {
    double e = 0.0;
    for (auto i : idx) e = std::max(e, (a.row(static_cast<Eigen::Index>(i)) - b.row(static_cast<Eigen::Index>(i))).norm());
    return e;
}

// Largest principal angle between the column spans, in radians.
double principal_angle(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qa(a), qb(b);
    Eigen::MatrixXd ua = qa.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols());
    Eigen::MatrixXd ub = qb.householderQ() * Eigen::MatrixXd::Identity(b.rows(), b.cols());
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(ua.transpose() * ub);
    return std::acos(std::min(1.0, svd.singularValues().minCoeff()));
}

// k_final on the reference, built entry by entry from its definition.
Eigen::MatrixXd kernel_oracle(const std::vector<PointCloud>& shapes, const PointCloud& ref, double sigma, double amp) {
    const Eigen::Index dim = 3 * static_cast<Eigen::Index>(ref.size());
    const double n = static_cast<double>(shapes.size());
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(dim);
    for (const auto& s : shapes) mu += flatten(s.points()) - flatten(ref.points());
    mu /= n;
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(dim, dim);
    for (const auto& s : shapes) {
        Eigen::VectorXd u = flatten(s.points()) - flatten(ref.points()) - mu;
        k += u * u.transpose();
    }
    if (shapes.size() > 1) k /= (n - 1.0);
    for (std::size_t i = 0; i < ref.size(); ++i)
        for (std::size_t j = 0; j < ref.size(); ++j) {
            double g = amp * std::exp(-(ref.point(i) - ref.point(j)).squaredNorm() / (sigma * sigma));
            for (int a = 0; a < 3; ++a) k(3 * static_cast<Eigen::Index>(i) + a, 3 * static_cast<Eigen::Index>(j) + a) += g;
        }
    return k;
}

}  // namespace

TEST(Flatten, PointMajorRoundTrip) {
    Points p(2, 3);
    p << 1, 2, 3, 4, 5, 6;
    Eigen::VectorXd v = flatten(p);
    EXPECT_EQ(v(3), 4.0);
    EXPECT_EQ(unflatten(v), p);
    EXPECT_THROW(unflatten(Eigen::VectorXd::Zero(4)), InvalidArgument);
}

TEST(PcaModel, TwoShapesGiveOneComponentAndMidpoint) {
    SyntheticFamily fam = make_ear_family(100);
    auto shapes = family_sample(fam, 2, 1);
    EXPECT_EQ(pca_available_components(shapes), 1u);
    PcaShapeModel m = build_pca_model(shapes, 1);
    Eigen::VectorXd mid = 0.5 * (flatten(shapes[0].points()) + flatten(shapes[1].points()));
    EXPECT_LT((m.mean - mid).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_THROW(build_pca_model(shapes, 2), InvalidArgument);
    EXPECT_THROW(build_pca_model({shapes[0]}, 1), InvalidArgument);
}

TEST(PcaModel, RecoversGeneratingSpan) {
    SyntheticFamily fam = make_ear_family(300, 2);
    Rng rng(2);
    std::normal_distribution<double> tiny(0.0, 1e-4);
    std::vector<PointCloud> shapes;
    for (int i = 0; i < 30; ++i) {
        PointCloud s = fam.random_shape(rng);
        for (Eigen::Index k = 0; k < s.points().size(); ++k) s.points().data()[k] += tiny(rng);
        shapes.push_back(s);
    }
    PcaShapeModel m = build_pca_model(shapes, 2);
    Eigen::MatrixXd gen(m.mean.size(), 2);
    gen.col(0) = flatten(fam.modes[0]);
    gen.col(1) = flatten(fam.modes[1]);
    EXPECT_LT(principal_angle(m.components, gen), 1.0 * std::numbers::pi / 180.0);
    EXPECT_NO_THROW(m.validate());
    EXPECT_GT(m.noise_sigma2, 0.0);
}

TEST(PcaModel, MoreComponentsNeverReconstructWorse) {
    SyntheticFamily fam = make_ear_family(200);
    auto shapes = family_sample(fam, 12, 3);
    PcaShapeModel full = build_pca_model(shapes, pca_available_components(shapes));
    for (const auto& s : shapes) {
        double prev = std::numeric_limits<double>::infinity();
        for (std::size_t d = 1; d <= full.rank(); ++d) {
            double res = (full.truncated(d).project(s.points()) - flatten(s.points())).norm();
            EXPECT_LE(res, prev + 1e-9);
            prev = res;
        }
    }
}

TEST(PcaModel, ComponentsOrthonormalAndSorted) {
    SyntheticFamily fam = make_ear_family(250);
    PcaShapeModel m = build_pca_model(family_sample(fam, 15, 4), 5);
    Eigen::MatrixXd gram = m.components.transpose() * m.components;
    EXPECT_LT((gram - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-8);
    for (Eigen::Index k = 1; k < 5; ++k) EXPECT_GE(m.eigenvalues(k - 1), m.eigenvalues(k));
}

TEST(Ppca, MeanObservationGivesZeroCoefficients) {
    SyntheticFamily fam = make_ear_family(200);
    PcaShapeModel m = build_pca_model(family_sample(fam, 10, 5), 5);
    std::vector<std::size_t> all(200);
    std::iota(all.begin(), all.end(), std::size_t{0});
    PpcaCompletion c = ppca_complete(m, observe(unflatten(m.mean), all, std::nullopt));
    EXPECT_LT(c.alpha.cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((c.shape - m.mean).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Ppca, RecoversSyntheticCoefficients) {
    SyntheticFamily fam = make_ear_family(400);
    PcaShapeModel m = build_pca_model(family_sample(fam, 20, 6), 5);
    Eigen::VectorXd alpha(5);
    alpha << 3.0, -2.0, 1.5, 0.5, -1.0;
    Eigen::VectorXd truth = m.mean + m.components * alpha;
    auto idx = random_subset(400, 0.6, 7);
    PpcaCompletion c = ppca_complete(m, observe(unflatten(truth), idx, 1e-12));
    EXPECT_LT((c.alpha - alpha).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT(max_point_error(c.cloud().points(), unflatten(truth), complement(400, idx)), 1e-6);
}

TEST(Ppca, FullCoverageConvergesToProjection) {
    SyntheticFamily fam = make_ear_family(300);
    auto shapes = family_sample(fam, 15, 8);
    PcaShapeModel m = build_pca_model(shapes, 4);
    Rng rng(9);
    PointCloud target = fam.random_shape(rng);
    std::vector<std::size_t> all(300);
    std::iota(all.begin(), all.end(), std::size_t{0});
    PpcaCompletion c = ppca_complete(m, observe(target.points(), all, 1e-12));
    EXPECT_LT((c.shape - m.project(target.points())).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Ppca, MoreObservationsNeverRaiseCovarianceTrace) {
    SyntheticFamily fam = make_ear_family(300);
    PcaShapeModel m = build_pca_model(family_sample(fam, 15, 10), 5);
    Rng rng(11);
    PointCloud target = fam.random_shape(rng);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<std::size_t> order(300);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double prev = std::numeric_limits<double>::infinity();
        for (std::size_t k : {1, 3, 10, 30, 100, 300}) {
            std::vector<std::size_t> idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
            std::sort(idx.begin(), idx.end());
            double tr = ppca_complete(m, observe(target.points(), idx, 0.5)).alpha_covariance.trace();
            EXPECT_LE(tr, prev + 1e-12);
            prev = tr;
        }
    }
}

TEST(Ppca, SingularSystemThrows) {
    SyntheticFamily fam = make_ear_family(100);
    PcaShapeModel m = build_pca_model(family_sample(fam, 10, 12), 5);
    try {
        ppca_complete(m, observe(unflatten(m.mean), {4}, 0.0));
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "ill-conditioned completion");
    }
}

TEST(Ppca, ObservationValidation) {
    SyntheticFamily fam = make_ear_family(50);
    PcaShapeModel m = build_pca_model(family_sample(fam, 5, 13), 2);
    EXPECT_THROW(ppca_complete(m, observe(unflatten(m.mean), {}, std::nullopt)), InvalidArgument);
    auto dup = observe(unflatten(m.mean), {1, 2}, std::nullopt);
    dup.observed_indices = {1, 1};
    EXPECT_THROW(ppca_complete(m, dup), InvalidArgument);
    auto out = observe(unflatten(m.mean), {1}, std::nullopt);
    out.observed_indices = {50};
    EXPECT_THROW(ppca_complete(m, out), InvalidArgument);
}

TEST(GpModel, EigenvaluesMatchDenseKernelOracle) {
    SyntheticFamily fam = make_ear_family(100);
    auto shapes = family_sample(fam, 8, 14);
    PointCloud ref(fam.mean);
    GpShapeModel m = build_gp_model(shapes, ref, 7.0, 1.0, 10);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(kernel_oracle(shapes, ref, 7.0, 1.0));
    Eigen::VectorXd top = es.eigenvalues().reverse().head(10);
    EXPECT_LT((m.eigenvalues - top).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(GpModel, KernelMatrixMatchesOracle) {
    SyntheticFamily fam = make_ear_family(60);
    auto shapes = family_sample(fam, 6, 15);
    PointCloud ref(fam.mean);
    GpShapeModel m = build_gp_model(shapes, ref, 5.0, 2.0, 5);
    std::vector<std::size_t> all(60);
    std::iota(all.begin(), all.end(), std::size_t{0});
    EXPECT_LT((gp_kernel_matrix(m, all, all) - kernel_oracle(shapes, ref, 5.0, 2.0)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(GpModel, RandomizedPathMatchesDense) {
    SyntheticFamily fam = make_ear_family(600);
    auto shapes = family_sample(fam, 10, 16);
    PointCloud ref(fam.mean);
    GpShapeModel m = build_gp_model(shapes, ref, 7.0, 1.0, 20, 5);
    std::vector<std::size_t> all(600);
    std::iota(all.begin(), all.end(), std::size_t{0});
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gp_kernel_matrix(m, all, all));
    Eigen::VectorXd top = es.eigenvalues().reverse().head(20);
    EXPECT_LT(((m.eigenvalues - top).array() / top.array()).abs().maxCoeff(), 1e-6);
}

TEST(GpModel, ZeroAmplitudeSpansSampleDeformations) {
    SyntheticFamily fam = make_ear_family(150);
    auto shapes = family_sample(fam, 7, 17);
    PointCloud ref(fam.mean);
    GpShapeModel gp = build_gp_model(shapes, ref, 7.0, 0.0, 5);
    PcaShapeModel pca = build_pca_model(shapes, 5);
    ASSERT_EQ(gp.rank(), 5u);
    EXPECT_LT(principal_angle(gp.eigenvectors, pca.components), 1e-6);
    EXPECT_LT((gp.eigenvalues - pca.eigenvalues).cwiseAbs().maxCoeff(), 1e-8 * pca.eigenvalues(0));
}

TEST(GpModel, SingleReferenceShapeIsPureGaussianKernel) {
    SyntheticFamily fam = make_ear_family(80);
    PointCloud ref(fam.mean);
    GpShapeModel m = build_gp_model({ref}, ref, 6.0, 1.5, 12);
    EXPECT_TRUE(m.mean_deformation.isZero(0.0));
    std::vector<std::size_t> all(80);
    std::iota(all.begin(), all.end(), std::size_t{0});
    EXPECT_LT((gp_kernel_matrix(m, all, all) - kernel_oracle({ref}, ref, 6.0, 1.5)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GpModel, GramMatricesArePsdOnSubsets) {
    SyntheticFamily fam = make_ear_family(400);
    GpShapeModel m = build_gp_model(family_sample(fam, 10, 18), PointCloud(fam.mean), 7.0, 1.0, 10);
    for (int trial = 0; trial < 5; ++trial) {
        auto idx = random_subset(400, 0.5, 100 + trial);  // 200 points
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gp_kernel_matrix(m, idx, idx));
        EXPECT_GT(es.eigenvalues().minCoeff(), -1e-8);
    }
}

TEST(GpModel, RejectsBadHyperparameters) {
    SyntheticFamily fam = make_ear_family(30);
    PointCloud ref(fam.mean);
    EXPECT_THROW(build_gp_model({ref}, ref, 0.0, 1.0, 3), InvalidArgument);
    EXPECT_THROW(build_gp_model({ref}, ref, 1.0, -1.0, 3), InvalidArgument);
    EXPECT_THROW(build_gp_model({ref}, ref, 1.0, 1.0, 0), InvalidArgument);
    EXPECT_THROW(build_gp_model({ref}, ref, 1.0, 0.0, 3), InvalidArgument);
}

TEST(GpComplete, ZeroObservationsGivePriorMean) {
    SyntheticFamily fam = make_ear_family(100);
    PointCloud ref(fam.mean);
    GpShapeModel m = build_gp_model(family_sample(fam, 5, 19), ref, 7.0, 1.0, 10);
    GpCompletion c = gp_complete(m, observe(ref.points(), {}, std::nullopt));
    EXPECT_EQ(c.status, "prior mean");
    EXPECT_EQ(c.shape.points(), Points(ref.points() + m.mean_deformation));
}

TEST(GpComplete, PriorConsistentDataIsReproduced) {
    SyntheticFamily fam = make_ear_family(120);
    PointCloud ref(fam.mean);
    GpShapeModel m = build_gp_model(family_sample(fam, 6, 20), ref, 7.0, 1.0, 30);
    Points prior = ref.points() + m.mean_deformation;
    auto idx = random_subset(120, 0.7, 21);
    for (bool exact : {false, true}) {
        GpCompletion c = gp_complete(m, observe(prior, idx, 1e-10), exact);
        EXPECT_EQ(c.status, "posterior mean");
        EXPECT_LT((c.shape.points() - prior).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(GpComplete, ExactKernelInterpolatesObservations) {
    SyntheticFamily fam = make_ear_family(100);
    PointCloud ref(fam.mean);
    GpShapeModel m = build_gp_model(family_sample(fam, 6, 22), ref, 7.0, 1.0, 10);
    Rng rng(23);
    PointCloud other = fam.random_shape(rng);
    auto idx = random_subset(100, 0.5, 24);
    GpCompletion c = gp_complete(m, observe(other.points(), idx, 1e-12), true);
    EXPECT_LT(max_point_error(c.shape.points(), other.points(), idx), 1e-6);
}

TEST(GpComplete, RecoversModelDraw) {
    SyntheticFamily fam = make_ear_family(300);
    PointCloud ref(fam.mean);
    GpShapeModel m = build_gp_model(family_sample(fam, 10, 25), ref, 7.0, 1.0, 60);
    Rng rng(26);
    std::normal_distribution<double> z(0.0, 1.0);
    Eigen::VectorXd alpha(static_cast<Eigen::Index>(m.rank()));
    for (Eigen::Index k = 0; k < alpha.size(); ++k) alpha(k) = z(rng);
    Points truth = m.instance(alpha).points();
    auto idx = random_subset(300, 0.7, 27);
    GpCompletion c = gp_complete(m, observe(truth, idx, 1e-10));
    EXPECT_LT(max_point_error(c.shape.points(), truth, complement(300, idx)), 1e-4 * shape_diameter(truth));
}

TEST(DeformedTemplate, ReturnsRegistrationOutputVerbatim) {
    SyntheticFamily fam = make_ear_family(80);
    PointCloud t(fam.mean);
    BcpdResult r = bcpd(t, t, BcpdParams{});
    PointCloud c = deformed_template_completion(r);
    EXPECT_EQ(c.size(), t.size());
    EXPECT_EQ(c.points(), r.deformed_template.points());
    EXPECT_LT((c.points() - t.points()).cwiseAbs().maxCoeff(), 1e-2);
}

TEST(ModelIo, PcaRoundTrip) {
    TempDir dir("pca");
    SyntheticFamily fam = make_ear_family(90);
    PcaShapeModel m = build_pca_model(family_sample(fam, 8, 28), 4);
    io::save_pca_model(dir / "m.sfm", m);
    EXPECT_TRUE(std::filesystem::exists(io::sidecar_path(dir / "m.sfm")));
    EXPECT_EQ(shapefit::testing::read_file(dir / "m.sfm").substr(0, 8), "SFMODEL1");
    PcaShapeModel b = io::load_pca_model(dir / "m.sfm");
    EXPECT_EQ(b.mean, m.mean);
    EXPECT_EQ(b.components, m.components);
    EXPECT_EQ(b.eigenvalues, m.eigenvalues);
    EXPECT_EQ(b.noise_sigma2, m.noise_sigma2);
    EXPECT_EQ(b.point_count, m.point_count);
    EXPECT_THROW(io::load_gp_model(dir / "m.sfm"), IoError);
}

TEST(ModelIo, GpRoundTrip) {
    TempDir dir("gp");
    SyntheticFamily fam = make_ear_family(90);
    GpShapeModel m = build_gp_model(family_sample(fam, 8, 29), PointCloud(fam.mean), 6.0, 1.0, 12);
    io::save_gp_model(dir / "g.sfm", m);
    GpShapeModel b = io::load_gp_model(dir / "g.sfm");
    EXPECT_EQ(b.reference.points(), m.reference.points());
    EXPECT_EQ(b.mean_deformation, m.mean_deformation);
    EXPECT_EQ(b.eigenvectors, m.eigenvectors);
    EXPECT_EQ(b.eigenvalues, m.eigenvalues);
    EXPECT_EQ(b.sample_deformations, m.sample_deformations);
    EXPECT_EQ(b.gaussian_sigma, 6.0);
    EXPECT_EQ(b.gaussian_amplitude, 1.0);
}

TEST(ModelIo, RejectsCorruptContainers) {
    TempDir dir("bad");
    std::ofstream(dir / "x.sfm", std::ios::binary) << "SFMODEL2garbage";
    EXPECT_THROW(io::load_pca_model(dir / "x.sfm"), IoError);
    SyntheticFamily fam = make_ear_family(40);
    io::save_pca_model(dir / "t.sfm", build_pca_model(family_sample(fam, 4, 30), 2));
    std::string bytes = shapefit::testing::read_file(dir / "t.sfm");
    std::ofstream(dir / "t.sfm", std::ios::binary) << bytes.substr(0, bytes.size() - 9);
    EXPECT_THROW(io::load_pca_model(dir / "t.sfm"), IoError);
    EXPECT_THROW(io::load_pca_model(dir / "none.sfm"), IoError);
}
