#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <cstring>
#include <numeric>

#include "shapefit/corruption.hpp"
#include "shapefit/synthetic.hpp"
#include "support.hpp"

using namespace shapefit;
using shapefit::testing::random_points;
using shapefit::testing::TempDir;

namespace {

PointCloud grid_cloud(std::size_t n, std::uint64_t seed) { return PointCloud(random_points(n, seed)); }

bool same_bits(const Points& a, const Points& b) {
    return a.rows() == b.rows() && std::memcmp(a.data(), b.data(), sizeof(double) * 3 * a.rows()) == 0;
}

// Two-sample chi-square statistic over per-point removal counts.
double chi_square_two_sample(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] + b[i] > 0) s += (a[i] - b[i]) * (a[i] - b[i]) / (a[i] + b[i]);
    return s;
}

CorruptionConfig ear_config(const SyntheticFamily& fam, std::uint64_t seed) {
    CorruptionConfig c;
    c.missing_region = fam.missing_region();
    c.outlier_region = fam.outlier_region();
    c.seed = seed;
    return c;
}

}  // namespace

TEST(RatioCount, RoundsHalfUp) {
    EXPECT_EQ(ratio_count(0.2, 7111), 1422u);
    EXPECT_EQ(ratio_count(0.5, 3), 2u);
    EXPECT_EQ(ratio_count(0.25, 6), 2u);
    EXPECT_EQ(ratio_count(0.0, 100), 0u);
    EXPECT_EQ(ratio_count(1.0, 100), 100u);
}

TEST(RemoveUniform, ZeroRatioIsIdentity) {
    PointCloud c = grid_cloud(100, 1);
    auto r = remove_uniform(c, 0.0, 5);
    EXPECT_TRUE(r.removed.empty());
    EXPECT_EQ(r.cloud.points(), c.points());
}

TEST(RemoveUniform, FullRatioEmptiesCloud) {
    auto r = remove_uniform(grid_cloud(100, 2), 1.0, 5);
    EXPECT_EQ(r.cloud.size(), 0u);
    EXPECT_EQ(r.removed.size(), 100u);
}

TEST(RemoveUniform, TemplateSizedCount) {
    auto r = remove_uniform(grid_cloud(7111, 3), 0.2, 9);
    EXPECT_EQ(r.removed.size(), 1422u);
    EXPECT_EQ(r.kept.size() + r.removed.size(), 7111u);
    EXPECT_TRUE(std::is_sorted(r.removed.begin(), r.removed.end()));
}

TEST(RemoveUniform, RejectsBadRatio) {
    EXPECT_THROW(remove_uniform(grid_cloud(10, 4), 1.5, 0), InvalidArgument);
    EXPECT_THROW(remove_uniform(grid_cloud(10, 4), -0.1, 0), InvalidArgument);
}

TEST(RemoveStructured, RemovesOnlyInsideRegion) {
    Points p = random_points(300, 5);
    PointCloud c(p);
    RegionSpec region = RegionSpec::from_indices([] {
        std::vector<std::size_t> v;
        for (std::size_t i = 100; i < 200; ++i) v.push_back(i);
        return v;
    }());
    auto r = remove_structured(c, 0.8, region, 11);
    EXPECT_EQ(r.removed.size(), 80u);
    for (auto i : r.removed) {
        EXPECT_GE(i, 100u);
        EXPECT_LT(i, 200u);
    }
    EXPECT_TRUE(remove_structured(c, 0.0, region, 11).removed.empty());
}

TEST(RemoveStructured, SphereRegionSelectsByDistance) {
    PointCloud c = grid_cloud(500, 6);
    RegionSpec s = RegionSpec::sphere(Vec3::Zero(), 5.0);
    auto inside = s.select(c);
    auto r = remove_structured(c, 0.5, s, 1);
    EXPECT_EQ(r.removed.size(), ratio_count(0.5, inside.size()));
    for (auto i : r.removed) EXPECT_LE(c.point(i).norm(), 5.0);
}

TEST(RemoveStructured, EmptyRegionThrows) {
    PointCloud c = grid_cloud(50, 7);
    try {
        remove_structured(c, 0.5, RegionSpec::sphere(Vec3(100, 100, 100), 1.0), 0);
        FAIL();
    } catch (const InvalidArgument& e) {
        EXPECT_STREQ(e.what(), "region selects no points");
    }
}

TEST(RemoveStructured, WholeCloudRegionMatchesUniformDistribution) {
    const std::size_t n = 50;
    PointCloud c = grid_cloud(n, 8);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    RegionSpec whole = RegionSpec::from_indices(all);
    std::vector<double> cu(n, 0.0), cs(n, 0.0);
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        for (auto i : remove_uniform(c, 0.3, seed).removed) cu[i] += 1;
        for (auto i : remove_structured(c, 0.3, whole, seed + 100000).removed) cs[i] += 1;
    }
    const double stat = chi_square_two_sample(cu, cs);
    const double crit = boost::math::quantile(boost::math::chi_squared(static_cast<double>(n - 1)), 0.999);
    EXPECT_LT(stat, crit);
    double total = 0;
    for (double v : cs) total += v;
    EXPECT_EQ(total, 1000.0 * 15);
}

TEST(UniformOutliers, CountAndContainment) {
    PointCloud c = grid_cloud(1000, 9);
    auto r = add_uniform_outliers(c, 0.1, 3);
    ASSERT_EQ(r.outlier_indices.size(), 100u);
    BoundingBox box = bounding_box(c);
    for (auto i : r.outlier_indices) {
        EXPECT_GE(i, 1000u);
        EXPECT_TRUE(box.contains(r.cloud.point(i)));
    }
    EXPECT_EQ(r.cloud.points().topRows(1000), c.points());
    EXPECT_EQ(add_uniform_outliers(c, 0.0, 3).cloud.size(), 1000u);
}

TEST(UniformOutliers, MeanApproachesBoxCenter) {
    Points p(2, 3);
    p << 0, 0, 0, 2, 4, 6;
    PointCloud c(p);
    auto r = add_uniform_outliers(c, 50000.0, 4);  // 10^5 points
    ASSERT_EQ(r.outlier_indices.size(), 100000u);
    Points extra = r.cloud.points().bottomRows(100000);
    Vec3 ext(2, 4, 6);
    for (int a = 0; a < 3; ++a) {
        double mean = extra.col(a).mean();
        double se = ext(a) / std::sqrt(12.0) / std::sqrt(100000.0);
        EXPECT_LT(std::abs(mean - ext(a) / 2), 3 * se);
    }
}

TEST(StructuredOutliers, SamplesInsideRegion) {
    PointCloud c = grid_cloud(2000, 10);
    RegionSpec s = RegionSpec::sphere(Vec3(1, 1, 1), 6.0);
    RegionSpec b = RegionSpec::box(Vec3(-5, -5, -5), Vec3(0, 2, 4));
    auto ns = s.select(c).size(), nb = b.select(c).size();
    auto rs = add_structured_outliers(c, 0.4, s, 5);
    auto rb = add_structured_outliers(c, 0.4, b, 5);
    EXPECT_EQ(rs.outlier_indices.size(), ratio_count(0.4, ns));
    EXPECT_EQ(rb.outlier_indices.size(), ratio_count(0.4, nb));
    for (auto i : rs.outlier_indices) EXPECT_LE((rs.cloud.point(i) - Vec3(1, 1, 1)).norm(), 6.0);
    BoundingBox box{Vec3(-5, -5, -5), Vec3(0, 2, 4)};
    for (auto i : rb.outlier_indices) EXPECT_TRUE(box.contains(rb.cloud.point(i)));
    EXPECT_EQ(add_structured_outliers(c, 0.0, s, 5).cloud.size(), 2000u);
}

TEST(StructuredOutliers, ContainmentOnManySamples) {
    PointCloud c = grid_cloud(100, 11);
    RegionSpec s = RegionSpec::sphere(Vec3::Zero(), 20.0);
    auto r = add_structured_outliers(c, 100.0, s, 6);  // 10^4 points
    ASSERT_EQ(r.outlier_indices.size(), 10000u);
    for (auto i : r.outlier_indices) ASSERT_LE(r.cloud.point(i).norm(), 20.0);
}

TEST(Noise, ZeroSigmaIsIdentity) {
    PointCloud c = grid_cloud(100, 12);
    auto r = add_noise(c, 0.0, 1);
    EXPECT_EQ(r.cloud.points(), c.points());
    EXPECT_TRUE(r.displacements.isZero(0.0));
}

TEST(Noise, MomentsMatchSigma) {
    PointCloud c(Points::Zero(100000, 3));
    auto r = add_noise(c, 1.0, 2);
    for (int a = 0; a < 3; ++a) {
        Eigen::VectorXd d = r.displacements.col(a);
        double mean = d.mean();
        double var = (d.array() - mean).square().sum() / (d.size() - 1);
        EXPECT_LT(std::abs(mean), 0.02);
        EXPECT_LT(std::abs(var - 1.0), 0.05);
    }
}

TEST(Corrupt, NoneConfigIsIdentity) {
    PointCloud c = grid_cloud(300, 13);
    auto r = corrupt(c, CorruptionConfig::none());
    EXPECT_EQ(r.cloud.points(), c.points());
    EXPECT_TRUE(r.ground_truth.removed_indices.empty());
    EXPECT_EQ(r.ground_truth.outlier_count(), 0u);
    for (std::size_t i = 0; i < 300; ++i) EXPECT_EQ(r.ground_truth.kept_original_index[i], static_cast<std::int64_t>(i));
}

TEST(Corrupt, DefaultOnTemplateSizedShapeAccounts) {
    SyntheticFamily fam = make_ear_family(7111);
    PointCloud clean(fam.mean);
    auto r = corrupt(clean, ear_config(fam, 3));
    const auto& gt = r.ground_truth;
    EXPECT_EQ(gt.kept_count() + gt.removed_indices.size(), 7111u);
    EXPECT_NO_THROW(gt.validate());
    for (std::size_t j = 0; j < gt.kept_original_index.size(); ++j) {
        if (gt.is_outlier(j)) EXPECT_GE(j, gt.kept_count());
    }
    const std::size_t in_missing = fam.missing_region().select(clean).size();
    const std::size_t in_outlier = fam.outlier_region().select(clean).size();
    EXPECT_EQ(gt.removed_indices.size(), ratio_count(0.8, in_missing) + ratio_count(0.2, 7111));
    EXPECT_EQ(gt.outlier_count(), ratio_count(0.4, in_outlier) + ratio_count(0.1, 7111));
}

TEST(Corrupt, SameSeedIsBitIdentical) {
    SyntheticFamily fam = make_ear_family(2000);
    PointCloud clean(fam.mean);
    auto a = corrupt(clean, ear_config(fam, 42));
    auto b = corrupt(clean, ear_config(fam, 42));
    auto c = corrupt(clean, ear_config(fam, 43));
    EXPECT_TRUE(same_bits(a.cloud.points(), b.cloud.points()));
    EXPECT_EQ(a.ground_truth.kept_original_index, b.ground_truth.kept_original_index);
    EXPECT_TRUE(same_bits(a.ground_truth.noise_displacements, b.ground_truth.noise_displacements));
    EXPECT_FALSE(same_bits(a.cloud.points(), c.cloud.points()));
}

TEST(Corrupt, KeptPointsAreCleanPlusNoiseExactly) {
    SyntheticFamily fam = make_ear_family(1500);
    PointCloud clean(fam.mean);
    auto r = corrupt(clean, ear_config(fam, 7));
    const auto& gt = r.ground_truth;
    for (std::size_t j = 0; j < gt.kept_count(); ++j) {
        auto o = static_cast<Eigen::Index>(gt.kept_original_index[j]);
        auto row = static_cast<Eigen::Index>(j);
        for (int a = 0; a < 3; ++a)
            ASSERT_EQ(clean.points()(o, a) + gt.noise_displacements(row, a), r.cloud.points()(row, a));
    }
}

TEST(Corrupt, RequiresRegionsForStructuredRatios) {
    PointCloud c = grid_cloud(100, 14);
    CorruptionConfig cfg;
    EXPECT_THROW(corrupt(c, cfg), InvalidArgument);
    cfg.structured_missing_ratio = 0.0;
    cfg.structured_outlier_ratio = 0.0;
    EXPECT_NO_THROW(corrupt(c, cfg));
    cfg.noise_sigma = -1.0;
    EXPECT_THROW(corrupt(c, cfg), InvalidArgument);
}

TEST(Corrupt, GroundTruthFilesRoundTrip) {
    TempDir dir("gt");
    SyntheticFamily fam = make_ear_family(800);
    auto r = corrupt(PointCloud(fam.mean), ear_config(fam, 5));
    write_ground_truth(dir / "s", r.ground_truth);
    auto back = read_ground_truth(dir / "s");
    EXPECT_EQ(back.kept_original_index, r.ground_truth.kept_original_index);
    EXPECT_EQ(back.removed_indices, r.ground_truth.removed_indices);
    EXPECT_TRUE(same_bits(back.noise_displacements, r.ground_truth.noise_displacements));
    EXPECT_EQ(back.original_count, 800u);
}

TEST(RegionSpecInvariants, Validation) {
    EXPECT_THROW(RegionSpec::sphere(Vec3::Zero(), 0.0).validate(), InvalidArgument);
    EXPECT_THROW(RegionSpec::box(Vec3(1, 0, 0), Vec3(0, 1, 1)).validate(), InvalidArgument);
    EXPECT_THROW(RegionSpec::from_indices({3, 9}).validate(5), InvalidArgument);
    EXPECT_NO_THROW(RegionSpec::from_indices({3, 4}).validate(5));
}
