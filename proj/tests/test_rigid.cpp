#include <gtest/gtest.h>

#include <numbers>

#include "shapefit/normals.hpp"
#include "shapefit/rigid.hpp"
#include "shapefit/spatial_index.hpp"
#include "shapefit/synthetic.hpp"
#include "support.hpp"

using namespace shapefit;
using shapefit::testing::TempDir;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

const SyntheticFamily& family() {
    static const SyntheticFamily f = make_ear_family(600);
    return f;
}

RigidTransform pose(const Vec3& axis, double deg, const Vec3& t) {
    RigidTransform tf;
    tf.rotation = axis_angle(axis.normalized(), deg * kDeg);
    tf.translation = t;
    return tf;
}

}  // namespace

TEST(Icp, SelfPairIsIdentity) {
    PointCloud t(family().mean);
    RigidResult r = icp(t, t, IcpParams{});
    EXPECT_LT((r.transform.rotation - Mat3::Identity()).norm(), 1e-12);
    EXPECT_LT(r.transform.translation.norm(), 1e-12);
    EXPECT_EQ(r.cost, 0.0);
    EXPECT_EQ(r.correspondences.assigned_count(), t.size());
    for (std::size_t m = 0; m < t.size(); ++m) EXPECT_EQ(*r.correspondences.assignments[m], m);
}

TEST(Icp, RecoversSmallMotion) {
    PointCloud t(family().mean);
    RigidTransform truth = pose(Vec3::UnitZ(), 15.0, Vec3(5, 0, 0));
    PointCloud target = apply_transform(t, truth);
    RigidResult r = icp(t, target, IcpParams{});
    Points placed = apply_transform(t.points(), r.transform);
    EXPECT_LT((placed - target.points()).rowwise().norm().maxCoeff(), 1e-6);
}

TEST(Icp, ResidualIsNonIncreasing) {
    PointCloud t(family().mean);
    for (bool accelerate : {false, true}) {
        IcpParams p;
        p.accelerate = accelerate;
        Rng rng(3);
        PointCloud target = apply_transform(family().random_shape(rng), pose(Vec3(1, 2, 0), 20.0, Vec3(3, -2, 6)));
        RigidResult r = icp(t, target, p);
        ASSERT_GE(r.residual_history.size(), 2u);
        for (std::size_t i = 1; i < r.residual_history.size(); ++i)
            EXPECT_LE(r.residual_history[i], r.residual_history[i - 1] + 1e-12) << i;
    }
}

TEST(Icp, EquivariantUnderTargetMotion) {
    PointCloud t(family().mean);
    Rng rng(5);
    PointCloud target = apply_transform(family().random_shape(rng), pose(Vec3(0, 1, 1), 10.0, Vec3(1, 2, 3)));
    RigidTransform q = pose(Vec3(1, -1, 2), 70.0, Vec3(-20, 4, 9));
    IcpParams p;
    RigidResult r0 = icp(t, target, p);
    RigidResult r1 = icp(t, apply_transform(target, q), p, q);
    RigidTransform expected = q.compose(r0.transform);
    EXPECT_LT((r1.transform.rotation - expected.rotation).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((r1.transform.translation - expected.translation).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Icp, AllowsManyToOneMatches) {
    Points dense(10, 3), sparse(3, 3);
    for (int i = 0; i < 10; ++i) dense.row(i) << i * 0.1, 0.05 * (i % 2), 0.02 * (i % 3);
    sparse << 0, 0, 0, 0.5, 0, 0, 0.9, 0.05, 0.02;
    RigidResult r = icp(PointCloud(dense), PointCloud(sparse), IcpParams{});
    EXPECT_GT(r.correspondences.assigned_count(), 3u);
    IcpParams unique;
    unique.unique_matches = true;
    EXPECT_LE(icp(PointCloud(dense), PointCloud(sparse), unique).correspondences.assigned_count(), 3u);
}

TEST(Icp, DivergesWithTooFewPairs) {
    PointCloud t(family().mean);
    PointCloud far = apply_transform(t, pose(Vec3::UnitZ(), 0.0, Vec3(1000, 0, 0)));
    IcpParams p;
    p.correspondence_threshold = 1.0;
    try {
        icp(t, far, p);
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "registration diverged");
    }
}

TEST(Icp, ParamsValidate) {
    IcpParams p;
    p.max_iterations = 0;
    EXPECT_THROW(p.validate(), InvalidArgument);
    p = {};
    p.convergence_tol = 0.0;
    EXPECT_THROW(p.validate(), InvalidArgument);
}

TEST(Icp, HuberLossStillRecoversCleanMotion) {
    PointCloud t(family().mean);
    RigidTransform truth = pose(Vec3(1, 1, 0), 8.0, Vec3(0, 2, -1));
    IcpParams p;
    p.robust_loss = RobustLoss::huber;
    p.huber_delta = 0.5;
    RigidResult r = icp(t, apply_transform(t, truth), p);
    EXPECT_LT(rotation_angle_between(r.transform.rotation, truth.rotation), 1e-6);
}

TEST(RequiredTrials, RansacBound) {
    EXPECT_NEAR(required_trials(0.999, 0.5), std::log(0.001) / std::log(1 - 0.125), 1e-12);
    EXPECT_EQ(required_trials(0.999, 1.0), 0.0);
    EXPECT_TRUE(std::isinf(required_trials(0.999, 0.0)));
}

TEST(Ransip, SelfPairTerminatesQuickly) {
    PointCloud t = ensure_normals(PointCloud(family().mean));
    RansipParams p;
    p.seed = 1;
    RigidResult r = ransip(t, t, p);
    EXPECT_LT(r.cost, 1e-6);
    EXPECT_GT(static_cast<double>(r.inliers.size()), 0.99 * static_cast<double>(t.size()));
    EXPECT_LE(r.trials_run, 10u);
}

TEST(Ransip, RecoversLargeRotationOnMostSeeds) {
    PointCloud t(family().mean);
    int good = 0;
    Rng axes(11);
    for (int seed = 0; seed < 100; ++seed) {
        RigidTransform truth;
        truth.rotation = axis_angle(random_unit_vector(axes), 120.0 * kDeg);
        truth.translation = Vec3(4, -3, 2);
        RansipParams p;
        p.seed = static_cast<std::uint64_t>(seed);
        RigidResult r = ransip(t, apply_transform(t, truth), p);
        if (rotation_angle_between(r.transform.rotation, truth.rotation) < 2.0 * kDeg) ++good;
    }
    EXPECT_GE(good, 95);
}

TEST(Ransip, InlierGateAndBestTrial) {
    PointCloud t(family().mean);
    Rng rng(13);
    PointCloud target = apply_transform(family().random_shape(rng), pose(Vec3(1, 0, 1), 150.0, Vec3(2, 2, 2)));
    RansipParams p;
    p.seed = 9;
    RigidResult r = ransip(t, target, p);
    for (const auto& in : r.inliers) EXPECT_LT(in.normal_angle, p.normal_angle_gate);
    ASSERT_EQ(r.trial_costs.size(), r.trials_run);
    for (double c : r.trial_costs) EXPECT_LE(r.cost, c);
    EXPECT_EQ(r.trial_costs[r.best_trial], r.cost);
    for (std::size_t k = 0; k < r.best_trial; ++k) EXPECT_GT(r.trial_costs[k], r.cost);
}

TEST(Ransip, DeterministicForFixedSeed) {
    PointCloud t(family().mean);
    PointCloud target = apply_transform(t, pose(Vec3(0, 1, 0), 100.0, Vec3(1, 0, 0)));
    RansipParams p;
    p.seed = 77;
    RigidResult a = ransip(t, target, p), b = ransip(t, target, p);
    EXPECT_EQ(a.transform.rotation, b.transform.rotation);
    EXPECT_EQ(a.transform.translation, b.transform.translation);
    EXPECT_EQ(a.trial_costs, b.trial_costs);
    EXPECT_EQ(a.correspondences.assignments, b.correspondences.assignments);
}

TEST(Ransip, NoConsensusOnUnrelatedClouds) {
    PointCloud t(family().mean);
    PointCloud target(shapefit::testing::random_points(400, 21, 30.0));
    RansipParams p;
    p.max_trials = 3;
    p.inlier_distance_threshold = 1e-9;
    try {
        ransip(t, target, p);
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "no consensus found");
    }
}

TEST(ClassifyPoints, CleanPairHasNoOutliersOrMissing) {
    PointCloud t(family().mean);
    RigidResult r = icp(t, t, IcpParams{});
    auto c = classify_points(r, t);
    EXPECT_TRUE(c.outlier_targets.empty());
    EXPECT_TRUE(c.missing_templates.empty());
}

TEST(ClassifyPoints, FarInjectedPointsAreOutliers) {
    PointCloud t(family().mean);
    const double spacing = median_spacing(t.points());
    IcpParams p;
    p.correspondence_threshold = 3.0 * spacing;
    Points pts(t.size() + 10, 3);
    pts.topRows(static_cast<Eigen::Index>(t.size())) = t.points();
    for (int i = 0; i < 10; ++i) pts.row(static_cast<Eigen::Index>(t.size()) + i) << 200.0 + i, 0, 0;
    PointCloud target(pts);
    auto c = classify_points(icp(t, target, p), target);
    ASSERT_EQ(c.outlier_targets.size(), 10u);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(c.outlier_targets[static_cast<std::size_t>(i)], t.size() + static_cast<std::size_t>(i));
}

TEST(ClassifyPoints, DeletedRegionIsMissing) {
    PointCloud t(family().mean);
    // 50 template points nearest to an interior point are deleted from the target.
    KdTree tree(t.points());
    auto knn = tree.knn(t.point(t.size() / 2), 50);
    std::vector<bool> drop(t.size(), false);
    for (const auto& n : knn) drop[n.index] = true;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < t.size(); ++i)
        if (!drop[i]) keep.push_back(i);
    PointCloud target = t.select(keep);
    IcpParams p;
    p.correspondence_threshold = 1e-6;
    auto c = classify_points(icp(t, target, p), target);
    std::vector<std::size_t> expected;
    for (const auto& n : knn) expected.push_back(n.index);
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(c.missing_templates, expected);
}

TEST(Correspondences, CsvRoundTrip) {
    TempDir dir("corr");
    PointCloud t(family().mean);
    CorrespondenceMap map = nearest_correspondences(t.points(), t, 0.1);
    map.assignments[3].reset();
    write_correspondences_csv(dir / "c.csv", map, t.points(), t);
    CorrespondenceMap back = read_correspondences_csv(dir / "c.csv", t.size());
    EXPECT_EQ(back.assignments, map.assignments);
}
