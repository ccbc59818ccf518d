#include <gtest/gtest.h>

#include <fstream>

#include "shapefit/point_io.hpp"
#include "shapefit/random.hpp"
#include "shapefit/shape_stats.hpp"
#include "shapefit/synthetic.hpp"
#include "support.hpp"

using namespace shapefit;
using shapefit::testing::TempDir;

namespace {

std::vector<PointCloud> moved_copies(const PointCloud& s, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<PointCloud> out;
    for (std::size_t i = 0; i < n; ++i) {
        RigidTransform tf;
        tf.rotation = random_rotation(rng);
        tf.translation = 30.0 * random_unit_vector(rng);
        out.push_back(apply_transform(s, tf));
    }
    return out;
}

std::vector<PointCloud> family_sample(std::size_t points, std::size_t n, std::uint64_t seed) {
    SyntheticFamily fam = make_ear_family(points);
    Rng rng(seed);
    std::vector<PointCloud> out;
    for (std::size_t i = 0; i < n; ++i) {
        RigidTransform tf;
        tf.rotation = random_rotation(rng);
        tf.translation = 10.0 * random_unit_vector(rng);
        out.push_back(apply_transform(fam.random_shape(rng), tf));
    }
    return out;
}

}  // namespace

TEST(Gpa, RigidCopiesCollapse) {
    SyntheticFamily fam = make_ear_family(300);
    PointCloud s(fam.mean);
    AlignedDataset d = gpa(moved_copies(s, 6, 1));
    EXPECT_TRUE(d.converged);
    for (const auto& a : d.shapes) EXPECT_LT((a.points() - d.mean.points()).cwiseAbs().maxCoeff(), 1e-6);
    DeformationStats st = deformation_stats(d);
    EXPECT_LT(st.distances.maxCoeff(), 1e-6);
    // The mean is the centred shape in the orientation of the first copy.
    AlignedDataset self = gpa({s, s});
    Points centred = s.points().rowwise() - s.centroid().transpose();
    EXPECT_LT((self.mean.points() - centred).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Gpa, AlignedInputGivesIdentityRotations) {
    SyntheticFamily fam = make_ear_family(200);
    Rng rng(2);
    std::vector<PointCloud> shapes;
    for (int i = 0; i < 5; ++i) shapes.push_back(fam.random_shape(rng));
    AlignedDataset first = gpa(shapes);
    AlignedDataset again = gpa(first.shapes);
    for (const auto& tf : again.alignment_transforms) {
        EXPECT_LT(rotation_angle_between(tf.rotation, Mat3::Identity()), 1e-6);
        EXPECT_LT(tf.translation.norm(), 1e-6);
    }
}

TEST(Gpa, ObjectiveNonIncreasing) {
    AlignedDataset d = gpa(family_sample(400, 12, 3));
    ASSERT_GE(d.objective_history.size(), 2u);
    for (std::size_t i = 1; i < d.objective_history.size(); ++i)
        EXPECT_LE(d.objective_history[i], d.objective_history[i - 1] * (1 + 1e-12)) << i;
}

TEST(Gpa, CentroidsAtOriginAndTransformsMapInputs) {
    auto shapes = family_sample(150, 6, 4);
    AlignedDataset d = gpa(shapes);
    Vec3 mean_centroid = Vec3::Zero();
    for (const auto& a : d.shapes) mean_centroid += a.centroid();
    EXPECT_LT((mean_centroid / 6.0).norm(), 1e-9);
    for (std::size_t i = 0; i < shapes.size(); ++i)
        EXPECT_LT((apply_transform(shapes[i].points(), d.alignment_transforms[i]) - d.shapes[i].points()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Gpa, InvariantToRotatingTheWholeDataset) {
    auto shapes = family_sample(200, 8, 5);
    Rng rng(6);
    RigidTransform q;
    q.rotation = random_rotation(rng);
    q.translation = Vec3(5, 6, 7);
    std::vector<PointCloud> rotated;
    for (const auto& s : shapes) rotated.push_back(apply_transform(s, q));
    DeformationStats a = deformation_stats(gpa(shapes)), b = deformation_stats(gpa(rotated));
    EXPECT_LT((a.distances - b.distances).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Gpa, ScaleOptionNormalisesSize) {
    SyntheticFamily fam = make_ear_family(200);
    PointCloud s(fam.mean);
    std::vector<PointCloud> shapes{s, PointCloud(Points(2.0 * s.points())), PointCloud(Points(0.5 * s.points()))};
    GpaParams p;
    p.with_scale = true;
    AlignedDataset d = gpa(shapes, p);
    for (const auto& a : d.shapes) EXPECT_LT((a.points() - d.mean.points()).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_GT(deformation_stats(gpa(shapes)).distances.maxCoeff(), 1.0);
}

TEST(Gpa, NeedsTwoShapes) {
    SyntheticFamily fam = make_ear_family(50);
    EXPECT_THROW(gpa({PointCloud(fam.mean)}), InvalidArgument);
}

TEST(MeanShape, SingleAndPairAndTriple) {
    Points a = shapefit::testing::random_points(10, 7), b = shapefit::testing::random_points(10, 8),
           c = shapefit::testing::random_points(10, 9);
    EXPECT_EQ(mean_shape({PointCloud(a)}).points(), a);
    EXPECT_LT((mean_shape({PointCloud(a), PointCloud(b)}).points() - 0.5 * (a + b)).cwiseAbs().maxCoeff(), 1e-15);
    Points m = mean_shape({PointCloud(a), PointCloud(b), PointCloud(c)}).points();
    for (Eigen::Index i = 0; i < 10; ++i)
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(m(i, k), (a(i, k) + b(i, k) + c(i, k)) / 3.0, 1e-14);
}

TEST(DeformationStats, ZeroAndOffsetAndMarginals) {
    Points base = shapefit::testing::random_points(20, 10);
    PointCloud mean(base);
    PointCloud shifted(Points(base.rowwise() + Eigen::RowVector3d(0, 1, 0)));
    DeformationStats z = deformation_stats({mean, mean}, mean);
    EXPECT_EQ(z.distances.maxCoeff(), 0.0);
    DeformationStats s = deformation_stats({mean, shifted}, mean);
    EXPECT_NEAR(s.per_shape_mean[1], 1.0, 1e-12);
    EXPECT_EQ(s.per_shape_mean[0], 0.0);

    auto shapes = family_sample(100, 5, 11);
    PointCloud m = mean_shape(shapes);
    DeformationStats r = deformation_stats(shapes, m);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        double sum = 0;
        for (std::size_t p = 0; p < 100; ++p) sum += (shapes[i].point(p) - m.point(p)).norm();
        EXPECT_NEAR(r.per_shape_mean[i], sum / 100.0, 1e-9);
    }
    double gs = 0, gp = 0;
    for (double v : r.per_shape_mean) gs += v;
    for (double v : r.per_point_mean) gp += v;
    EXPECT_NEAR(gs / 5.0, gp / 100.0, 1e-9);
}

TEST(MostDifferent, ConstructedOutlierAndTies) {
    PointCloud a(shapefit::testing::random_points(15, 12));
    PointCloud far(Points(a.points().array() + 5.0));
    std::vector<PointCloud> shapes{a, a, far, a};
    EXPECT_EQ(most_different_shape(deformation_stats(shapes, mean_shape(shapes))), 2u);
    EXPECT_EQ(most_different_shape(deformation_stats({a, a, a}, a)), 0u);
    auto rnd = family_sample(80, 6, 13);
    DeformationStats st = deformation_stats(rnd, mean_shape(rnd));
    std::size_t arg = static_cast<std::size_t>(std::max_element(st.per_shape_mean.begin(), st.per_shape_mean.end()) -
                                               st.per_shape_mean.begin());
    EXPECT_EQ(most_different_shape(st), arg);
}

TEST(DeformationOutputs, FilesAreWritten) {
    TempDir dir("stats");
    auto shapes = family_sample(60, 3, 14);
    AlignedDataset d = gpa(shapes);
    write_deformation_outputs(dir.path(), deformation_stats(d), d.mean, {"a", "b", "c"});
    std::string per_shape = shapefit::testing::read_file(dir / "per_shape.csv");
    EXPECT_NE(per_shape.find("b,"), std::string::npos);
    EXPECT_TRUE(std::filesystem::exists(dir / "per_point.csv"));
    EXPECT_EQ(io::read_ply(dir / "mean_deformation.ply").size(), 60u);
}
