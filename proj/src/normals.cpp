#include "shapefit/normals.hpp"

#include <cmath>
#include <limits>
#include <queue>
#include <tuple>

#include "shapefit/spatial_index.hpp"

namespace shapefit {

namespace {

constexpr double kRankRatio = 1e-12;
// |cos| between a normal and the centroid ray above which the outward sign is trusted.
constexpr double kConfidentCos = 0.5;

}  // namespace

NormalEstimate estimate_normals(const PointCloud& cloud, std::size_t k) {
    if (k < 3) throw InvalidArgument("normal estimation needs k >= 3");
    if (cloud.size() < k + 1) throw InvalidArgument("normal estimation needs at least k+1 points");

    const std::size_t n = cloud.size();
    const Points& pts = cloud.points();
    const KdTree tree(pts);
    const Vec3 c = cloud.centroid();

    Points normals(static_cast<Eigen::Index>(n), 3);
    std::vector<std::vector<std::size_t>> adjacency(n);
    std::vector<bool> valid(n, false);
    NormalEstimate out;

    for (std::size_t i = 0; i < n; ++i) {
        const auto nbrs = tree.knn(cloud.point(i), k + 1);
        Vec3 mean = Vec3::Zero();
        for (const auto& nb : nbrs) mean += cloud.point(nb.index);
        mean /= static_cast<double>(nbrs.size());
        Mat3 cov = Mat3::Zero();
        for (const auto& nb : nbrs) {
            const Vec3 d = cloud.point(nb.index) - mean;
            cov += d * d.transpose();
            if (nb.index != i) {
                adjacency[i].push_back(nb.index);
                adjacency[nb.index].push_back(i);
            }
        }
        Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
        const Vec3 ev = es.eigenvalues();
        if (!(ev(2) > 0.0) || ev(1) <= kRankRatio * ev(2)) {
            normals.row(static_cast<Eigen::Index>(i)).setConstant(std::numeric_limits<double>::quiet_NaN());
            out.undefined.push_back(i);
            continue;
        }
        normals.row(static_cast<Eigen::Index>(i)) = es.eigenvectors().col(0).normalized().transpose();
        valid[i] = true;
    }
    if (!out.undefined.empty()) {
        out.warnings.push_back(std::to_string(out.undefined.size()) +
                               " point(s) have a degenerate neighbourhood; normal left undefined");
    }

    auto ray_cos = [&](std::size_t i) {
        const Vec3 r = cloud.point(i) - c;
        const double len = r.norm();
        if (len == 0.0) return 0.0;
        return normals.row(static_cast<Eigen::Index>(i)).dot(r.transpose()) / len;
    };

    // Priority: most parallel edge first, then lowest (from, to) for determinism.
    using Edge = std::tuple<double, std::size_t, std::size_t>;
    auto worse = [](const Edge& a, const Edge& b) {
        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
        if (std::get<2>(a) != std::get<2>(b)) return std::get<2>(a) > std::get<2>(b);
        return std::get<1>(a) > std::get<1>(b);
    };
    std::priority_queue<Edge, std::vector<Edge>, decltype(worse)> frontier(worse);
    std::vector<bool> oriented(n, false);

    auto mark = [&](std::size_t i) {
        oriented[i] = true;
        const auto ni = normals.row(static_cast<Eigen::Index>(i));
        for (std::size_t j : adjacency[i]) {
            if (valid[j] && !oriented[j]) {
                frontier.emplace(std::abs(ni.dot(normals.row(static_cast<Eigen::Index>(j)))), i, j);
            }
        }
    };
    auto flip_outward = [&](std::size_t i) {
        if (ray_cos(i) < 0.0) normals.row(static_cast<Eigen::Index>(i)) *= -1.0;
    };
    auto propagate = [&]() {
        while (!frontier.empty()) {
            const auto [w, from, to] = frontier.top();
            frontier.pop();
            if (oriented[to]) continue;
            if (normals.row(static_cast<Eigen::Index>(from)).dot(normals.row(static_cast<Eigen::Index>(to))) < 0.0) {
                normals.row(static_cast<Eigen::Index>(to)) *= -1.0;
            }
            mark(to);
        }
    };

    for (std::size_t i = 0; i < n; ++i) {
        if (valid[i] && std::abs(ray_cos(i)) >= kConfidentCos) {
            flip_outward(i);
            oriented[i] = true;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (oriented[i]) mark(i);
    }
    propagate();

    // Components with no confident point: seed at the most confident remaining one.
    while (true) {
        std::size_t seed = n;
        double best = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (valid[i] && !oriented[i] && std::abs(ray_cos(i)) > best) {
                best = std::abs(ray_cos(i));
                seed = i;
            }
        }
        if (seed == n) break;
        flip_outward(seed);
        mark(seed);
        propagate();
    }

    out.cloud = cloud;
    out.cloud.set_normals(std::move(normals));
    return out;
}

PointCloud ensure_normals(const PointCloud& cloud, std::size_t k) {
    if (cloud.has_normals()) return cloud;
    return estimate_normals(cloud, k).cloud;
}

}  // namespace shapefit
