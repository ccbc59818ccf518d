#include "shapefit/spatial_index.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace shapefit {

namespace {

using HeapEntry = std::pair<double, std::size_t>;  // (squared distance, index)

double squared_distance(const Points& pts, std::size_t i, const Vec3& q) {
    const auto r = pts.row(static_cast<Eigen::Index>(i));
    const double dx = r(0) - q(0);
    const double dy = r(1) - q(1);
    const double dz = r(2) - q(2);
    return dx * dx + dy * dy + dz * dz;
}

bool closer(double d2, std::size_t idx, double best_d2, std::size_t best_idx) {
    return d2 < best_d2 || (d2 == best_d2 && idx < best_idx);
}

}  // namespace

Neighbor nearest_neighbor(const Vec3& query, const Points& points) {
    if (points.rows() == 0) throw InvalidArgument("empty point set");
    double best_d2 = std::numeric_limits<double>::infinity();
    std::size_t best = 0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(points.rows()); ++i) {
        const double d2 = squared_distance(points, i, query);
        if (d2 < best_d2) {  // strict: keeps the lowest index on ties
            best_d2 = d2;
            best = i;
        }
    }
    return {best, std::sqrt(best_d2)};
}

Neighbor nearest_neighbor(const Vec3& query, const PointCloud& cloud) {
    return nearest_neighbor(query, cloud.points());
}

KdTree::KdTree(Points points, std::size_t leaf_size)
    : points_(std::move(points)), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
    if (points_.rows() == 0) throw InvalidArgument("empty point set");
    order_.resize(size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(2 * size() / leaf_size_ + 1);
    build(0, size());
}

std::size_t KdTree::build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{begin, end, 0, 0, 0, 0.0});
    if (end - begin <= leaf_size_) return id;

    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (std::size_t k = begin; k < end; ++k) {
        const Vec3 p = points_.row(static_cast<Eigen::Index>(order_[k])).transpose();
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    if (!(hi(axis) > lo(axis))) return id;  // all points coincide: keep as leaf

    const std::size_t mid = begin + (end - begin) / 2;
    auto key_less = [&](std::size_t a, std::size_t b) {
        const double va = points_(static_cast<Eigen::Index>(a), axis);
        const double vb = points_(static_cast<Eigen::Index>(b), axis);
        return va < vb || (va == vb && a < b);
    };
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end), key_less);
    const double split = points_(static_cast<Eigen::Index>(order_[mid]), axis);

    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    return id;
}

void KdTree::search_nearest(std::size_t node_id, const Vec3& q, double& best_d2,
                            std::size_t& best_idx) const {
    const Node& node = nodes_[node_id];
    if (node.left == 0) {
        for (std::size_t k = node.begin; k < node.end; ++k) {
            const std::size_t idx = order_[k];
            const double d2 = squared_distance(points_, idx, q);
            if (closer(d2, idx, best_d2, best_idx)) {
                best_d2 = d2;
                best_idx = idx;
            }
        }
        return;
    }
    // Left holds coordinates <= split, right holds coordinates >= split.
    const double diff = q(node.axis) - node.split;
    const std::size_t near_child = diff <= 0.0 ? node.left : node.right;
    const std::size_t far_child = diff <= 0.0 ? node.right : node.left;
    search_nearest(near_child, q, best_d2, best_idx);
    // Visit on equality too: an equidistant point with a lower index may be there.
    if (diff * diff <= best_d2) search_nearest(far_child, q, best_d2, best_idx);
}

Neighbor KdTree::nearest(const Vec3& query) const {
    double best_d2 = std::numeric_limits<double>::infinity();
    std::size_t best_idx = std::numeric_limits<std::size_t>::max();
    search_nearest(0, query, best_d2, best_idx);
    return {best_idx, std::sqrt(best_d2)};
}

std::vector<Neighbor> KdTree::nearest_all(const Points& queries) const {
    std::vector<Neighbor> out(static_cast<std::size_t>(queries.rows()));
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
        out[static_cast<std::size_t>(i)] = nearest(queries.row(i).transpose());
    }
    return out;
}

void KdTree::search_knn(std::size_t node_id, const Vec3& q, std::size_t k,
                        std::vector<HeapEntry>& heap) const {
    const Node& node = nodes_[node_id];
    if (node.left == 0) {
        for (std::size_t j = node.begin; j < node.end; ++j) {
            const std::size_t idx = order_[j];
            const HeapEntry e{squared_distance(points_, idx, q), idx};
            if (heap.size() < k) {
                heap.push_back(e);
                std::push_heap(heap.begin(), heap.end());
            } else if (e < heap.front()) {
                std::pop_heap(heap.begin(), heap.end());
                heap.back() = e;
                std::push_heap(heap.begin(), heap.end());
            }
        }
        return;
    }
    const double diff = q(node.axis) - node.split;
    const std::size_t near_child = diff <= 0.0 ? node.left : node.right;
    const std::size_t far_child = diff <= 0.0 ? node.right : node.left;
    search_knn(near_child, q, k, heap);
    if (heap.size() < k || diff * diff <= heap.front().first) search_knn(far_child, q, k, heap);
}

std::vector<Neighbor> KdTree::knn(const Vec3& query, std::size_t k) const {
    k = std::min(k, size());
    std::vector<HeapEntry> heap;
    heap.reserve(k + 1);
    if (k > 0) search_knn(0, query, k, heap);
    std::sort(heap.begin(), heap.end());
    std::vector<Neighbor> out;
    out.reserve(heap.size());
    for (const auto& [d2, idx] : heap) out.push_back({idx, std::sqrt(d2)});
    return out;
}

double median_spacing(const Points& points) {
    if (points.rows() < 2) throw InvalidArgument("median spacing needs at least two points");
    const KdTree tree(points);
    std::vector<double> d(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const auto nn = tree.knn(points.row(i).transpose(), 2);
        d[static_cast<std::size_t>(i)] = nn.back().distance;
    }
    auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    return *mid;
}

}  // namespace shapefit
