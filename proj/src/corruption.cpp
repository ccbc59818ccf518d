#include "shapefit/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "shapefit/point_io.hpp"

namespace shapefit {

namespace {

void check_ratio(double r, const char* name, bool at_most_one = true) {
    if (!(r >= 0.0) || (at_most_one && r > 1.0)) {
        throw InvalidArgument(std::string(name) + " must lie in [0,1]");
    }
}

/// `count` distinct entries of `candidates`, drawn uniformly, ascending.
std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> candidates, std::size_t count,
                                                    std::uint64_t seed) {
    Rng rng(seed);
    count = std::min(count, candidates.size());
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
        std::swap(candidates[i], candidates[pick(rng)]);
    }
    candidates.resize(count);
    std::sort(candidates.begin(), candidates.end());
    return candidates;
}

RemovalResult remove_indices(const PointCloud& cloud, std::vector<std::size_t> removed) {
    RemovalResult out;
    out.removed = std::move(removed);
    std::size_t r = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (r < out.removed.size() && out.removed[r] == i) {
            ++r;
        } else {
            out.kept.push_back(i);
        }
    }
    out.cloud = cloud.select(out.kept);
    return out;
}

InjectionResult append_points(const PointCloud& cloud, const Points& extra) {
    const Eigen::Index n = static_cast<Eigen::Index>(cloud.size());
    Points pts(n + extra.rows(), 3);
    pts.topRows(n) = cloud.points();
    pts.bottomRows(extra.rows()) = extra;
    InjectionResult out;
    out.cloud = PointCloud(std::move(pts));
    if (cloud.has_normals()) {
        Points nrm(n + extra.rows(), 3);
        nrm.topRows(n) = cloud.normals();
        nrm.bottomRows(extra.rows()).setConstant(std::numeric_limits<double>::quiet_NaN());
        out.cloud.set_normals(std::move(nrm));
    }
    if (cloud.has_labels()) {
        auto labels = cloud.labels();
        labels.resize(static_cast<std::size_t>(n + extra.rows()), kNoIndex);
        out.cloud.set_labels(std::move(labels));
    }
    for (Eigen::Index i = 0; i < extra.rows(); ++i) out.outlier_indices.push_back(static_cast<std::size_t>(n + i));
    return out;
}

Points sample_box(const BoundingBox& box, std::size_t count, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Points pts(static_cast<Eigen::Index>(count), 3);
    const Vec3 ext = box.extent();
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        for (int a = 0; a < 3; ++a) pts(i, a) = box.min(a) + u(rng) * ext(a);
    }
    return pts;
}

Points sample_region(const RegionSpec& region, const PointCloud& shape, std::size_t count, Rng& rng) {
    Points pts(static_cast<Eigen::Index>(count), 3);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) pts.row(i) = region.sample(rng, shape).transpose();
    return pts;
}

}  // namespace

RegionSpec RegionSpec::from_indices(std::vector<std::size_t> indices, std::string description) {
    RegionSpec r;
    r.kind = Kind::index_set;
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    r.indices = std::move(indices);
    r.description = std::move(description);
    return r;
}

RegionSpec RegionSpec::sphere(const Vec3& center, double radius, std::string description) {
    RegionSpec r;
    r.kind = Kind::sphere;
    r.center = center;
    r.radius = radius;
    r.description = std::move(description);
    return r;
}

RegionSpec RegionSpec::box(const Vec3& min, const Vec3& max, std::string description) {
    RegionSpec r;
    r.kind = Kind::box;
    r.min = min;
    r.max = max;
    r.description = std::move(description);
    return r;
}

void RegionSpec::validate(std::optional<std::size_t> shape_size) const {
    switch (kind) {
        case Kind::sphere:
            if (!(radius > 0.0) || !center.allFinite()) throw InvalidArgument("sphere region needs radius > 0");
            break;
        case Kind::box:
            if (!min.allFinite() || !max.allFinite() || (min.array() > max.array()).any()) {
                throw InvalidArgument("box region needs min <= max");
            }
            break;
        case Kind::index_set:
            if (shape_size) {
                for (std::size_t i : indices) {
                    if (i >= *shape_size) throw InvalidArgument("region index outside shape");
                }
            }
            break;
    }
}

std::vector<std::size_t> RegionSpec::select(const PointCloud& cloud) const {
    validate(kind == Kind::index_set ? std::optional<std::size_t>(cloud.size()) : std::nullopt);
    if (kind == Kind::index_set) return indices;
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3 p = cloud.point(i);
        const bool inside = kind == Kind::sphere ? (p - center).norm() <= radius
                                                 : BoundingBox{min, max}.contains(p);
        if (inside) out.push_back(i);
    }
    return out;
}

BoundingBox RegionSpec::sampling_box(const PointCloud& shape) const {
    switch (kind) {
        case Kind::sphere: return {center.array() - radius, center.array() + radius};
        case Kind::box: return {min, max};
        case Kind::index_set: {
            if (indices.empty()) throw InvalidArgument("region selects no points");
            return bounding_box(shape.select(indices));
        }
    }
    return {};
}

Vec3 RegionSpec::sample(Rng& rng, const PointCloud& shape) const {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    if (kind == Kind::sphere) {
        while (true) {
            const Vec3 d(u(rng), u(rng), u(rng));
            if (d.squaredNorm() <= 1.0) return center + radius * d;
        }
    }
    const BoundingBox b = sampling_box(shape);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Vec3 p;
    for (int a = 0; a < 3; ++a) p(a) = b.min(a) + u01(rng) * (b.max(a) - b.min(a));
    return p;
}

CorruptionConfig CorruptionConfig::none() {
    CorruptionConfig c;
    c.uniform_missing_ratio = 0.0;
    c.structured_missing_ratio = 0.0;
    c.uniform_outlier_ratio = 0.0;
    c.structured_outlier_ratio = 0.0;
    c.noise_sigma = 0.0;
    return c;
}

void CorruptionConfig::validate() const {
    check_ratio(uniform_missing_ratio, "uniform_missing_ratio");
    check_ratio(structured_missing_ratio, "structured_missing_ratio");
    check_ratio(uniform_outlier_ratio, "uniform_outlier_ratio");
    check_ratio(structured_outlier_ratio, "structured_outlier_ratio");
    if (!(noise_sigma >= 0.0)) throw InvalidArgument("noise_sigma must be >= 0");
    if (structured_missing_ratio > 0.0) {
        if (!missing_region) throw InvalidArgument("structured missing data needs a missing_region");
        missing_region->validate();
    }
    if (structured_outlier_ratio > 0.0) {
        if (!outlier_region) throw InvalidArgument("structured outliers need an outlier_region");
        outlier_region->validate();
    }
}

std::size_t CorruptionGroundTruth::outlier_count() const {
    return static_cast<std::size_t>(std::count(kept_original_index.begin(), kept_original_index.end(), kNoIndex));
}

std::vector<std::optional<std::size_t>> CorruptionGroundTruth::original_to_corrupted() const {
    std::vector<std::optional<std::size_t>> map(original_count);
    for (std::size_t j = 0; j < kept_original_index.size(); ++j) {
        const auto o = kept_original_index[j];
        if (o != kNoIndex) map.at(static_cast<std::size_t>(o)) = j;
    }
    return map;
}

CorruptionGroundTruth CorruptionGroundTruth::identity(std::size_t n) {
    CorruptionGroundTruth gt;
    gt.original_count = n;
    gt.kept_original_index.resize(n);
    std::iota(gt.kept_original_index.begin(), gt.kept_original_index.end(), std::int64_t{0});
    gt.noise_displacements = Points::Zero(static_cast<Eigen::Index>(n), 3);
    return gt;
}

void CorruptionGroundTruth::validate() const {
    std::vector<bool> seen(original_count, false);
    std::size_t kept = 0;
    for (std::size_t j = 0; j < kept_original_index.size(); ++j) {
        const auto o = kept_original_index[j];
        if (o == kNoIndex) continue;
        if (j >= kept_count()) throw InvalidArgument("kept point after an injected outlier");
        if (o < 0 || static_cast<std::size_t>(o) >= original_count || seen[static_cast<std::size_t>(o)]) {
            throw InvalidArgument("invalid original index in ground truth");
        }
        seen[static_cast<std::size_t>(o)] = true;
        ++kept;
    }
    for (std::size_t r : removed_indices) {
        if (r >= original_count || seen[r]) throw InvalidArgument("removed index overlaps kept points");
    }
    if (kept != kept_count() || kept + removed_indices.size() != original_count) {
        throw InvalidArgument("ground truth does not account for every original point");
    }
}

std::size_t ratio_count(double ratio, std::size_t basis) {
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(basis) + 0.5));
}

RemovalResult remove_uniform(const PointCloud& cloud, double ratio, std::uint64_t seed) {
    check_ratio(ratio, "ratio");
    std::vector<std::size_t> all(cloud.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return remove_indices(cloud, sample_without_replacement(std::move(all), ratio_count(ratio, cloud.size()), seed));
}

RemovalResult remove_structured(const PointCloud& cloud, double ratio, const RegionSpec& region,
                                std::uint64_t seed) {
    check_ratio(ratio, "ratio");
    auto inside = region.select(cloud);
    if (inside.empty()) throw InvalidArgument("region selects no points");
    const std::size_t count = ratio_count(ratio, inside.size());
    return remove_indices(cloud, sample_without_replacement(std::move(inside), count, seed));
}

InjectionResult add_uniform_outliers(const PointCloud& cloud, double ratio, std::uint64_t seed) {
    check_ratio(ratio, "ratio", false);
    if (ratio == 0.0) return append_points(cloud, Points(0, 3));
    Rng rng(seed);
    return append_points(cloud, sample_box(bounding_box(cloud), ratio_count(ratio, cloud.size()), rng));
}

InjectionResult add_structured_outliers(const PointCloud& cloud, double ratio, const RegionSpec& region,
                                        std::uint64_t seed) {
    check_ratio(ratio, "ratio", false);
    const auto inside = region.select(cloud);
    if (inside.empty()) throw InvalidArgument("region selects no points");
    Rng rng(seed);
    return append_points(cloud, sample_region(region, cloud, ratio_count(ratio, inside.size()), rng));
}

NoiseResult add_noise(const PointCloud& cloud, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0.0)) throw InvalidArgument("noise sigma must be >= 0");
    NoiseResult out{cloud, Points::Zero(static_cast<Eigen::Index>(cloud.size()), 3)};
    if (sigma == 0.0) return out;
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, sigma);
    for (Eigen::Index i = 0; i < out.displacements.rows(); ++i) {
        for (int a = 0; a < 3; ++a) out.displacements(i, a) = normal(rng);
    }
    out.cloud.points() += out.displacements;
    return out;
}

CorruptionResult corrupt(const PointCloud& clean, const CorruptionConfig& config) {
    config.validate();
    const std::size_t n = clean.size();
    PointCloud current(clean.points());
    std::vector<std::size_t> original(n);  // current index -> clean index
    std::iota(original.begin(), original.end(), std::size_t{0});
    std::vector<std::size_t> removed;

    auto drop = [&](const RemovalResult& r) {
        for (std::size_t i : r.removed) removed.push_back(original[i]);
        std::vector<std::size_t> next;
        next.reserve(r.kept.size());
        for (std::size_t i : r.kept) next.push_back(original[i]);
        original = std::move(next);
        current = r.cloud;
    };

    if (config.structured_missing_ratio > 0.0) {
        // The region refers to the clean shape, which `current` still is.
        drop(remove_structured(current, config.structured_missing_ratio, *config.missing_region,
                               derive_seed(config.seed, 1)));
    }
    if (config.uniform_missing_ratio > 0.0) {
        std::vector<std::size_t> all(current.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        const std::size_t count = std::min(ratio_count(config.uniform_missing_ratio, n), current.size());
        drop(remove_indices(current, sample_without_replacement(std::move(all), count, derive_seed(config.seed, 2))));
    }

    NoiseResult noisy = add_noise(current, config.noise_sigma, derive_seed(config.seed, 3));
    current = noisy.cloud;

    Points injected(0, 3);
    if (config.structured_outlier_ratio > 0.0) {
        const auto& region = *config.outlier_region;
        const std::size_t basis = region.select(clean).size();
        if (basis == 0) throw InvalidArgument("region selects no points");
        Rng rng(derive_seed(config.seed, 4));
        const Points extra = sample_region(region, clean, ratio_count(config.structured_outlier_ratio, basis), rng);
        injected.conservativeResize(injected.rows() + extra.rows(), 3);
        injected.bottomRows(extra.rows()) = extra;
    }
    if (config.uniform_outlier_ratio > 0.0) {
        Rng rng(derive_seed(config.seed, 5));
        const Points extra = sample_box(bounding_box(clean), ratio_count(config.uniform_outlier_ratio, n), rng);
        injected.conservativeResize(injected.rows() + extra.rows(), 3);
        injected.bottomRows(extra.rows()) = extra;
    }

    CorruptionResult out;
    auto& gt = out.ground_truth;
    gt.original_count = n;
    std::sort(removed.begin(), removed.end());
    gt.removed_indices = std::move(removed);
    gt.noise_displacements = std::move(noisy.displacements);
    for (std::size_t o : original) gt.kept_original_index.push_back(static_cast<std::int64_t>(o));
    gt.kept_original_index.resize(original.size() + static_cast<std::size_t>(injected.rows()), kNoIndex);

    out.cloud = append_points(current, injected).cloud;
    out.cloud.set_labels(gt.kept_original_index);
    return out;
}

void write_ground_truth(const std::filesystem::path& stem, const CorruptionGroundTruth& gt) {
    std::ofstream csv(stem.string() + ".gt.csv");
    if (!csv) throw IoError("cannot write ground truth for " + stem.string());
    csv << "corrupted_index,original_index,dx,dy,dz\n";
    for (std::size_t j = 0; j < gt.kept_original_index.size(); ++j) {
        csv << j << ',' << gt.kept_original_index[j];
        if (j < gt.kept_count()) {
            const auto d = gt.noise_displacements.row(static_cast<Eigen::Index>(j));
            csv << ',' << io::format_double(d(0)) << ',' << io::format_double(d(1)) << ',' << io::format_double(d(2));
        } else {
            csv << ",,,";
        }
        csv << '\n';
    }
    io::write_index_list(stem.string() + ".removed.txt", gt.removed_indices);
}

CorruptionGroundTruth read_ground_truth(const std::filesystem::path& stem) {
    std::ifstream csv(stem.string() + ".gt.csv");
    if (!csv) throw IoError("cannot read ground truth for " + stem.string());
    CorruptionGroundTruth gt;
    std::string line;
    std::getline(csv, line);
    std::vector<Vec3> disp;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
        while (cells.size() < 5) cells.emplace_back();
        gt.kept_original_index.push_back(std::stoll(cells[1]));
        if (!cells[2].empty()) {
            disp.emplace_back(io::parse_double(cells[2]), io::parse_double(cells[3]), io::parse_double(cells[4]));
        }
    }
    gt.noise_displacements.resize(static_cast<Eigen::Index>(disp.size()), 3);
    for (std::size_t i = 0; i < disp.size(); ++i) gt.noise_displacements.row(static_cast<Eigen::Index>(i)) = disp[i].transpose();
    gt.removed_indices = io::read_index_list(stem.string() + ".removed.txt");
    gt.original_count = disp.size() + gt.removed_indices.size();
    gt.validate();
    return gt;
}

}  // namespace shapefit
