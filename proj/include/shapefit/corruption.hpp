#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "shapefit/geometry.hpp"
#include "shapefit/random.hpp"

namespace shapefit {

/// Region of a shape used for structured missing data and structured outliers.
struct RegionSpec {
    enum class Kind { index_set, sphere, box };

    Kind kind = Kind::index_set;
    std::vector<std::size_t> indices;  // index_set: indices into the shape
    Vec3 center = Vec3::Zero();        // sphere
    double radius = 0.0;               // sphere, mm
    Vec3 min = Vec3::Zero();           // box
    Vec3 max = Vec3::Zero();           // box
    std::string description;

    static RegionSpec from_indices(std::vector<std::size_t> indices, std::string description = {});
    static RegionSpec sphere(const Vec3& center, double radius, std::string description = {});
    static RegionSpec box(const Vec3& min, const Vec3& max, std::string description = {});

    /// Throws InvalidArgument for a non-positive radius, an inverted box, or
    /// (when shape_size is given) an index outside the shape.
    void validate(std::optional<std::size_t> shape_size = std::nullopt) const;

    /// Indices of the cloud's points that lie in the region, ascending.
    std::vector<std::size_t> select(const PointCloud& cloud) const;

    /// Volume used to inject region outliers. For an index set this is the
    /// bounding box of the indexed points of `shape`.
    BoundingBox sampling_box(const PointCloud& shape) const;
    /// Uniform draw from the region volume (ball, box, or index-set box).
    Vec3 sample(Rng& rng, const PointCloud& shape) const;
};

inline constexpr double kDefaultUniformMissing = 0.2;
inline constexpr double kDefaultStructuredMissing = 0.8;
inline constexpr double kDefaultUniformOutliers = 0.1;
inline constexpr double kDefaultStructuredOutliers = 0.4;

struct CorruptionConfig {
    double uniform_missing_ratio = kDefaultUniformMissing;
    double structured_missing_ratio = kDefaultStructuredMissing;
    std::optional<RegionSpec> missing_region;
    double uniform_outlier_ratio = kDefaultUniformOutliers;
    double structured_outlier_ratio = kDefaultStructuredOutliers;
    std::optional<RegionSpec> outlier_region;
    double noise_sigma = 0.1;  // mm; a configuration value, not a reference figure
    std::uint64_t seed = 0;

    /// Every ratio and sigma zero: corrupt() becomes the identity.
    static CorruptionConfig none();
    void validate() const;
};

/// Exact record of what corrupt() did to a clean shape.
struct CorruptionGroundTruth {
    /// One entry per corrupted point: its index in the clean shape, or kNoIndex.
    std::vector<std::int64_t> kept_original_index;
    /// Clean-shape indices that were deleted, ascending.
    std::vector<std::size_t> removed_indices;
    /// Row i is the noise added to corrupted point i, for i < kept_count().
    /// Injected outliers always follow the kept points, so they have no row.
    Points noise_displacements;
    std::size_t original_count = 0;

    std::size_t kept_count() const { return static_cast<std::size_t>(noise_displacements.rows()); }
    bool is_outlier(std::size_t corrupted_index) const {
        return kept_original_index.at(corrupted_index) == kNoIndex;
    }
    std::size_t outlier_count() const;
    /// clean index -> corrupted index, or nullopt when removed.
    std::vector<std::optional<std::size_t>> original_to_corrupted() const;
    /// Clean shape with no corruption at all.
    static CorruptionGroundTruth identity(std::size_t n);

    void validate() const;
};

struct RemovalResult {
    PointCloud cloud;                    // survivors, original order
    std::vector<std::size_t> removed;    // indices into the input, ascending
    std::vector<std::size_t> kept;       // indices into the input, ascending
};

struct InjectionResult {
    PointCloud cloud;                            // input followed by the new points
    std::vector<std::size_t> outlier_indices;    // indices of the new points in `cloud`
};

struct NoiseResult {
    PointCloud cloud;
    Points displacements;
};

/// Count used everywhere a ratio is turned into a number of points: floor(x + 0.5).
std::size_t ratio_count(double ratio, std::size_t basis);

RemovalResult remove_uniform(const PointCloud& cloud, double ratio, std::uint64_t seed);
/// Throws InvalidArgument("region selects no points") for an empty region.
RemovalResult remove_structured(const PointCloud& cloud, double ratio, const RegionSpec& region,
                                std::uint64_t seed);
InjectionResult add_uniform_outliers(const PointCloud& cloud, double ratio, std::uint64_t seed);
InjectionResult add_structured_outliers(const PointCloud& cloud, double ratio, const RegionSpec& region,
                                        std::uint64_t seed);
NoiseResult add_noise(const PointCloud& cloud, double sigma, std::uint64_t seed);

struct CorruptionResult {
    PointCloud cloud;  // labels carry kept_original_index
    CorruptionGroundTruth ground_truth;
};

/**
 * Structured missing, uniform missing, noise, structured outliers, uniform
 * outliers, in that order. Ratios are relative to the clean shape: uniform
 * counts to its size, structured counts to the number of its points inside
 * the region. Uniform missing is capped at the points still present.
 */
CorruptionResult corrupt(const PointCloud& clean, const CorruptionConfig& config);

void write_ground_truth(const std::filesystem::path& stem, const CorruptionGroundTruth& gt);
CorruptionGroundTruth read_ground_truth(const std::filesystem::path& stem);

}  // namespace shapefit
