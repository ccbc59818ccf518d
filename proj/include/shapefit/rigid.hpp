#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include "shapefit/geometry.hpp"

namespace shapefit {

enum class RobustLoss { squared, huber };

struct IcpParams {
    int max_iterations = 100;
    double convergence_tol = 1e-9;  // mm, change in RMS residual
    /// Pairs farther apart than this are left out of the fit and unassigned.
    double correspondence_threshold = std::numeric_limits<double>::infinity();
    RobustLoss robust_loss = RobustLoss::squared;
    double huber_delta = 1.0;  // mm
    bool with_scale = false;
    /// Over-relaxed steps along each update while they lower the residual.
    bool accelerate = true;
    /// Keep only the closest template point per target in the final map.
    bool unique_matches = false;

    void validate() const;
};

struct RansipParams {
    double confidence = 0.999;
    int max_trials = 200;
    /// Default: 5 x median nearest-neighbour spacing of the template.
    std::optional<double> inlier_distance_threshold;
    double normal_angle_gate = std::numbers::pi / 4.0;
    IcpParams icp;
    std::uint64_t seed = 0;

    void validate() const;
};

struct InlierPair {
    std::size_t template_index = 0;
    std::size_t target_index = 0;
    double distance = 0.0;
    double normal_angle = 0.0;  // radians
};

struct RigidResult {
    RigidTransform transform;
    CorrespondenceMap correspondences;
    /// ICP: RMS in-threshold residual. RANSIP: median inlier normal angle.
    double cost = 0.0;
    std::size_t trials_run = 1;
    int iterations = 0;
    /// RMS in-threshold residual of the initial pose and of every accepted iteration.
    std::vector<double> residual_history;

    // RANSIP only.
    std::vector<InlierPair> inliers;
    std::vector<double> trial_costs;  // +inf for trials without consensus
    std::size_t best_trial = 0;
};

/// Throws Error("registration diverged") when fewer than three pairs fall
/// within the correspondence threshold at some iteration.
RigidResult icp(const PointCloud& templ, const PointCloud& target, const IcpParams& params,
                const RigidTransform& init = RigidTransform::identity());

/// Randomised multi-start ICP scored by the median angle between the normals
/// of inlier pairs. Missing normals are estimated with the default k.
/// Throws Error("no consensus found") when no trial reaches three inliers.
RigidResult ransip(const PointCloud& templ, const PointCloud& target, const RansipParams& params);

/// Trials needed so that an all-inlier triple is drawn with `confidence`
/// when the inlier fraction is `w`: log(1-conf)/log(1-w^3).
double required_trials(double confidence, double inlier_fraction);

struct PointClassification {
    std::vector<std::size_t> inlier_targets;
    std::vector<std::size_t> outlier_targets;
    std::vector<std::size_t> missing_templates;
};

PointClassification classify_points(const RigidResult& result, const PointCloud& target);

/// Nearest-target map for an already placed template.
CorrespondenceMap nearest_correspondences(const Points& placed_template, const PointCloud& target,
                                          double threshold, bool unique_matches = false);

/// CSV rows template_index,target_index_or_-1,distance.
void write_correspondences_csv(const std::filesystem::path& path, const CorrespondenceMap& map,
                               const Points& placed_template, const PointCloud& target);
CorrespondenceMap read_correspondences_csv(const std::filesystem::path& path, std::size_t target_size);

}  // namespace shapefit
