#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "shapefit/corruption.hpp"
#include "shapefit/geometry.hpp"

namespace shapefit {

/// An empty optional is an undefined ratio (zero denominator), written NONE.
using Ratio = std::optional<double>;

struct RegistrationScore {
    double distance_error = 0.0;          // mm
    double correspondence_fraction = 0.0; // may exceed 1
    Ratio outlier_precision;
    Ratio outlier_recall;
    Ratio missing_precision;
    Ratio missing_recall;
};

struct ConfusionCounts {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

    /// TN / (TN + FP). This is specificity; the name follows the evaluation protocol.
    Ratio precision() const;
    /// TP / (TP + FN).
    Ratio recall() const;
};

/**
 * Mean |x_m - x~_m| over template points that are matched and whose true
 * correspondent survived corruption. x_m is the clean target point m; x~_m is
 * the clean position of the matched target point, or its corrupted position
 * when it is an injected outlier. Template m corresponds to clean index m.
 * Throws Error("no scorable correspondences") when nothing can be scored.
 */
double distance_error(const CorrespondenceMap& correspondences, const CorruptionGroundTruth& ground_truth,
                      const PointCloud& target_corrupted, const PointCloud& target_clean);

/// Matches made over template points whose correspondent survived.
/// Throws Error when no template point has a surviving correspondent.
double correspondence_fraction(const CorrespondenceMap& correspondences, const CorruptionGroundTruth& ground_truth);

/// Positive class: injected outlier. Targets not flagged count as inliers.
ConfusionCounts outlier_confusion(const std::set<std::size_t>& flagged_targets, const CorruptionGroundTruth& ground_truth);
/// Positive class: template point whose correspondent was removed.
ConfusionCounts missing_confusion(const std::set<std::size_t>& flagged_templates, const CorruptionGroundTruth& ground_truth);

std::pair<Ratio, Ratio> outlier_scores(const std::set<std::size_t>& flagged_targets, const CorruptionGroundTruth& ground_truth);
std::pair<Ratio, Ratio> missing_scores(const std::set<std::size_t>& flagged_templates, const CorruptionGroundTruth& ground_truth);

/// Mean index-wise distance. Throws InvalidArgument on a point count mismatch.
double reconstruction_error(const PointCloud& predicted, const PointCloud& truth);

/// All registration scores; outliers and missing templates are read from the map.
RegistrationScore score_registration(const CorrespondenceMap& correspondences, const CorruptionGroundTruth& ground_truth,
                                     const PointCloud& target_corrupted, const PointCloud& target_clean);

struct SummaryStats {
    std::size_t count = 0;
    double mean = 0.0, median = 0.0, q1 = 0.0, q3 = 0.0, min = 0.0, max = 0.0;
};

/// Quartiles by linear interpolation between order statistics.
SummaryStats summarize(std::vector<double> values);

/// One CSV row per sample and method.
struct ScoreRow {
    std::string sample;
    std::string method;
    std::optional<RegistrationScore> registration;
    std::optional<double> reconstruction_error;
    std::string error;  // non-empty when the sample failed
};

std::string format_ratio(const Ratio& r);
std::string csv_escape(const std::string& field);

void write_scores_csv(const std::filesystem::path& path, const std::vector<ScoreRow>& rows);
/// Per method and metric: count/mean/median/q1/q3/min/max over defined values.
void write_scores_summary(const std::filesystem::path& path, const std::vector<ScoreRow>& rows);

}  // namespace shapefit
