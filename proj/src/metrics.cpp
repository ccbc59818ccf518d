#include "shapefit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "shapefit/point_io.hpp"

namespace shapefit {

namespace {

Ratio safe_ratio(std::size_t num, std::size_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

void check_template_count(const CorrespondenceMap& map, const CorruptionGroundTruth& gt) {
    if (map.assignments.size() != gt.original_count)
        throw InvalidArgument("template size does not match the clean target");
}

nlohmann::json stats_json(const SummaryStats& s) {
    if (s.count == 0) return {{"count", 0}};
    return {{"count", s.count}, {"mean", s.mean}, {"median", s.median}, {"q1", s.q1},
            {"q3", s.q3},       {"min", s.min},   {"max", s.max}};
}

}  // namespace

Ratio ConfusionCounts::precision() const { return safe_ratio(tn, tn + fp); }

Ratio ConfusionCounts::recall() const { return safe_ratio(tp, tp + fn); }

double distance_error(const CorrespondenceMap& correspondences, const CorruptionGroundTruth& ground_truth,
                      const PointCloud& target_corrupted, const PointCloud& target_clean) {
    check_template_count(correspondences, ground_truth);
    if (target_clean.size() != ground_truth.original_count)
        throw InvalidArgument("clean target does not match the ground truth");
    if (target_corrupted.size() != ground_truth.kept_original_index.size())
        throw InvalidArgument("corrupted target does not match the ground truth");
    const auto survived = ground_truth.original_to_corrupted();
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t m = 0; m < correspondences.assignments.size(); ++m) {
        const auto& a = correspondences.assignments[m];
        if (!a || !survived[m]) continue;
        if (*a >= target_corrupted.size()) throw InvalidArgument("correspondence target out of range");
        const std::int64_t orig = ground_truth.kept_original_index[*a];
        const Vec3 matched = orig == kNoIndex ? target_corrupted.point(*a) : target_clean.point(static_cast<std::size_t>(orig));
        sum += (target_clean.point(m) - matched).norm();
        ++count;
    }
    if (count == 0) throw Error("no scorable correspondences");
    return sum / static_cast<double>(count);
}

double correspondence_fraction(const CorrespondenceMap& correspondences, const CorruptionGroundTruth& ground_truth) {
    check_template_count(correspondences, ground_truth);
    const auto survived = ground_truth.original_to_corrupted();
    const std::size_t den = static_cast<std::size_t>(std::count_if(survived.begin(), survived.end(), [](const auto& s) { return s.has_value(); }));
    if (den == 0) throw Error("no template point has a surviving correspondent");
    return static_cast<double>(correspondences.assigned_count()) / static_cast<double>(den);
}

ConfusionCounts outlier_confusion(const std::set<std::size_t>& flagged_targets, const CorruptionGroundTruth& ground_truth) {
    const std::size_t n = ground_truth.kept_original_index.size();
    ConfusionCounts c;
    for (std::size_t j : flagged_targets) {
        if (j >= n) throw InvalidArgument("flagged target out of range");
    }
    for (std::size_t j = 0; j < n; ++j) {
        const bool truth = ground_truth.is_outlier(j);
        const bool flagged = flagged_targets.count(j) > 0;
        if (truth && flagged) ++c.tp;
        else if (truth) ++c.fn;
        else if (flagged) ++c.fp;
        else ++c.tn;
    }
    return c;
}

ConfusionCounts missing_confusion(const std::set<std::size_t>& flagged_templates, const CorruptionGroundTruth& ground_truth) {
    const std::size_t m = ground_truth.original_count;
    ConfusionCounts c;
    for (std::size_t i : flagged_templates) {
        if (i >= m) throw InvalidArgument("flagged template out of range");
    }
    const auto survived = ground_truth.original_to_corrupted();
    for (std::size_t i = 0; i < m; ++i) {
        const bool truth = !survived[i].has_value();
        const bool flagged = flagged_templates.count(i) > 0;
        if (truth && flagged) ++c.tp;
        else if (truth) ++c.fn;
        else if (flagged) ++c.fp;
        else ++c.tn;
    }
    return c;
}

std::pair<Ratio, Ratio> outlier_scores(const std::set<std::size_t>& flagged_targets, const CorruptionGroundTruth& ground_truth) {
    const ConfusionCounts c = outlier_confusion(flagged_targets, ground_truth);
    return {c.precision(), c.recall()};
}

std::pair<Ratio, Ratio> missing_scores(const std::set<std::size_t>& flagged_templates, const CorruptionGroundTruth& ground_truth) {
    const ConfusionCounts c = missing_confusion(flagged_templates, ground_truth);
    return {c.precision(), c.recall()};
}

double reconstruction_error(const PointCloud& predicted, const PointCloud& truth) {
    if (predicted.size() != truth.size()) throw InvalidArgument("point count mismatch");
    if (truth.empty()) throw InvalidArgument("empty point set");
    return mean_distance(predicted.points(), truth.points());
}

RegistrationScore score_registration(const CorrespondenceMap& correspondences, const CorruptionGroundTruth& ground_truth,
                                     const PointCloud& target_corrupted, const PointCloud& target_clean) {
    RegistrationScore s;
    s.distance_error = distance_error(correspondences, ground_truth, target_corrupted, target_clean);
    s.correspondence_fraction = correspondence_fraction(correspondences, ground_truth);
    std::tie(s.outlier_precision, s.outlier_recall) = outlier_scores(correspondences.outlier_targets, ground_truth);
    const auto missing = correspondences.missing_templates();
    std::tie(s.missing_precision, s.missing_recall) =
        missing_scores(std::set<std::size_t>(missing.begin(), missing.end()), ground_truth);
    return s;
}

SummaryStats summarize(std::vector<double> values) {
    SummaryStats s;
    s.count = values.size();
    if (values.empty()) return s;
    std::sort(values.begin(), values.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(values.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, values.size() - 1);
        return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
    };
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    s.median = quantile(0.5);
    s.q1 = quantile(0.25);
    s.q3 = quantile(0.75);
    s.min = values.front();
    s.max = values.back();
    return s;
}

std::string format_ratio(const Ratio& r) { return r ? io::format_double(*r) : "NONE"; }

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

void write_scores_csv(const std::filesystem::path& path, const std::vector<ScoreRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "sample,method,distance_error,correspondence_fraction,outlier_precision,outlier_recall,"
           "missing_precision,missing_recall,reconstruction_error,error\r\n";
    for (const ScoreRow& r : rows) {
        out << csv_escape(r.sample) << ',' << csv_escape(r.method) << ',';
        if (r.registration) {
            const RegistrationScore& s = *r.registration;
            out << io::format_double(s.distance_error) << ',' << io::format_double(s.correspondence_fraction) << ','
                << format_ratio(s.outlier_precision) << ',' << format_ratio(s.outlier_recall) << ','
                << format_ratio(s.missing_precision) << ',' << format_ratio(s.missing_recall) << ',';
        } else {
            out << "NONE,NONE,NONE,NONE,NONE,NONE,";
        }
        out << format_ratio(r.reconstruction_error) << ',' << csv_escape(r.error) << "\r\n";
    }
    if (!out) throw IoError("failed writing " + path.string());
}

void write_scores_summary(const std::filesystem::path& path, const std::vector<ScoreRow>& rows) {
    std::map<std::string, std::map<std::string, std::vector<double>>> values;
    std::map<std::string, std::size_t> failures;
    auto push = [&](const std::string& method, const char* metric, const Ratio& v) {
        auto& slot = values[method][metric];
        if (v) slot.push_back(*v);
    };
    for (const ScoreRow& r : rows) {
        if (!r.error.empty()) ++failures[r.method];
        if (r.registration) {
            const RegistrationScore& s = *r.registration;
            push(r.method, "distance_error", s.distance_error);
            push(r.method, "correspondence_fraction", s.correspondence_fraction);
            push(r.method, "outlier_precision", s.outlier_precision);
            push(r.method, "outlier_recall", s.outlier_recall);
            push(r.method, "missing_precision", s.missing_precision);
            push(r.method, "missing_recall", s.missing_recall);
        }
        push(r.method, "reconstruction_error", r.reconstruction_error);
    }
    nlohmann::json j;
    j["precision_definition"] = "TN/(TN+FP), i.e. specificity";
    j["undefined_ratio"] = "NONE values are skipped";
    nlohmann::json methods = nlohmann::json::object();
    for (const auto& [method, metrics] : values) {
        nlohmann::json m = nlohmann::json::object();
        for (const auto& [metric, v] : metrics) m[metric] = stats_json(summarize(v));
        m["failures"] = failures[method];
        methods[method] = m;
    }
    j["methods"] = methods;
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
}

}  // namespace shapefit
