#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "shapefit/completion.hpp"
#include "shapefit/config.hpp"
#include "shapefit/corruption.hpp"
#include "shapefit/metrics.hpp"
#include "shapefit/nonrigid.hpp"
#include "shapefit/rigid.hpp"

namespace shapefit {

enum class RigidMethod { icp, ransip };
enum class NonrigidMethod { none, cpd, bcpd };
enum class CompletionMethod { none, deformed_template, ppca, gp, mean_shape };

std::string to_string(RigidMethod m);
std::string to_string(NonrigidMethod m);
std::string to_string(CompletionMethod m);
RigidMethod parse_rigid_method(const std::string& s);
NonrigidMethod parse_nonrigid_method(const std::string& s);
/// "none", "template", "ppca", "gp" or "mean".
CompletionMethod parse_completion_method(const std::string& s);

struct TargetSpec {
    std::string name;
    std::filesystem::path target;
    /// Stem for <stem>.gt.csv / <stem>.removed.txt.
    std::optional<std::filesystem::path> ground_truth;
    /// Uncorrupted target, same pose and indexing as the template.
    std::optional<std::filesystem::path> clean;
};

struct MethodPair {
    RigidMethod rigid = RigidMethod::ransip;
    NonrigidMethod nonrigid = NonrigidMethod::bcpd;
};

struct PipelineConfig {
    std::filesystem::path template_path;
    std::vector<TargetSpec> targets;
    std::filesystem::path output_dir;
    std::uint64_t seed = 0;
    unsigned workers = 1;

    RigidMethod stage1 = RigidMethod::ransip;
    NonrigidMethod stage2 = NonrigidMethod::bcpd;
    CompletionMethod completion = CompletionMethod::gp;

    IcpParams icp;
    RansipParams ransip;
    CpdParams cpd;
    BcpdParams bcpd;

    std::optional<std::filesystem::path> model_path;
    std::optional<double> observation_noise;  // mm^2
    bool exact_kernel = false;
    int alignment_rounds = 5;

    std::vector<MethodPair> method_matrix;
    std::vector<CompletionMethod> completion_matrix;

    void validate() const;
};

/**
 * Reads the [pipeline], [benchmark], stage and completion sections.
 * pipeline.targets is a dataset directory (a manifest.json from `simulate`
 * is honoured) or a comma-separated list of files.
 */
PipelineConfig pipeline_config_from(const Config& config);

/// Point clouds (.ply, .obj, .csv) in a directory, sorted by file name.
std::vector<std::filesystem::path> list_shapes(const std::filesystem::path& dir);
/// Targets of a dataset directory: manifest.json when present, else every shape.
std::vector<TargetSpec> dataset_targets(const std::filesystem::path& dir);

struct Stage1Output {
    RigidResult rigid;
    PointClassification classification;
    PointCloud placed_template;
};

Stage1Output run_stage1(RigidMethod method, const PointCloud& templ, const PointCloud& target, const IcpParams& icp,
                        const RansipParams& ransip, std::uint64_t seed);

struct Stage2Output {
    PointCloud deformed_template;
    /// Assignments index the full target; stripped points are outliers.
    CorrespondenceMap correspondences;
    std::string status;
};

/// Non-rigid refinement of an already placed template against the target
/// without `stripped` points. NonrigidMethod::none returns the nearest-point map.
Stage2Output run_stage2(NonrigidMethod method, const PointCloud& placed, const PointCloud& target,
                        const std::vector<std::size_t>& stripped, const CpdParams& cpd, const BcpdParams& bcpd,
                        double none_threshold, const KernelBasis* basis = nullptr);

struct LoadedModels {
    std::optional<PcaShapeModel> pca;
    std::optional<GpShapeModel> gp;
};

LoadedModels load_models(const std::filesystem::path& path);

struct CompletionOptions {
    std::optional<double> observation_noise;
    bool exact_kernel = false;
    int alignment_rounds = 5;
};

struct CompletionOutput {
    PointCloud shape;
    std::string status;
};

/**
 * Observation m is the target point matched to template m. Model-based
 * options alternate a rigid fit of the observations onto the current model
 * estimate with a model completion, `alignment_rounds` times, and return the
 * result in the target frame.
 */
CompletionOutput complete_shape(CompletionMethod method, const PointCloud& deformed_template, const PointCloud& target,
                                const CorrespondenceMap& correspondences, const LoadedModels& models,
                                const CompletionOptions& options);

struct TargetOutcome {
    std::string name;
    std::string method;
    bool ok = false;
    std::string error;
    /// Stage-1 and final registration scores, when ground truth exists.
    std::optional<RegistrationScore> stage1_score;
    std::optional<RegistrationScore> score;
    std::optional<double> reconstruction_error;
    std::string stage2_status;
    std::string completion_status;
};

struct RunReport {
    std::vector<TargetOutcome> outcomes;
    std::size_t failures() const;
    bool all_failed() const { return !outcomes.empty() && failures() == outcomes.size(); }
};

/**
 * Per target: stage 1, outlier stripping, stage 2, completion. Writes
 * <out>/<name>/{stage1.csv, correspondences.csv, completed.ply}, then
 * metrics.csv, summary.json and report.json.
 */
RunReport run_pipeline(const PipelineConfig& config);

/// Every method pair (default: icp and ransip crossed with cpd and bcpd),
/// and every completion option for the configured pair.
/// Writes <out>/benchmark/<method>/... plus benchmark.csv, comparison.csv
/// and benchmark_summary.json.
RunReport run_benchmark(const PipelineConfig& config);

struct SimulationOptions {
    CorruptionConfig corruption;
    double rotation_max_deg = 0.0;
    double translation_max = 0.0;  // mm
    std::uint64_t seed = 0;
};

struct ManifestEntry {
    std::string name;
    std::uint64_t seed = 0;
    std::filesystem::path target;
    std::filesystem::path clean;
    std::filesystem::path ground_truth;
    std::size_t kept = 0, removed = 0, outliers = 0;
    std::string error;
};

/**
 * Corrupts every clean shape with seed derive_seed(options.seed, i), then
 * moves the corrupted and the clean copy by the same random pose. Writes
 * <name>.ply, <name>.clean.ply, <name>.gt.csv, <name>.removed.txt and
 * manifest.json into out_dir.
 */
std::vector<ManifestEntry> make_simulated_dataset(const std::filesystem::path& clean_dir, const SimulationOptions& options,
                                                  const std::filesystem::path& out_dir);

struct ModelOptions {
    std::size_t components = 0;  // 0: min(10, available)
    std::optional<double> gp_sigma;  // default 10% of the mean-shape diameter
    double gp_amplitude = 1.0;       // mm^2
    std::size_t gp_rank = 100;
    double holdout = 0.0;
    bool gpa_scale = false;
    std::uint64_t seed = 0;
};

struct ModelSplit {
    std::vector<std::string> train;
    std::vector<std::string> test;
};

/// Deterministic shuffle under `seed`; the test share is round(holdout * n).
ModelSplit split_dataset(const std::vector<std::string>& names, double holdout, std::uint64_t seed);

/// gpa -> PCA and GP models. Writes pca.sfm, gp.sfm (+ .json), mean.ply and
/// split.json into out_dir.
ModelSplit build_models(const std::filesystem::path& clean_dir, const ModelOptions& options,
                        const std::filesystem::path& out_dir);

PointCloud crop(const PointCloud& cloud, const RegionSpec& region);

}  // namespace shapefit
