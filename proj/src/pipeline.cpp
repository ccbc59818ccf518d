#include "shapefit/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <thread>

#include <json.hpp>

#include "shapefit/model_io.hpp"
#include "shapefit/point_io.hpp"
#include "shapefit/random.hpp"
#include "shapefit/shape_stats.hpp"

namespace shapefit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

bool is_shape_file(const fs::path& p) {
    const std::string ext = lower(p.extension().string());
    return ext == ".ply" || ext == ".obj" || ext == ".csv";
}

/// File name without its extension.
std::string shape_name(const fs::path& p) { return p.stem().string(); }

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
}

json ratio_json(const Ratio& r) { return r ? json(*r) : json("NONE"); }

json score_json(const RegistrationScore& s) {
    return {{"distance_error", s.distance_error},
            {"correspondence_fraction", s.correspondence_fraction},
            {"outlier_precision", ratio_json(s.outlier_precision)},
            {"outlier_recall", ratio_json(s.outlier_recall)},
            {"missing_precision", ratio_json(s.missing_precision)},
            {"missing_recall", ratio_json(s.missing_recall)}};
}

/// Runs job(i) for i in [0, n) on up to `workers` threads; results are slotted by index.
template <typename Job>
void parallel_for(std::size_t n, unsigned workers, Job job) {
    const unsigned threads = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) job(i);
        });
    }
    for (auto& th : pool) th.join();
}

struct TargetData {
    PointCloud target;
    std::optional<CorruptionGroundTruth> gt;
    std::optional<PointCloud> clean;
};

TargetData load_target(const TargetSpec& spec) {
    TargetData d;
    d.target = io::read_point_cloud(spec.target);
    if (spec.ground_truth) {
        d.gt = read_ground_truth(*spec.ground_truth);
        if (d.gt->kept_original_index.size() != d.target.size())
            throw InvalidArgument("ground truth does not match target " + spec.target.string());
    }
    if (spec.clean) d.clean = io::read_point_cloud(*spec.clean);
    return d;
}

std::optional<RegistrationScore> try_score(const CorrespondenceMap& map, const TargetData& d) {
    if (!d.gt || !d.clean) return std::nullopt;
    return score_registration(map, *d.gt, d.target, *d.clean);
}

std::optional<KernelBasis> shared_basis(const PipelineConfig& c, const PointCloud& templ, NonrigidMethod m) {
    if (m == NonrigidMethod::bcpd && c.bcpd.low_rank_terms > 0)
        return make_kernel_basis(templ.points(), c.bcpd.beta, c.bcpd.low_rank_terms, c.bcpd.seed);
    if (m == NonrigidMethod::cpd && c.cpd.low_rank_terms > 0)
        return make_kernel_basis(templ.points(), c.cpd.beta, c.cpd.low_rank_terms, c.cpd.seed);
    return std::nullopt;
}

std::string method_label(const MethodPair& m) { return to_string(m.rigid) + "+" + to_string(m.nonrigid); }

std::uint64_t target_seed(std::uint64_t master, std::size_t index) { return derive_seed(master, 1000 + index); }

/// Stage 1 threshold used for stripping and for the stage-2 "none" map.
double stage1_threshold(const Stage1Output& s1) { return s1.rigid.correspondences.threshold_used; }

std::vector<ScoreRow> to_rows(const std::vector<TargetOutcome>& outcomes) {
    std::vector<ScoreRow> rows;
    for (const TargetOutcome& o : outcomes) {
        ScoreRow r;
        r.sample = o.name;
        r.method = o.method;
        r.registration = o.score;
        r.reconstruction_error = o.reconstruction_error;
        r.error = o.error;
        rows.push_back(std::move(r));
    }
    return rows;
}

json outcome_json(const TargetOutcome& o) {
    json j;
    j["name"] = o.name;
    j["method"] = o.method;
    j["status"] = o.ok ? "ok" : "failed";
    if (!o.ok) j["error"] = o.error;
    if (!o.stage2_status.empty()) j["stage2_status"] = o.stage2_status;
    if (!o.completion_status.empty()) j["completion_status"] = o.completion_status;
    if (o.stage1_score) j["stage1_score"] = score_json(*o.stage1_score);
    if (o.score) j["score"] = score_json(*o.score);
    if (o.reconstruction_error) j["reconstruction_error"] = *o.reconstruction_error;
    return j;
}

void write_report(const fs::path& path, const PipelineConfig& c, const std::vector<TargetOutcome>& outcomes) {
    json j;
    j["seed"] = c.seed;
    j["stage1"] = to_string(c.stage1);
    j["stage2"] = to_string(c.stage2);
    j["completion"] = to_string(c.completion);
    j["target_count"] = outcomes.size();
    std::size_t failed = 0;
    json list = json::array();
    for (const TargetOutcome& o : outcomes) {
        if (!o.ok) ++failed;
        list.push_back(outcome_json(o));
    }
    j["failures"] = failed;
    j["targets"] = list;
    write_json(path, j);
}

PointCloud observed_model_estimate(const LoadedModels& models) {
    if (models.pca) return models.pca->mean_shape();
    if (models.gp) return PointCloud(Points(models.gp->reference.points() + models.gp->mean_deformation));
    throw InvalidArgument("completion needs a shape model");
}

}  // namespace

std::string to_string(RigidMethod m) { return m == RigidMethod::icp ? "icp" : "ransip"; }

std::string to_string(NonrigidMethod m) {
    switch (m) {
        case NonrigidMethod::none: return "none";
        case NonrigidMethod::cpd: return "cpd";
        case NonrigidMethod::bcpd: return "bcpd";
    }
    return "none";
}

std::string to_string(CompletionMethod m) {
    switch (m) {
        case CompletionMethod::none: return "none";
        case CompletionMethod::deformed_template: return "template";
        case CompletionMethod::ppca: return "ppca";
        case CompletionMethod::gp: return "gp";
        case CompletionMethod::mean_shape: return "mean";
    }
    return "none";
}

RigidMethod parse_rigid_method(const std::string& s) {
    const std::string v = lower(s);
    if (v == "icp") return RigidMethod::icp;
    if (v == "ransip") return RigidMethod::ransip;
    throw InvalidArgument("unknown rigid method: " + s);
}

NonrigidMethod parse_nonrigid_method(const std::string& s) {
    const std::string v = lower(s);
    if (v == "none") return NonrigidMethod::none;
    if (v == "cpd") return NonrigidMethod::cpd;
    if (v == "bcpd") return NonrigidMethod::bcpd;
    throw InvalidArgument("unknown non-rigid method: " + s);
}

CompletionMethod parse_completion_method(const std::string& s) {
    const std::string v = lower(s);
    if (v == "none") return CompletionMethod::none;
    if (v == "template") return CompletionMethod::deformed_template;
    if (v == "ppca") return CompletionMethod::ppca;
    if (v == "gp") return CompletionMethod::gp;
    if (v == "mean") return CompletionMethod::mean_shape;
    throw InvalidArgument("unknown completion method: " + s);
}

void PipelineConfig::validate() const {
    if (template_path.empty()) throw InvalidArgument("pipeline.template is required");
    if (!fs::exists(template_path)) throw InvalidArgument("template not found: " + template_path.string());
    if (targets.empty()) throw InvalidArgument("no targets given");
    for (const TargetSpec& t : targets) {
        if (!fs::exists(t.target)) throw InvalidArgument("target not found: " + t.target.string());
    }
    if (output_dir.empty()) throw InvalidArgument("an output directory is required");
    const bool needs_model = completion == CompletionMethod::ppca || completion == CompletionMethod::gp ||
                             completion == CompletionMethod::mean_shape ||
                             std::any_of(completion_matrix.begin(), completion_matrix.end(), [](CompletionMethod m) {
                                 return m == CompletionMethod::ppca || m == CompletionMethod::gp || m == CompletionMethod::mean_shape;
                             });
    if (needs_model && !model_path) throw InvalidArgument("pipeline.model is required for model-based completion");
    if (model_path && !fs::exists(*model_path)) throw InvalidArgument("model not found: " + model_path->string());
    if (alignment_rounds < 1) throw InvalidArgument("alignment_rounds must be positive");
    if (observation_noise && !(*observation_noise >= 0.0)) throw InvalidArgument("observation noise must be non-negative");
    icp.validate();
    ransip.validate();
    cpd.validate();
    bcpd.validate();
}

std::vector<fs::path> list_shapes(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && is_shape_file(e.path())) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<TargetSpec> dataset_targets(const fs::path& dir) {
    const fs::path manifest = dir / "manifest.json";
    std::vector<TargetSpec> out;
    if (fs::exists(manifest)) {
        std::ifstream in(manifest);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw IoError("malformed manifest " + manifest.string() + ": " + e.what());
        }
        for (const json& e : j.at("samples")) {
            if (e.contains("error")) continue;
            TargetSpec t;
            t.name = e.at("name").get<std::string>();
            t.target = dir / e.at("target").get<std::string>();
            t.clean = dir / e.at("clean").get<std::string>();
            t.ground_truth = dir / e.at("ground_truth").get<std::string>();
            out.push_back(std::move(t));
        }
        return out;
    }
    for (const fs::path& p : list_shapes(dir)) {
        TargetSpec t;
        t.name = shape_name(p);
        t.target = p;
        out.push_back(std::move(t));
    }
    return out;
}

PipelineConfig pipeline_config_from(const Config& c) {
    PipelineConfig p;
    if (const auto t = c.get_string("pipeline.template")) p.template_path = c.resolve(*t);
    const std::vector<std::string> targets = c.get_list("pipeline.targets");
    if (targets.size() == 1 && fs::is_directory(c.resolve(targets[0]))) {
        p.targets = dataset_targets(c.resolve(targets[0]));
    } else {
        for (const std::string& t : targets) {
            TargetSpec s;
            s.target = c.resolve(t);
            s.name = shape_name(s.target);
            p.targets.push_back(std::move(s));
        }
    }
    if (const auto o = c.get_string("pipeline.output")) p.output_dir = c.resolve(*o);
    p.seed = c.get_u64("pipeline.seed", p.seed);
    p.workers = static_cast<unsigned>(std::max<long long>(1, c.get_int("pipeline.workers", p.workers)));
    p.stage1 = parse_rigid_method(c.get_string("pipeline.stage1", "ransip"));
    p.stage2 = parse_nonrigid_method(c.get_string("pipeline.stage2", "bcpd"));
    p.completion = parse_completion_method(c.get_string("pipeline.completion", "gp"));
    p.icp = icp_params_from(c, "icp");
    p.ransip = ransip_params_from(c);
    p.cpd = cpd_params_from(c);
    p.bcpd = bcpd_params_from(c);
    if (const auto m = c.get_string("pipeline.model")) p.model_path = c.resolve(*m);
    p.observation_noise = c.get_double("pipeline.observation_noise");
    p.exact_kernel = c.get_bool("pipeline.exact_kernel", p.exact_kernel);
    p.alignment_rounds = static_cast<int>(c.get_int("pipeline.alignment_rounds", p.alignment_rounds));
    for (const std::string& item : c.get_list("benchmark.methods")) {
        const auto plus = item.find('+');
        if (plus == std::string::npos) throw InvalidArgument("benchmark method must look like rigid+nonrigid: " + item);
        p.method_matrix.push_back({parse_rigid_method(item.substr(0, plus)), parse_nonrigid_method(item.substr(plus + 1))});
    }
    for (const std::string& item : c.get_list("benchmark.completions")) p.completion_matrix.push_back(parse_completion_method(item));
    return p;
}

Stage1Output run_stage1(RigidMethod method, const PointCloud& templ, const PointCloud& target, const IcpParams& icp,
                        const RansipParams& ransip, std::uint64_t seed) {
    Stage1Output out;
    if (method == RigidMethod::icp) {
        out.rigid = shapefit::icp(templ, target, icp);
    } else {
        RansipParams p = ransip;
        p.seed = seed;
        out.rigid = shapefit::ransip(templ, target, p);
    }
    out.classification = classify_points(out.rigid, target);
    out.placed_template = apply_transform(PointCloud(templ.points()), out.rigid.transform);
    return out;
}

Stage2Output run_stage2(NonrigidMethod method, const PointCloud& placed, const PointCloud& target,
                        const std::vector<std::size_t>& stripped, const CpdParams& cpd, const BcpdParams& bcpd,
                        double none_threshold, const KernelBasis* basis) {
    Stage2Output out;
    if (method == NonrigidMethod::none) {
        out.deformed_template = PointCloud(placed.points());
        out.correspondences = nearest_correspondences(placed.points(), target, none_threshold);
        out.status = "rigid only";
        return out;
    }
    std::vector<bool> drop(target.size(), false);
    for (std::size_t j : stripped) drop.at(j) = true;
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < target.size(); ++j) {
        if (!drop[j]) keep.push_back(j);
    }
    if (keep.empty()) throw Error("no target points left after outlier stripping");
    const PointCloud reduced(target.select(keep).points());
    const PointCloud templ(placed.points());

    CorrespondenceMap local;
    if (method == NonrigidMethod::cpd) {
        CpdResult r = cpd_nonrigid(templ, reduced, cpd, basis);
        out.deformed_template = std::move(r.deformed_template);
        local = std::move(r.correspondences);
        out.status = to_string(r.status);
    } else {
        BcpdResult r = shapefit::bcpd(templ, reduced, bcpd, basis);
        out.deformed_template = std::move(r.deformed_template);
        local = std::move(r.correspondences);
        out.status = to_string(r.status);
    }
    out.correspondences.threshold_used = local.threshold_used;
    out.correspondences.assignments.resize(local.assignments.size());
    for (std::size_t m = 0; m < local.assignments.size(); ++m) {
        if (local.assignments[m]) out.correspondences.assignments[m] = keep[*local.assignments[m]];
    }
    for (std::size_t j : local.outlier_targets) out.correspondences.outlier_targets.insert(keep[j]);
    for (std::size_t j : stripped) out.correspondences.outlier_targets.insert(j);
    return out;
}

LoadedModels load_models(const fs::path& path) {
    LoadedModels m;
    if (fs::is_directory(path)) {
        if (fs::exists(path / "pca.sfm")) m.pca = io::load_pca_model(path / "pca.sfm");
        if (fs::exists(path / "gp.sfm")) m.gp = io::load_gp_model(path / "gp.sfm");
        if (!m.pca && !m.gp) throw IoError("no model files in " + path.string());
        return m;
    }
    try {
        m.pca = io::load_pca_model(path);
    } catch (const IoError&) {
        m.gp = io::load_gp_model(path);
    }
    return m;
}

CompletionOutput complete_shape(CompletionMethod method, const PointCloud& deformed_template, const PointCloud& target,
                                const CorrespondenceMap& correspondences, const LoadedModels& models,
                                const CompletionOptions& options) {
    CompletionOutput out;
    if (method == CompletionMethod::none || method == CompletionMethod::deformed_template) {
        out.shape = PointCloud(deformed_template.points());
        out.status = method == CompletionMethod::none ? "none" : "deformed template";
        return out;
    }
    if (method == CompletionMethod::ppca && !models.pca) throw InvalidArgument("PPCA completion needs a PCA model");
    if (method == CompletionMethod::gp && !models.gp) throw InvalidArgument("GP completion needs a GP model");

    PointCloud estimate = observed_model_estimate(models);
    if (method == CompletionMethod::ppca) estimate = models.pca->mean_shape();
    const std::size_t m_count = estimate.size();
    if (correspondences.assignments.size() != m_count) throw InvalidArgument("template does not match the shape model");

    std::vector<std::size_t> idx;
    std::vector<std::size_t> targets;
    for (std::size_t m = 0; m < m_count; ++m) {
        if (correspondences.assignments[m]) {
            idx.push_back(m);
            targets.push_back(*correspondences.assignments[m]);
        }
    }
    if (idx.size() < 3) throw Error("too few observations for completion");
    const Points observed = target.select(targets).points();

    RigidTransform to_model;
    const int rounds = method == CompletionMethod::mean_shape ? 1 : options.alignment_rounds;
    for (int round = 0; round < rounds; ++round) {
        to_model = fit_rigid_least_squares(observed, estimate.select(idx).points(), false);
        if (method == CompletionMethod::mean_shape) break;
        PartialObservation obs;
        obs.observed_indices = idx;
        obs.observed_positions = apply_transform(observed, to_model);
        obs.observation_noise = options.observation_noise;
        if (method == CompletionMethod::ppca) {
            estimate = ppca_complete(*models.pca, obs).cloud();
            out.status = "posterior mean";
        } else {
            GpCompletion g = gp_complete(*models.gp, obs, options.exact_kernel);
            estimate = std::move(g.shape);
            out.status = g.status;
        }
    }
    if (method == CompletionMethod::mean_shape) out.status = "mean shape";
    out.shape = apply_transform(PointCloud(estimate.points()), to_model.inverse());
    return out;
}

std::size_t RunReport::failures() const {
    return static_cast<std::size_t>(std::count_if(outcomes.begin(), outcomes.end(), [](const TargetOutcome& o) { return !o.ok; }));
}

RunReport run_pipeline(const PipelineConfig& config) {
    config.validate();
    fs::create_directories(config.output_dir);
    const PointCloud templ = io::read_point_cloud(config.template_path);
    LoadedModels models;
    if (config.model_path) models = load_models(*config.model_path);
    const std::optional<KernelBasis> basis = shared_basis(config, templ, config.stage2);
    const MethodPair pair{config.stage1, config.stage2};
    const std::string label = method_label(pair) + "+" + to_string(config.completion);
    CompletionOptions copt{config.observation_noise, config.exact_kernel, config.alignment_rounds};

    RunReport report;
    report.outcomes.resize(config.targets.size());
    parallel_for(config.targets.size(), config.workers, [&](std::size_t i) {
        const TargetSpec& spec = config.targets[i];
        TargetOutcome& o = report.outcomes[i];
        o.name = spec.name;
        o.method = label;
        try {
            const TargetData d = load_target(spec);
            const fs::path dir = config.output_dir / spec.name;
            fs::create_directories(dir);
            const Stage1Output s1 =
                run_stage1(config.stage1, templ, d.target, config.icp, config.ransip, target_seed(config.seed, i));
            write_correspondences_csv(dir / "stage1.csv", s1.rigid.correspondences, s1.placed_template.points(), d.target);
            o.stage1_score = try_score(s1.rigid.correspondences, d);

            const Stage2Output s2 = run_stage2(config.stage2, s1.placed_template, d.target, s1.classification.outlier_targets,
                                               config.cpd, config.bcpd, stage1_threshold(s1), basis ? &*basis : nullptr);
            o.stage2_status = s2.status;
            write_correspondences_csv(dir / "correspondences.csv", s2.correspondences, s2.deformed_template.points(), d.target);
            io::write_ply(dir / "registered.ply", s2.deformed_template);
            o.score = try_score(s2.correspondences, d);

            const CompletionOutput c =
                complete_shape(config.completion, s2.deformed_template, d.target, s2.correspondences, models, copt);
            o.completion_status = c.status;
            io::write_ply(dir / "completed.ply", c.shape);
            if (d.clean && d.clean->size() == c.shape.size()) o.reconstruction_error = reconstruction_error(c.shape, *d.clean);
            o.ok = true;
        } catch (const std::exception& e) {
            o.ok = false;
            o.error = e.what();
        }
    });

    const std::vector<ScoreRow> rows = to_rows(report.outcomes);
    write_scores_csv(config.output_dir / "metrics.csv", rows);
    write_scores_summary(config.output_dir / "summary.json", rows);
    write_report(config.output_dir / "report.json", config, report.outcomes);
    return report;
}

RunReport run_benchmark(const PipelineConfig& config) {
    config.validate();
    std::vector<MethodPair> pairs = config.method_matrix;
    if (pairs.empty()) {
        for (RigidMethod r : {RigidMethod::icp, RigidMethod::ransip})
            for (NonrigidMethod m : {NonrigidMethod::cpd, NonrigidMethod::bcpd}) pairs.push_back({r, m});
    }
    std::vector<CompletionMethod> completions = config.completion_matrix;
    if (completions.empty()) completions.push_back(config.completion);
    const MethodPair completion_pair{config.stage1, config.stage2};

    const fs::path root = config.output_dir / "benchmark";
    fs::create_directories(root);
    const PointCloud templ = io::read_point_cloud(config.template_path);
    LoadedModels models;
    if (config.model_path) models = load_models(*config.model_path);
    CompletionOptions copt{config.observation_noise, config.exact_kernel, config.alignment_rounds};

    std::map<NonrigidMethod, std::optional<KernelBasis>> bases;
    for (const MethodPair& p : pairs) bases.emplace(p.nonrigid, shared_basis(config, templ, p.nonrigid));
    bases.emplace(completion_pair.nonrigid, shared_basis(config, templ, completion_pair.nonrigid));

    const std::size_t n = config.targets.size();
    const std::size_t per_target = pairs.size() + completions.size();
    std::vector<TargetOutcome> outcomes(n * per_target);
    parallel_for(n, config.workers, [&](std::size_t i) {
        const TargetSpec& spec = config.targets[i];
        auto fail_all = [&](const std::string& msg) {
            for (std::size_t k = 0; k < per_target; ++k) {
                outcomes[i * per_target + k].name = spec.name;
                outcomes[i * per_target + k].error = msg;
            }
        };
        TargetData d;
        try {
            d = load_target(spec);
        } catch (const std::exception& e) {
            fail_all(e.what());
            for (std::size_t k = 0; k < pairs.size(); ++k) outcomes[i * per_target + k].method = method_label(pairs[k]);
            for (std::size_t k = 0; k < completions.size(); ++k)
                outcomes[i * per_target + pairs.size() + k].method = method_label(completion_pair) + "+" + to_string(completions[k]);
            return;
        }
        std::map<RigidMethod, std::optional<Stage1Output>> stage1;
        std::map<RigidMethod, std::string> stage1_error;
        auto get_stage1 = [&](RigidMethod m) -> const Stage1Output& {
            if (!stage1.count(m)) {
                try {
                    stage1[m] = run_stage1(m, templ, d.target, config.icp, config.ransip, target_seed(config.seed, i));
                } catch (const std::exception& e) {
                    stage1[m] = std::nullopt;
                    stage1_error[m] = e.what();
                }
            }
            if (!stage1[m]) throw Error(stage1_error[m]);
            return *stage1[m];
        };
        std::map<std::pair<RigidMethod, NonrigidMethod>, Stage2Output> stage2;
        auto get_stage2 = [&](const MethodPair& p) -> const Stage2Output& {
            const auto key = std::make_pair(p.rigid, p.nonrigid);
            if (!stage2.count(key)) {
                const Stage1Output& s1 = get_stage1(p.rigid);
                const auto& b = bases.at(p.nonrigid);
                stage2[key] = run_stage2(p.nonrigid, s1.placed_template, d.target, s1.classification.outlier_targets,
                                         config.cpd, config.bcpd, stage1_threshold(s1), b ? &*b : nullptr);
            }
            return stage2.at(key);
        };

        for (std::size_t k = 0; k < pairs.size(); ++k) {
            TargetOutcome& o = outcomes[i * per_target + k];
            o.name = spec.name;
            o.method = method_label(pairs[k]);
            try {
                const Stage2Output& s2 = get_stage2(pairs[k]);
                o.stage2_status = s2.status;
                o.stage1_score = try_score(get_stage1(pairs[k].rigid).rigid.correspondences, d);
                o.score = try_score(s2.correspondences, d);
                o.ok = true;
            } catch (const std::exception& e) {
                o.error = e.what();
            }
        }
        for (std::size_t k = 0; k < completions.size(); ++k) {
            TargetOutcome& o = outcomes[i * per_target + pairs.size() + k];
            o.name = spec.name;
            o.method = method_label(completion_pair) + "+" + to_string(completions[k]);
            try {
                const Stage2Output& s2 = get_stage2(completion_pair);
                const CompletionOutput c =
                    complete_shape(completions[k], s2.deformed_template, d.target, s2.correspondences, models, copt);
                o.completion_status = c.status;
                const fs::path dir = root / to_string(completions[k]);
                fs::create_directories(dir);
                io::write_ply(dir / (spec.name + ".ply"), c.shape);
                if (d.clean && d.clean->size() == c.shape.size()) o.reconstruction_error = reconstruction_error(c.shape, *d.clean);
                o.ok = true;
            } catch (const std::exception& e) {
                o.error = e.what();
            }
        }
    });

    RunReport report;
    report.outcomes = std::move(outcomes);
    const std::vector<ScoreRow> rows = to_rows(report.outcomes);
    write_scores_csv(config.output_dir / "benchmark.csv", rows);
    write_scores_summary(config.output_dir / "benchmark_summary.json", rows);

    // One row per method with the mean of every metric.
    std::vector<std::string> order;
    std::map<std::string, std::vector<const TargetOutcome*>> by_method;
    for (const TargetOutcome& o : report.outcomes) {
        if (!by_method.count(o.method)) order.push_back(o.method);
        by_method[o.method].push_back(&o);
    }
    std::ofstream cmp(config.output_dir / "comparison.csv", std::ios::binary);
    if (!cmp) throw IoError("cannot write comparison.csv");
    cmp << "method,distance_error,correspondence_fraction,outlier_precision,outlier_recall,missing_precision,"
           "missing_recall,reconstruction_error,failures\r\n";
    for (const std::string& method : order) {
        std::vector<std::vector<double>> cols(7);
        std::size_t failures = 0;
        for (const TargetOutcome* o : by_method[method]) {
            if (!o->ok) ++failures;
            if (o->score) {
                const RegistrationScore& s = *o->score;
                cols[0].push_back(s.distance_error);
                cols[1].push_back(s.correspondence_fraction);
                const Ratio rs[4] = {s.outlier_precision, s.outlier_recall, s.missing_precision, s.missing_recall};
                for (int k = 0; k < 4; ++k) {
                    if (rs[k]) cols[2 + k].push_back(*rs[k]);
                }
            }
            if (o->reconstruction_error) cols[6].push_back(*o->reconstruction_error);
        }
        cmp << csv_escape(method);
        for (const auto& c : cols) {
            cmp << ',' << (c.empty() ? std::string("NONE") : io::format_double(summarize(c).mean));
        }
        cmp << ',' << failures << "\r\n";
    }
    return report;
}

std::vector<ManifestEntry> make_simulated_dataset(const fs::path& clean_dir, const SimulationOptions& options,
                                                  const fs::path& out_dir) {
    options.corruption.validate();
    if (!(options.rotation_max_deg >= 0.0) || !(options.translation_max >= 0.0))
        throw InvalidArgument("pose ranges must be non-negative");
    fs::create_directories(out_dir);
    const std::vector<fs::path> files = list_shapes(clean_dir);
    std::vector<ManifestEntry> entries;
    json samples = json::array();
    for (std::size_t i = 0; i < files.size(); ++i) {
        ManifestEntry e;
        e.name = shape_name(files[i]);
        e.seed = derive_seed(options.seed, i);
        try {
            const PointCloud clean(io::read_point_cloud(files[i]).points());
            CorruptionConfig cc = options.corruption;
            cc.seed = e.seed;
            CorruptionResult r = corrupt(clean, cc);

            Rng rng(derive_seed(e.seed, 7));
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            RigidTransform pose;
            pose.rotation = axis_angle(random_unit_vector(rng), unit(rng) * options.rotation_max_deg * std::numbers::pi / 180.0);
            pose.translation = random_unit_vector(rng) * (unit(rng) * options.translation_max);

            PointCloud corrupted(apply_transform(r.cloud.points(), pose));
            const PointCloud posed_clean(apply_transform(clean.points(), pose));
            e.target = e.name + ".ply";
            e.clean = e.name + ".clean.ply";
            e.ground_truth = e.name;
            io::write_ply(out_dir / e.target, corrupted);
            io::write_ply(out_dir / e.clean, posed_clean);
            write_ground_truth(out_dir / e.name, r.ground_truth);
            e.kept = r.ground_truth.kept_count();
            e.removed = r.ground_truth.removed_indices.size();
            e.outliers = r.ground_truth.outlier_count();
        } catch (const std::exception& ex) {
            e.error = ex.what();
        }
        json j;
        j["name"] = e.name;
        j["seed"] = e.seed;
        if (e.error.empty()) {
            j["target"] = e.target.string();
            j["clean"] = e.clean.string();
            j["ground_truth"] = e.ground_truth.string();
            j["kept"] = e.kept;
            j["removed"] = e.removed;
            j["outliers"] = e.outliers;
        } else {
            j["error"] = e.error;
        }
        samples.push_back(j);
        entries.push_back(std::move(e));
    }
    const CorruptionConfig& c = options.corruption;
    json manifest;
    manifest["master_seed"] = options.seed;
    manifest["corruption"] = {{"uniform_missing_ratio", c.uniform_missing_ratio},
                              {"structured_missing_ratio", c.structured_missing_ratio},
                              {"uniform_outlier_ratio", c.uniform_outlier_ratio},
                              {"structured_outlier_ratio", c.structured_outlier_ratio},
                              {"noise_sigma", c.noise_sigma}};
    manifest["rotation_max_deg"] = options.rotation_max_deg;
    manifest["translation_max"] = options.translation_max;
    manifest["samples"] = samples;
    write_json(out_dir / "manifest.json", manifest);
    return entries;
}

ModelSplit split_dataset(const std::vector<std::string>& names, double holdout, std::uint64_t seed) {
    if (!(holdout >= 0.0 && holdout < 1.0)) throw InvalidArgument("holdout must be in [0, 1)");
    std::vector<std::size_t> order(names.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(order[i - 1], order[pick(rng)]);
    }
    const std::size_t test = ratio_count(holdout, names.size());
    std::vector<std::size_t> test_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test));
    std::sort(test_idx.begin(), test_idx.end());
    ModelSplit s;
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (std::binary_search(test_idx.begin(), test_idx.end(), i)) s.test.push_back(names[i]);
        else s.train.push_back(names[i]);
    }
    return s;
}

ModelSplit build_models(const fs::path& clean_dir, const ModelOptions& options, const fs::path& out_dir) {
    const std::vector<fs::path> files = list_shapes(clean_dir);
    std::vector<std::string> names;
    for (const fs::path& f : files) names.push_back(shape_name(f));
    const ModelSplit split = split_dataset(names, options.holdout, options.seed);
    if (split.train.size() < 2) throw InvalidArgument("at least two training shapes are required");

    std::vector<PointCloud> train;
    for (std::size_t i = 0; i < files.size(); ++i) {
        if (std::find(split.train.begin(), split.train.end(), names[i]) != split.train.end())
            train.push_back(PointCloud(io::read_point_cloud(files[i]).points()));
    }
    GpaParams gp_params;
    gp_params.with_scale = options.gpa_scale;
    const AlignedDataset aligned = gpa(train, gp_params);

    const std::size_t available = pca_available_components(aligned.shapes);
    const std::size_t d = options.components == 0 ? std::min<std::size_t>(10, available) : options.components;
    const PcaShapeModel pca = build_pca_model(aligned.shapes, d);
    const double sigma = options.gp_sigma.value_or(0.1 * shape_diameter(aligned.mean.points()));
    const GpShapeModel gp = build_gp_model(aligned.shapes, aligned.mean, sigma, options.gp_amplitude, options.gp_rank,
                                           derive_seed(options.seed, 1));

    fs::create_directories(out_dir);
    io::save_pca_model(out_dir / "pca.sfm", pca);
    io::save_gp_model(out_dir / "gp.sfm", gp);
    io::write_ply(out_dir / "mean.ply", aligned.mean);
    json j;
    j["seed"] = options.seed;
    j["holdout"] = options.holdout;
    j["train"] = split.train;
    j["test"] = split.test;
    j["gpa_iterations"] = aligned.iterations_used;
    j["gpa_converged"] = aligned.converged;
    write_json(out_dir / "split.json", j);
    return split;
}

PointCloud crop(const PointCloud& cloud, const RegionSpec& region) {
    const std::vector<std::size_t> idx = region.select(cloud);
    return cloud.select(idx);
}

}  // namespace shapefit
