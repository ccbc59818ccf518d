#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "shapefit/completion.hpp"
#include "shapefit/config.hpp"
#include "shapefit/model_io.hpp"
#include "shapefit/pipeline.hpp"
#include "shapefit/point_io.hpp"
#include "shapefit/rigid.hpp"
#include "shapefit/shape_stats.hpp"
#include "shapefit/synthetic.hpp"

namespace fs = std::filesystem;
using namespace shapefit;
using nlohmann::json;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> workers;
    std::string out;
};

Config load_config(const Globals& g) {
    Config c = g.config.empty() ? Config() : Config::load(g.config);
    const auto unknown = c.unknown_keys(known_config_keys());
    if (!unknown.empty()) throw InvalidArgument("unknown config key: " + unknown.front());
    if (g.seed) c.set("pipeline.seed", std::to_string(*g.seed));
    if (g.workers) c.set("pipeline.workers", std::to_string(*g.workers));
    if (!g.out.empty()) c.set("pipeline.output", fs::absolute(g.out).string());
    return c;
}

fs::path require_out(const Globals& g) {
    if (g.out.empty()) throw InvalidArgument("--out is required");
    fs::create_directories(g.out);
    return g.out;
}

std::uint64_t seed_of(const Globals& g, const Config& c) { return g.seed.value_or(c.get_u64("pipeline.seed", 0)); }

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
}

json transform_json(const RigidTransform& tf) {
    json r = json::array();
    for (int i = 0; i < 3; ++i) r.push_back({tf.rotation(i, 0), tf.rotation(i, 1), tf.rotation(i, 2)});
    return {{"rotation", r}, {"translation", {tf.translation(0), tf.translation(1), tf.translation(2)}}, {"scale", tf.scale}};
}

int finish(const RunReport& report) {
    std::cout << report.outcomes.size() - report.failures() << " of " << report.outcomes.size() << " runs succeeded\n";
    return report.all_failed() ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Registration and completion of partial 3D shapes"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "INI configuration file");
    app.add_option("--seed", g.seed, "Master seed");
    app.add_option("--workers", g.workers, "Parallel targets");
    app.add_option("--out", g.out, "Output directory");

    int status = 0;

    auto* synth = app.add_subcommand("synth", "Write a synthetic corresponded ear dataset");
    std::size_t synth_count = 20, synth_points = 2000, synth_modes = 5;
    synth->add_option("--count", synth_count, "Number of shapes");
    synth->add_option("--points", synth_points, "Points per shape");
    synth->add_option("--modes", synth_modes, "Deformation modes");
    synth->callback([&] {
        const fs::path out = require_out(g);
        const Config c = load_config(g);
        // Command-line values win over the config file.
        auto pick = [&](const char* flag, const char* key, std::size_t cli) {
            if (synth->count(flag) > 0) return cli;
            return static_cast<std::size_t>(c.get_int(key, static_cast<long long>(cli)));
        };
        const std::size_t count = pick("--count", "synth.count", synth_count);
        const SyntheticFamily fam =
            make_ear_family(pick("--points", "synth.points", synth_points), pick("--modes", "synth.modes", synth_modes));
        fs::create_directories(out / "clean");
        Rng rng(seed_of(g, c));
        for (std::size_t i = 0; i < count; ++i) {
            std::ostringstream name;
            name << "shape_" << std::setw(4) << std::setfill('0') << i << ".ply";
            io::write_ply(out / "clean" / name.str(), fam.random_shape(rng));
        }
        io::write_ply(out / "template.ply", PointCloud(fam.mean));
        const RegionSpec mr = fam.missing_region();
        const RegionSpec orr = fam.outlier_region();
        std::ofstream ini(out / "corruption.ini");
        ini << "[corruption]\n"
            << "missing_region = sphere: " << io::format_double(mr.center(0)) << ", " << io::format_double(mr.center(1))
            << ", " << io::format_double(mr.center(2)) << ", " << io::format_double(mr.radius) << "\n"
            << "outlier_region = sphere: " << io::format_double(orr.center(0)) << ", " << io::format_double(orr.center(1))
            << ", " << io::format_double(orr.center(2)) << ", " << io::format_double(orr.radius) << "\n";
        std::cout << "wrote " << count << " shapes to " << (out / "clean").string() << "\n";
    });

    auto* crop_cmd = app.add_subcommand("crop", "Keep the points of a cloud inside a region");
    std::string crop_input, crop_region, crop_output;
    crop_cmd->add_option("--input", crop_input, "Point cloud")->required();
    crop_cmd->add_option("--region", crop_region, "sphere: cx, cy, cz, r | box: x0, y0, z0, x1, y1, z1 | indices: file")
        ->required();
    crop_cmd->add_option("--output", crop_output, "Output point cloud");
    crop_cmd->callback([&] {
        const Config c = load_config(g);
        const PointCloud cloud = io::read_point_cloud(crop_input);
        const PointCloud kept = crop(cloud, parse_region(crop_region, c));
        const fs::path out = crop_output.empty() ? require_out(g) / fs::path(crop_input).filename() : fs::path(crop_output);
        io::write_point_cloud(out, kept);
        std::cout << kept.size() << " of " << cloud.size() << " points kept\n";
    });

    auto* simulate = app.add_subcommand("simulate", "Corrupt a clean dataset with ground truth");
    std::string sim_clean;
    simulate->add_option("--clean", sim_clean, "Directory of clean corresponded shapes")->required();
    simulate->callback([&] {
        const fs::path out = require_out(g);
        const Config c = load_config(g);
        SimulationOptions opt;
        opt.corruption = corruption_config_from(c);
        opt.rotation_max_deg = c.get_double("simulate.rotation_max_deg", 0.0);
        opt.translation_max = c.get_double("simulate.translation_max", 0.0);
        opt.seed = seed_of(g, c);
        const auto entries = make_simulated_dataset(sim_clean, opt, out);
        std::size_t bad = 0;
        for (const auto& e : entries) {
            if (!e.error.empty()) {
                ++bad;
                std::cerr << e.name << ": " << e.error << "\n";
            }
        }
        std::cout << entries.size() - bad << " samples written to " << out.string() << "\n";
        if (bad == entries.size() && !entries.empty()) status = 1;
    });

    auto* reg = app.add_subcommand("register", "Rigid registration of a template to a target");
    std::string reg_template, reg_target, reg_method = "ransip";
    reg->add_option("--template", reg_template, "Template point cloud")->required();
    reg->add_option("--target", reg_target, "Target point cloud")->required();
    reg->add_option("--method", reg_method, "icp or ransip");
    reg->callback([&] {
        const fs::path out = require_out(g);
        const Config c = load_config(g);
        const PointCloud templ = io::read_point_cloud(reg_template);
        const PointCloud target = io::read_point_cloud(reg_target);
        const Stage1Output s1 = run_stage1(parse_rigid_method(reg_method), templ, target, icp_params_from(c),
                                           ransip_params_from(c), seed_of(g, c));
        write_correspondences_csv(out / "correspondences.csv", s1.rigid.correspondences, s1.placed_template.points(), target);
        io::write_ply(out / "placed.ply", s1.placed_template);
        io::write_index_list(out / "outliers.txt", s1.classification.outlier_targets);
        io::write_index_list(out / "missing.txt", s1.classification.missing_templates);
        json j = {{"transform", transform_json(s1.rigid.transform)},
                  {"cost", s1.rigid.cost},
                  {"trials", s1.rigid.trials_run},
                  {"iterations", s1.rigid.iterations},
                  {"assigned", s1.rigid.correspondences.assigned_count()},
                  {"outliers", s1.classification.outlier_targets.size()}};
        write_json(out / "transform.json", j);
        std::cout << "cost " << s1.rigid.cost << "\n";
    });

    auto* refine = app.add_subcommand("refine", "Non-rigid refinement of a placed template");
    std::string ref_template, ref_target, ref_method = "bcpd", ref_strip;
    refine->add_option("--template", ref_template, "Placed template, e.g. placed.ply from register")->required();
    refine->add_option("--target", ref_target, "Target point cloud")->required();
    refine->add_option("--method", ref_method, "cpd or bcpd");
    refine->add_option("--strip", ref_strip, "Index list of target points to drop first");
    refine->callback([&] {
        const fs::path out = require_out(g);
        const Config c = load_config(g);
        const PointCloud templ = io::read_point_cloud(ref_template);
        const PointCloud target = io::read_point_cloud(ref_target);
        const std::vector<std::size_t> strip = ref_strip.empty() ? std::vector<std::size_t>{} : io::read_index_list(ref_strip);
        const Stage2Output s2 = run_stage2(parse_nonrigid_method(ref_method), templ, target, strip, cpd_params_from(c),
                                           bcpd_params_from(c), std::numeric_limits<double>::infinity());
        write_correspondences_csv(out / "correspondences.csv", s2.correspondences, s2.deformed_template.points(), target);
        io::write_ply(out / "registered.ply", s2.deformed_template);
        write_json(out / "refine.json", {{"status", s2.status}, {"assigned", s2.correspondences.assigned_count()}});
        std::cout << s2.status << "\n";
    });

    auto* complete = app.add_subcommand("complete", "Complete a registered shape");
    std::string comp_template, comp_target, comp_corr, comp_method = "gp", comp_model, comp_output;
    complete->add_option("--template", comp_template, "Registered template, e.g. registered.ply")->required();
    complete->add_option("--target", comp_target, "Target point cloud")->required();
    complete->add_option("--correspondences", comp_corr, "Correspondence CSV")->required();
    complete->add_option("--method", comp_method, "template, ppca, gp or mean");
    complete->add_option("--model", comp_model, "Model directory or .sfm file");
    complete->add_option("--output", comp_output, "Completed shape file");
    complete->callback([&] {
        const Config c = load_config(g);
        const PointCloud templ = io::read_point_cloud(comp_template);
        const PointCloud target = io::read_point_cloud(comp_target);
        const CorrespondenceMap map = read_correspondences_csv(comp_corr, target.size());
        LoadedModels models;
        if (!comp_model.empty()) models = load_models(comp_model);
        CompletionOptions opt;
        opt.observation_noise = c.get_double("pipeline.observation_noise");
        opt.exact_kernel = c.get_bool("pipeline.exact_kernel", false);
        opt.alignment_rounds = static_cast<int>(c.get_int("pipeline.alignment_rounds", 5));
        const CompletionOutput res = complete_shape(parse_completion_method(comp_method), templ, target, map, models, opt);
        const fs::path out = comp_output.empty() ? require_out(g) / "completed.ply" : fs::path(comp_output);
        io::write_point_cloud(out, res.shape);
        std::cout << res.status << "\n";
    });

    auto* pipeline = app.add_subcommand("pipeline", "Rigid, non-rigid and completion stages for every target");
    pipeline->callback([&] {
        const PipelineConfig pc = pipeline_config_from(load_config(g));
        status = finish(run_pipeline(pc));
    });

    auto* bench = app.add_subcommand("benchmark", "Score every configured method combination");
    bench->callback([&] {
        const PipelineConfig pc = pipeline_config_from(load_config(g));
        status = finish(run_benchmark(pc));
    });

    auto* models = app.add_subcommand("build-models", "GPA, PCA and GP models from a clean dataset");
    std::string models_clean;
    models->add_option("--clean", models_clean, "Directory of clean corresponded shapes")->required();
    models->callback([&] {
        const fs::path out = require_out(g);
        const Config c = load_config(g);
        ModelOptions opt;
        opt.components = static_cast<std::size_t>(c.get_int("models.components", 0));
        opt.gp_sigma = c.get_double("models.gp_sigma");
        opt.gp_amplitude = c.get_double("models.gp_amplitude", opt.gp_amplitude);
        opt.gp_rank = static_cast<std::size_t>(c.get_int("models.gp_rank", static_cast<long long>(opt.gp_rank)));
        opt.holdout = c.get_double("models.holdout", opt.holdout);
        opt.gpa_scale = c.get_bool("models.gpa_scale", opt.gpa_scale);
        opt.seed = seed_of(g, c);
        const ModelSplit split = build_models(models_clean, opt, out);
        std::cout << split.train.size() << " training and " << split.test.size() << " test shapes\n";
    });

    auto* stats = app.add_subcommand("stats", "GPA and deformation statistics of a dataset");
    std::string stats_dataset;
    stats->add_option("--dataset", stats_dataset, "Directory of corresponded shapes")->required();
    stats->callback([&] {
        const fs::path out = require_out(g);
        const Config c = load_config(g);
        GpaParams gp;
        gp.with_scale = c.get_bool("stats.gpa_scale", gp.with_scale);
        gp.max_iterations = static_cast<int>(c.get_int("stats.gpa_max_iterations", gp.max_iterations));
        gp.tol = c.get_double("stats.gpa_tol", gp.tol);
        std::vector<PointCloud> shapes;
        std::vector<std::string> names;
        for (const fs::path& p : list_shapes(stats_dataset)) {
            shapes.push_back(PointCloud(io::read_point_cloud(p).points()));
            names.push_back(p.stem().string());
        }
        const AlignedDataset aligned = gpa(shapes, gp);
        const DeformationStats st = deformation_stats(aligned);
        write_deformation_outputs(out, st, aligned.mean, names);
        const std::size_t worst = most_different_shape(st);
        write_json(out / "stats.json", {{"shapes", shapes.size()},
                                        {"gpa_iterations", aligned.iterations_used},
                                        {"gpa_converged", aligned.converged},
                                        {"most_different_shape", names[worst]},
                                        {"most_different_index", worst}});
        if (!aligned.converged) std::cerr << "warning: GPA did not converge\n";
        std::cout << "most different shape: " << names[worst] << "\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return status;
}
