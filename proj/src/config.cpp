#include "shapefit/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numbers>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>

#include "shapefit/point_io.hpp"

namespace shapefit {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

/// Drops trailing `;` / `#` comments, which the INI parser keeps in values.
std::string strip_comment(const std::string& v) {
    const auto pos = v.find_first_of(";#");
    return trim(pos == std::string::npos ? v : v.substr(0, pos));
}

std::vector<double> parse_numbers(const std::string& text, std::size_t expected, const std::string& what) {
    std::vector<double> out;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
        item = trim(item);
        if (!item.empty()) out.push_back(io::parse_double(item));
    }
    if (out.size() != expected) throw InvalidArgument(what + " needs " + std::to_string(expected) + " numbers");
    return out;
}

void collect(const boost::property_tree::ptree& t, const std::string& prefix, std::vector<std::string>& out) {
    for (const auto& [k, child] : t) {
        const std::string key = prefix.empty() ? k : prefix + "." + k;
        if (child.empty()) out.push_back(key);
        else collect(child, key, out);
    }
}

}  // namespace

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    Config c = parse(ss.str());
    c.base_dir_ = std::filesystem::absolute(path).parent_path();
    return c;
}

Config Config::parse(const std::string& text) {
    Config c;
    std::istringstream in(text);
    try {
        boost::property_tree::ini_parser::read_ini(in, c.tree_);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw InvalidArgument(std::string("malformed config: ") + e.what());
    }
    c.base_dir_ = std::filesystem::current_path();
    return c;
}

bool Config::has(const std::string& key) const { return get_string(key).has_value(); }

std::optional<std::string> Config::get_string(const std::string& key) const {
    const auto v = tree_.get_optional<std::string>(key);
    if (!v) return std::nullopt;
    const std::string s = strip_comment(*v);
    if (s.empty()) return std::nullopt;
    return s;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    return get_string(key).value_or(fallback);
}

std::optional<double> Config::get_double(const std::string& key) const {
    const auto s = get_string(key);
    if (!s) return std::nullopt;
    try {
        return io::parse_double(*s);
    } catch (const Error&) {
        throw InvalidArgument("config key " + key + " is not a number: " + *s);
    }
}

double Config::get_double(const std::string& key, double fallback) const { return get_double(key).value_or(fallback); }

long long Config::get_int(const std::string& key, long long fallback) const {
    const auto s = get_string(key);
    if (!s) return fallback;
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(*s, &pos);
        if (pos != s->size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw InvalidArgument("config key " + key + " is not an integer: " + *s);
    }
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto s = get_string(key);
    if (!s) return fallback;
    try {
        std::size_t pos = 0;
        if (!s->empty() && (*s)[0] == '-') throw std::invalid_argument("negative");
        const unsigned long long v = std::stoull(*s, &pos);
        if (pos != s->size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw InvalidArgument("config key " + key + " is not an unsigned integer: " + *s);
    }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    const auto s = get_string(key);
    if (!s) return fallback;
    const std::string v = lower(*s);
    if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
    if (v == "false" || v == "no" || v == "off" || v == "0") return false;
    throw InvalidArgument("config key " + key + " is not a boolean: " + *s);
}

std::vector<std::string> Config::get_list(const std::string& key) const {
    std::vector<std::string> out;
    const auto s = get_string(key);
    if (!s) return out;
    std::stringstream ss(*s);
    for (std::string item; std::getline(ss, item, ',');) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

void Config::set(const std::string& key, const std::string& value) { tree_.put(key, value); }

std::vector<std::string> Config::keys() const {
    std::vector<std::string> out;
    collect(tree_, "", out);
    return out;
}

std::vector<std::string> Config::unknown_keys(const std::vector<std::string>& known) const {
    std::vector<std::string> out;
    for (const std::string& k : keys()) {
        if (std::find(known.begin(), known.end(), k) == known.end()) out.push_back(k);
    }
    return out;
}

std::filesystem::path Config::resolve(const std::string& value) const {
    std::filesystem::path p(value);
    if (p.is_absolute() || base_dir_.empty()) return p;
    return base_dir_ / p;
}

RegionSpec parse_region(const std::string& text, const Config& config) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw InvalidArgument("region must look like kind: values");
    const std::string kind = lower(trim(text.substr(0, colon)));
    const std::string rest = trim(text.substr(colon + 1));
    if (kind == "sphere") {
        const auto v = parse_numbers(rest, 4, "sphere region");
        return RegionSpec::sphere(Vec3(v[0], v[1], v[2]), v[3], "sphere");
    }
    if (kind == "box") {
        const auto v = parse_numbers(rest, 6, "box region");
        return RegionSpec::box(Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5]), "box");
    }
    if (kind == "indices") return RegionSpec::from_indices(io::read_index_list(config.resolve(rest)), rest);
    throw InvalidArgument("unknown region kind: " + kind);
}

IcpParams icp_params_from(const Config& c, const std::string& s) {
    IcpParams p;
    p.max_iterations = static_cast<int>(c.get_int(s + ".max_iterations", p.max_iterations));
    p.convergence_tol = c.get_double(s + ".convergence_tol", p.convergence_tol);
    p.correspondence_threshold = c.get_double(s + ".correspondence_threshold", p.correspondence_threshold);
    const std::string loss = lower(c.get_string(s + ".robust_loss", "squared"));
    if (loss == "squared") p.robust_loss = RobustLoss::squared;
    else if (loss == "huber") p.robust_loss = RobustLoss::huber;
    else throw InvalidArgument("unknown robust_loss: " + loss);
    p.huber_delta = c.get_double(s + ".huber_delta", p.huber_delta);
    p.with_scale = c.get_bool(s + ".with_scale", p.with_scale);
    p.accelerate = c.get_bool(s + ".accelerate", p.accelerate);
    p.unique_matches = c.get_bool(s + ".unique_matches", p.unique_matches);
    p.validate();
    return p;
}

RansipParams ransip_params_from(const Config& c) {
    RansipParams p;
    p.confidence = c.get_double("ransip.confidence", p.confidence);
    p.max_trials = static_cast<int>(c.get_int("ransip.max_trials", p.max_trials));
    p.inlier_distance_threshold = c.get_double("ransip.inlier_distance_threshold");
    if (const auto deg = c.get_double("ransip.normal_angle_gate_deg")) p.normal_angle_gate = *deg * std::numbers::pi / 180.0;
    p.icp = icp_params_from(c, "icp");
    p.validate();
    return p;
}

CpdParams cpd_params_from(const Config& c) {
    CpdParams p;
    p.w = c.get_double("cpd.w", p.w);
    p.beta = c.get_double("cpd.beta", p.beta);
    p.lambda = c.get_double("cpd.lambda", p.lambda);
    p.max_iterations = static_cast<int>(c.get_int("cpd.max_iterations", p.max_iterations));
    p.sigma2_tol = c.get_double("cpd.sigma2_tol", p.sigma2_tol);
    p.low_rank_terms = static_cast<std::size_t>(c.get_int("cpd.low_rank_terms", static_cast<long long>(p.low_rank_terms)));
    p.missing_threshold = c.get_double("cpd.missing_threshold", p.missing_threshold);
    p.outlier_threshold = c.get_double("cpd.outlier_threshold", p.outlier_threshold);
    p.validate();
    return p;
}

BcpdParams bcpd_params_from(const Config& c) {
    BcpdParams p;
    p.w = c.get_double("bcpd.w", p.w);
    p.beta = c.get_double("bcpd.beta", p.beta);
    p.lambda = c.get_double("bcpd.lambda", p.lambda);
    p.gamma = c.get_double("bcpd.gamma", p.gamma);
    p.kappa = c.get_double("bcpd.kappa", p.kappa);
    p.max_iterations = static_cast<int>(c.get_int("bcpd.max_iterations", p.max_iterations));
    p.convergence_tol = c.get_double("bcpd.convergence_tol", p.convergence_tol);
    p.low_rank_terms = static_cast<std::size_t>(c.get_int("bcpd.low_rank_terms", static_cast<long long>(p.low_rank_terms)));
    p.missing_threshold = c.get_double("bcpd.missing_threshold", p.missing_threshold);
    p.outlier_threshold = c.get_double("bcpd.outlier_threshold", p.outlier_threshold);
    p.validate();
    return p;
}

CorruptionConfig corruption_config_from(const Config& c) {
    CorruptionConfig p;
    p.uniform_missing_ratio = c.get_double("corruption.uniform_missing_ratio", p.uniform_missing_ratio);
    p.structured_missing_ratio = c.get_double("corruption.structured_missing_ratio", p.structured_missing_ratio);
    p.uniform_outlier_ratio = c.get_double("corruption.uniform_outlier_ratio", p.uniform_outlier_ratio);
    p.structured_outlier_ratio = c.get_double("corruption.structured_outlier_ratio", p.structured_outlier_ratio);
    p.noise_sigma = c.get_double("corruption.noise_sigma", p.noise_sigma);
    if (const auto r = c.get_string("corruption.missing_region")) p.missing_region = parse_region(*r, c);
    if (const auto r = c.get_string("corruption.outlier_region")) p.outlier_region = parse_region(*r, c);
    p.seed = c.get_u64("corruption.seed", p.seed);
    p.validate();
    return p;
}

const std::vector<std::string>& known_config_keys() {
    static const std::vector<std::string> keys = {
        "pipeline.template", "pipeline.targets", "pipeline.output", "pipeline.seed", "pipeline.workers",
        "pipeline.stage1", "pipeline.stage2", "pipeline.completion", "pipeline.model", "pipeline.observation_noise",
        "pipeline.exact_kernel", "pipeline.alignment_rounds",
        "benchmark.methods", "benchmark.completions",
        "icp.max_iterations", "icp.convergence_tol", "icp.correspondence_threshold", "icp.robust_loss",
        "icp.huber_delta", "icp.with_scale", "icp.accelerate", "icp.unique_matches",
        "ransip.confidence", "ransip.max_trials", "ransip.inlier_distance_threshold", "ransip.normal_angle_gate_deg",
        "cpd.w", "cpd.beta", "cpd.lambda", "cpd.max_iterations", "cpd.sigma2_tol", "cpd.low_rank_terms",
        "cpd.missing_threshold", "cpd.outlier_threshold",
        "bcpd.w", "bcpd.beta", "bcpd.lambda", "bcpd.gamma", "bcpd.kappa", "bcpd.max_iterations",
        "bcpd.convergence_tol", "bcpd.low_rank_terms", "bcpd.missing_threshold", "bcpd.outlier_threshold",
        "corruption.uniform_missing_ratio", "corruption.structured_missing_ratio", "corruption.missing_region",
        "corruption.uniform_outlier_ratio", "corruption.structured_outlier_ratio", "corruption.outlier_region",
        "corruption.noise_sigma", "corruption.seed",
        "simulate.rotation_max_deg", "simulate.translation_max",
        "models.components", "models.gp_sigma", "models.gp_amplitude", "models.gp_rank", "models.holdout",
        "models.gpa_scale",
        "stats.gpa_scale", "stats.gpa_max_iterations", "stats.gpa_tol",
        "synth.count", "synth.points", "synth.modes",
    };
    return keys;
}

}  // namespace shapefit
