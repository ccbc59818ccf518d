#include "shapefit/rigid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "shapefit/normals.hpp"
#include "shapefit/point_io.hpp"
#include "shapefit/random.hpp"
#include "shapefit/spatial_index.hpp"

namespace shapefit {

namespace {

constexpr double kInlierSpacingFactor = 5.0;

double median(std::vector<double> v) {
    const std::size_t n = v.size();
    auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (n % 2 == 1) return *mid;
    const double hi = *mid;
    const double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

struct IcpState {
    RigidTransform tf;
    std::vector<Neighbor> nn;
    std::vector<std::size_t> selected;
    double residual = std::numeric_limits<double>::infinity();  // RMS over selected pairs
};

IcpState evaluate(const Points& y, const KdTree& tree, const RigidTransform& tf, double thr) {
    IcpState s;
    s.tf = tf;
    s.nn = tree.nearest_all(apply_transform(y, tf));
    double sum = 0.0;
    for (std::size_t m = 0; m < s.nn.size(); ++m) {
        if (s.nn[m].distance <= thr) {
            s.selected.push_back(m);
            sum += s.nn[m].distance * s.nn[m].distance;
        }
    }
    if (!s.selected.empty()) s.residual = std::sqrt(sum / static_cast<double>(s.selected.size()));
    return s;
}

// Moves `from` a fraction `alpha` of the way to `to` (alpha > 1 extrapolates),
// rotating about the template centroid c.
RigidTransform blend(const RigidTransform& from, const RigidTransform& to, double alpha, const Vec3& c) {
    const Eigen::AngleAxisd delta(to.rotation * from.rotation.transpose());
    const Vec3 g0 = from.apply(c);
    const Vec3 g1 = to.apply(c);
    RigidTransform out;
    out.rotation = Eigen::AngleAxisd(alpha * delta.angle(), delta.axis()).toRotationMatrix() * from.rotation;
    out.scale = from.scale + alpha * (to.scale - from.scale);
    if (!(out.scale > 0.0)) out.scale = from.scale;
    out.translation = g0 + alpha * (g1 - g0) - out.scale * out.rotation * c;
    return out;
}

RigidResult run_icp(const PointCloud& templ, const PointCloud& target, const KdTree& tree,
                    const IcpParams& params, const RigidTransform& init) {
    const Points& y = templ.points();
    const Points& x = target.points();
    const double thr = params.correspondence_threshold;
    const Vec3 c = templ.centroid();

    RigidResult out;
    IcpState state = evaluate(y, tree, init, thr);
    if (state.selected.size() < 3) throw Error("registration diverged");
    out.residual_history.push_back(state.residual);

    for (int it = 1; it <= params.max_iterations; ++it) {
        const std::size_t n = state.selected.size();
        Points src(static_cast<Eigen::Index>(n), 3);
        Points dst(static_cast<Eigen::Index>(n), 3);
        Eigen::VectorXd w(static_cast<Eigen::Index>(n));
        for (std::size_t k = 0; k < n; ++k) {
            const auto e = static_cast<Eigen::Index>(k);
            const std::size_t m = state.selected[k];
            src.row(e) = y.row(static_cast<Eigen::Index>(m));
            dst.row(e) = x.row(static_cast<Eigen::Index>(state.nn[m].index));
            const double d = state.nn[m].distance;
            w(e) = (params.robust_loss == RobustLoss::huber && d > params.huber_delta) ? params.huber_delta / d : 1.0;
        }
        RigidTransform fitted;
        try {
            fitted = fit_rigid_weighted(src, dst, w, params.with_scale);
        } catch (const InvalidArgument&) {
            throw Error("registration diverged");
        }
        IcpState next = evaluate(y, tree, fitted, thr);
        if (next.selected.size() < 3) throw Error("registration diverged");

        if (params.accelerate) {
            // Over-relaxation along the update; doubles the step while the residual keeps falling.
            for (double alpha = 2.0; alpha <= 64.0; alpha *= 2.0) {
                IcpState trial = evaluate(y, tree, blend(state.tf, fitted, alpha, c), thr);
                if (trial.selected.size() < 3 || !(trial.residual < next.residual)) break;
                next = std::move(trial);
            }
        }
        if (next.residual > state.residual) break;  // keep the previous iterate
        const double gain = state.residual - next.residual;
        state = std::move(next);
        out.residual_history.push_back(state.residual);
        out.iterations = it;
        if (gain < params.convergence_tol) break;
    }

    out.transform = state.tf;
    out.cost = state.residual;
    out.trials_run = 1;
    out.correspondences =
        nearest_correspondences(apply_transform(y, state.tf), target, thr, params.unique_matches);
    return out;
}

}  // namespace

void IcpParams::validate() const {
    if (max_iterations < 1) throw InvalidArgument("icp max_iterations must be >= 1");
    if (!(convergence_tol > 0.0)) throw InvalidArgument("icp convergence_tol must be > 0");
    if (!(correspondence_threshold > 0.0)) throw InvalidArgument("icp correspondence_threshold must be > 0");
    if (robust_loss == RobustLoss::huber && !(huber_delta > 0.0)) {
        throw InvalidArgument("huber delta must be > 0");
    }
}

void RansipParams::validate() const {
    if (!(confidence > 0.0 && confidence < 1.0)) throw InvalidArgument("ransip confidence must lie in (0,1)");
    if (max_trials < 1) throw InvalidArgument("ransip max_trials must be >= 1");
    if (!(normal_angle_gate > 0.0 && normal_angle_gate <= std::numbers::pi)) {
        throw InvalidArgument("normal angle gate must lie in (0, pi]");
    }
    if (inlier_distance_threshold && !(*inlier_distance_threshold > 0.0)) {
        throw InvalidArgument("inlier distance threshold must be > 0");
    }
    icp.validate();
}

CorrespondenceMap nearest_correspondences(const Points& placed_template, const PointCloud& target,
                                          double threshold, bool unique_matches) {
    const KdTree tree(target.points());
    const auto nn = tree.nearest_all(placed_template);
    CorrespondenceMap map;
    map.threshold_used = threshold;
    map.assignments.resize(nn.size());
    for (std::size_t m = 0; m < nn.size(); ++m) {
        if (nn[m].distance <= threshold) map.assignments[m] = nn[m].index;
    }
    if (unique_matches) {
        std::vector<std::optional<std::size_t>> owner(target.size());
        for (std::size_t m = 0; m < nn.size(); ++m) {
            if (!map.assignments[m]) continue;
            auto& o = owner[*map.assignments[m]];
            if (!o || nn[m].distance < nn[*o].distance) o = m;
        }
        for (std::size_t m = 0; m < nn.size(); ++m) {
            if (map.assignments[m] && owner[*map.assignments[m]] != m) map.assignments[m].reset();
        }
    }
    const auto used = map.assigned_targets();
    for (std::size_t n = 0; n < target.size(); ++n) {
        if (!used.count(n)) map.outlier_targets.insert(n);
    }
    return map;
}

RigidResult icp(const PointCloud& templ, const PointCloud& target, const IcpParams& params,
                const RigidTransform& init) {
    params.validate();
    init.validate();
    if (templ.size() < 3 || target.size() < 3) throw InvalidArgument("icp needs at least 3 points per cloud");
    const KdTree tree(target.points());
    return run_icp(templ, target, tree, params, init);
}

double required_trials(double confidence, double inlier_fraction) {
    const double w3 = std::pow(std::clamp(inlier_fraction, 0.0, 1.0), 3.0);
    if (w3 <= 0.0) return std::numeric_limits<double>::infinity();
    if (w3 >= 1.0) return 0.0;
    return std::log(1.0 - confidence) / std::log(1.0 - w3);
}

RigidResult ransip(const PointCloud& templ_in, const PointCloud& target_in, const RansipParams& params) {
    params.validate();
    if (templ_in.size() < 3 || target_in.size() < 3) throw InvalidArgument("ransip needs at least 3 points per cloud");
    const PointCloud templ = ensure_normals(templ_in);
    const PointCloud target = ensure_normals(target_in);
    const double inlier_thr =
        params.inlier_distance_threshold.value_or(kInlierSpacingFactor * median_spacing(templ.points()));

    const KdTree tree(target.points());
    const Vec3 cy = templ.centroid();
    const Vec3 cx = target.centroid();
    const double m_count = static_cast<double>(templ.size());

    std::optional<RigidResult> best;
    std::vector<double> costs;
    std::size_t best_inliers = 0;
    int trial = 0;
    for (; trial < params.max_trials; ++trial) {
        if (trial > 0 && static_cast<double>(trial) >= required_trials(params.confidence, best_inliers / m_count)) break;

        Rng rng(derive_seed(params.seed, static_cast<std::uint64_t>(trial)));
        RigidTransform init;
        init.rotation = random_rotation(rng);
        init.translation = cx - init.rotation * cy;

        RigidResult r;
        try {
            r = run_icp(templ, target, tree, params.icp, init);
        } catch (const Error&) {
            costs.push_back(std::numeric_limits<double>::infinity());
            continue;
        }

        const Points placed = apply_transform(templ.points(), r.transform);
        const auto nn = tree.nearest_all(placed);
        std::vector<InlierPair> inliers;
        std::vector<double> angles;
        for (std::size_t m = 0; m < nn.size(); ++m) {
            if (nn[m].distance > inlier_thr || !templ.has_normal(m) || !target.has_normal(nn[m].index)) continue;
            const Vec3 a = r.transform.rotation * templ.normal(m);
            const double angle = std::acos(std::clamp(a.dot(target.normal(nn[m].index)), -1.0, 1.0));
            if (angle < params.normal_angle_gate) {
                inliers.push_back({m, nn[m].index, nn[m].distance, angle});
                angles.push_back(angle);
            }
        }
        if (inliers.size() < 3) {
            costs.push_back(std::numeric_limits<double>::infinity());
            continue;
        }
        const double cost = median(angles);
        costs.push_back(cost);
        best_inliers = std::max(best_inliers, inliers.size());
        if (!best || cost < best->cost) {
            r.cost = cost;
            r.inliers = std::move(inliers);
            r.best_trial = static_cast<std::size_t>(trial);
            best = std::move(r);
        }
    }
    if (!best) throw Error("no consensus found");

    RigidResult out = std::move(*best);
    out.trials_run = static_cast<std::size_t>(trial);
    out.trial_costs = std::move(costs);
    out.correspondences = nearest_correspondences(apply_transform(templ.points(), out.transform), target, inlier_thr,
                                                  params.icp.unique_matches);
    return out;
}

PointClassification classify_points(const RigidResult& result, const PointCloud& target) {
    result.correspondences.validate(target.size());
    PointClassification c;
    const auto used = result.correspondences.assigned_targets();
    for (std::size_t n = 0; n < target.size(); ++n) {
        (used.count(n) ? c.inlier_targets : c.outlier_targets).push_back(n);
    }
    c.missing_templates = result.correspondences.missing_templates();
    return c;
}

void write_correspondences_csv(const std::filesystem::path& path, const CorrespondenceMap& map,
                               const Points& placed_template, const PointCloud& target) {
    if (placed_template.rows() != static_cast<Eigen::Index>(map.assignments.size())) {
        throw InvalidArgument("template size does not match correspondence map");
    }
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << "template_index,target_index_or_-1,distance\n";
    for (std::size_t m = 0; m < map.assignments.size(); ++m) {
        const auto& a = map.assignments[m];
        f << m << ',';
        if (a) {
            const double d = (placed_template.row(static_cast<Eigen::Index>(m)).transpose() - target.point(*a)).norm();
            f << *a << ',' << io::format_double(d) << '\n';
        } else {
            f << "-1,\n";
        }
    }
}

CorrespondenceMap read_correspondences_csv(const std::filesystem::path& path, std::size_t target_size) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path.string());
    CorrespondenceMap map;
    std::string line;
    std::getline(f, line);
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string m, n;
        std::getline(ss, m, ',');
        std::getline(ss, n, ',');
        const long long t = std::stoll(n);
        if (std::stoull(m) != map.assignments.size()) throw IoError("correspondence rows out of order in " + path.string());
        map.assignments.push_back(t < 0 ? std::nullopt : std::optional<std::size_t>(static_cast<std::size_t>(t)));
    }
    const auto used = map.assigned_targets();
    for (std::size_t n = 0; n < target_size; ++n) {
        if (!used.count(n)) map.outlier_targets.insert(n);
    }
    map.validate(target_size);
    return map;
}

}  // namespace shapefit
