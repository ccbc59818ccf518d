#include "shapefit/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace shapefit {

namespace {

constexpr double kWidth = 36.0;   // mm
constexpr double kHeight = 60.0;  // mm

double smoothstep(double a, double b, double x) {
    const double t = std::clamp((x - a) / (b - a), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

double bump(double u, double v, double cu, double cv, double r) {
    return std::exp(-((u - cu) * (u - cu) + (v - cv) * (v - cv)) / (r * r));
}

// Ear-like outline: narrower at the lobe than at the top.
bool inside_outline(double u, double v) {
    const double half = 0.5 * (0.6 + 0.4 * v);
    const double du = (u - 0.5) / half;
    const double dv = (v - 0.5) / 0.5;
    return du * du + dv * dv <= 1.0;
}

Vec3 surface(double u, double v) {
    const double half = 0.5 * (0.6 + 0.4 * v);
    const double rho = std::hypot((u - 0.5) / half, (v - 0.5) / 0.5);
    const double rim = 12.0 * smoothstep(0.7, 1.0, rho) * smoothstep(0.1, 0.35, v);
    const double ridge = 4.0 * std::exp(-std::pow((rho - 0.55) / 0.1, 2.0)) * smoothstep(0.3, 0.6, v);
    const double z = rim + ridge - 12.0 * bump(u, v, 0.45, 0.4, 0.18) + 3.0 * v * v + 2.0 * std::sin(3.0 * u + 1.0);
    return {kWidth * (u - 0.5), kHeight * (v - 0.5), z};
}

Vec3 mode_field(std::size_t k, double u, double v) {
    const double pi = std::numbers::pi;
    switch (k) {
        case 0: return {0.0, 0.0, bump(u, v, 0.3, 0.7, 0.15)};
        case 1: return {0.0, (v - 0.5), 0.0};
        case 2: return {0.0, 0.0, u * u * u};
        case 3: return {(v - 0.5), 0.0, 0.0};
        case 4: return {0.0, 0.5 * bump(u, v, 0.5, 0.1, 0.2), bump(u, v, 0.5, 0.1, 0.2)};
        default: {
            const double a = static_cast<double>(k - 3);
            return {0.0, 0.0, std::sin(a * pi * u) * std::cos((a - 1.0) * pi * v)};
        }
    }
}

double mode_scale(std::size_t k) {
    switch (k) {
        case 0: return 3.0;
        case 1: return 4.0;
        case 2: return 3.0;
        case 3: return 2.5;
        case 4: return 2.0;
        default: return 1.5 / static_cast<double>(k - 3);
    }
}

}  // namespace

double halton(std::size_t index, unsigned base) {
    double f = 1.0;
    double r = 0.0;
    while (index > 0) {
        f /= base;
        r += f * static_cast<double>(index % base);
        index /= base;
    }
    return r;
}

SyntheticFamily make_ear_family(std::size_t point_count, std::size_t mode_count) {
    if (point_count < 10) throw InvalidArgument("synthetic family needs at least 10 points");
    std::vector<std::pair<double, double>> uv;
    uv.reserve(point_count);
    for (std::size_t i = 1; uv.size() < point_count; ++i) {
        const double u = halton(i, 2);
        const double v = halton(i, 3);
        if (inside_outline(u, v)) uv.emplace_back(u, v);
    }

    SyntheticFamily fam;
    fam.mean.resize(static_cast<Eigen::Index>(point_count), 3);
    for (std::size_t i = 0; i < point_count; ++i) {
        fam.mean.row(static_cast<Eigen::Index>(i)) = surface(uv[i].first, uv[i].second).transpose();
    }
    for (std::size_t k = 0; k < mode_count; ++k) {
        Points mode(static_cast<Eigen::Index>(point_count), 3);
        for (std::size_t i = 0; i < point_count; ++i) {
            mode.row(static_cast<Eigen::Index>(i)) = mode_field(k, uv[i].first, uv[i].second).transpose();
        }
        fam.modes.push_back(std::move(mode));
        fam.mode_sigma.push_back(mode_scale(k));
    }
    return fam;
}

PointCloud SyntheticFamily::shape(const Eigen::VectorXd& coefficients) const {
    if (coefficients.size() != static_cast<Eigen::Index>(modes.size())) {
        throw InvalidArgument("coefficient count does not match mode count");
    }
    Points p = mean;
    for (std::size_t k = 0; k < modes.size(); ++k) p += coefficients(static_cast<Eigen::Index>(k)) * modes[k];
    return PointCloud(std::move(p));
}

PointCloud SyntheticFamily::random_shape(Rng& rng) const {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd c(static_cast<Eigen::Index>(modes.size()));
    for (std::size_t k = 0; k < modes.size(); ++k) c(static_cast<Eigen::Index>(k)) = mode_sigma[k] * n(rng);
    return shape(c);
}

RegionSpec SyntheticFamily::missing_region() const {
    return RegionSpec::sphere(surface(0.5, 0.22), 12.0, "lower inner part");
}

RegionSpec SyntheticFamily::outlier_region() const {
    return RegionSpec::sphere(surface(0.85, 0.45), 10.0, "outer rim");
}

}  // namespace shapefit
