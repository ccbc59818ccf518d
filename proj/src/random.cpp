#include "shapefit/random.hpp"

#include <cmath>
#include <numbers>

namespace shapefit {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

Mat3 random_rotation(Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double u1 = u(rng);
    const double u2 = u(rng);
    const double u3 = u(rng);
    const double two_pi = 2.0 * std::numbers::pi;
    const double a = std::sqrt(1.0 - u1);
    const double b = std::sqrt(u1);
    const Eigen::Quaterniond q(b * std::cos(two_pi * u3), a * std::sin(two_pi * u2), a * std::cos(two_pi * u2),
                               b * std::sin(two_pi * u3));
    return q.normalized().toRotationMatrix();
}

Vec3 random_unit_vector(Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 v;
    do {
        v = Vec3(n(rng), n(rng), n(rng));
    } while (v.norm() < 1e-12);
    return v.normalized();
}

}  // namespace shapefit
