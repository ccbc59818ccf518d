#pragma once

#include <cstdint>
#include <random>

#include "shapefit/geometry.hpp"

namespace shapefit {

using Rng = std::mt19937_64;

/// Independent child seed for stream `stream` of a master seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/// Rotation drawn uniformly from SO(3) via a uniform unit quaternion.
Mat3 random_rotation(Rng& rng);

/// Uniform random unit vector.
Vec3 random_unit_vector(Rng& rng);

}  // namespace shapefit
