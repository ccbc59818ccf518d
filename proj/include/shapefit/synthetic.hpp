#pragma once

#include <vector>

#include "shapefit/corruption.hpp"
#include "shapefit/geometry.hpp"
#include "shapefit/random.hpp"

namespace shapefit {

/**
 * Parametric family of corresponded ear-like surfaces: a curved, folded
 * sheet about 60 mm tall plus linear deformation modes. Point i of every
 * member sits at the same surface parameter, so members are corresponded
 * by index.
 */
struct SyntheticFamily {
    Points mean;
    std::vector<Points> modes;       // unit-coefficient displacement fields
    std::vector<double> mode_sigma;  // standard deviation of each coefficient, mm

    std::size_t point_count() const { return static_cast<std::size_t>(mean.rows()); }
    std::size_t mode_count() const { return modes.size(); }

    PointCloud shape(const Eigen::VectorXd& coefficients) const;
    /// Coefficients drawn as N(0, mode_sigma^2).
    PointCloud random_shape(Rng& rng) const;

    /// Sphere on the lower inner part, used for structured missing data.
    RegionSpec missing_region() const;
    /// Sphere straddling the outer rim, used for structured outliers.
    RegionSpec outlier_region() const;
};

SyntheticFamily make_ear_family(std::size_t point_count, std::size_t mode_count = 5);

/// Element i of the Halton sequence in the given prime base, i >= 1.
double halton(std::size_t index, unsigned base);

}  // namespace shapefit
