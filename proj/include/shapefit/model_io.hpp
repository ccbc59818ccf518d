#pragma once

#include <filesystem>

#include "shapefit/completion.hpp"

namespace shapefit::io {

/**
 * Binary container: the 8 magic bytes "SFMODEL1", then little-endian
 * uint32 version, uint32 kind (1 = PCA, 2 = GP), uint32 matrix count, one
 * (uint64 rows, uint64 cols) pair per matrix, then every matrix as row-major
 * float64 in the same order.
 *
 * PCA matrices: mean (3M x 1), components (3M x d), eigenvalues (d x 1),
 * scalars (1 x 2: noise_sigma2, point_count).
 * GP matrices: reference (M x 3), mean_deformation (M x 3), eigenvectors
 * (3M x r), eigenvalues (r x 1), sample_deformations (n x 3M), scalars
 * (1 x 2: gaussian_sigma, gaussian_amplitude).
 *
 * A JSON sidecar with the hyperparameters is written next to the container
 * as <path>.json.
 */
void save_pca_model(const std::filesystem::path& path, const PcaShapeModel& model);
PcaShapeModel load_pca_model(const std::filesystem::path& path);

void save_gp_model(const std::filesystem::path& path, const GpShapeModel& model);
GpShapeModel load_gp_model(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

}  // namespace shapefit::io
