#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "shapefit/geometry.hpp"

namespace shapefit::io {

enum class PlyEncoding { ascii, binary_little_endian };
enum class PlyScalar { float32, float64 };

struct PlyWriteOptions {
    PlyEncoding encoding = PlyEncoding::binary_little_endian;
    PlyScalar scalar = PlyScalar::float64;
    /// Extra per-vertex scalar properties, e.g. {"deformation", values}.
    std::vector<std::pair<std::string, std::vector<double>>> scalar_fields;
};

/// PLY reader: ascii or binary little-endian, "vertex" element with x/y/z
/// (any numeric type) and optional nx/ny/nz. Other elements are skipped.
PointCloud read_ply(const std::filesystem::path& path);
void write_ply(const std::filesystem::path& path, const PointCloud& cloud, const PlyWriteOptions& options = {});

/// OBJ: `v` and `vn` records; faces and everything else are ignored. Normals
/// are attached only when their count equals the vertex count.
PointCloud read_obj(const std::filesystem::path& path);
void write_obj(const std::filesystem::path& path, const PointCloud& cloud);

/// CSV with header x,y,z[,nx,ny,nz]. Values are written in shortest
/// round-trip form, so reading back reproduces every double bit-exactly.
PointCloud read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const PointCloud& cloud);

/// Dispatch on the extension (.ply, .obj, .csv, case-insensitive).
PointCloud read_point_cloud(const std::filesystem::path& path);
void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud);

/// Zero-based indices, one per line; blank lines and '#' comments ignored.
std::vector<std::size_t> read_index_list(const std::filesystem::path& path);
void write_index_list(const std::filesystem::path& path, const std::vector<std::size_t>& indices);

/// Shortest text form that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view text);

}  // namespace shapefit::io
