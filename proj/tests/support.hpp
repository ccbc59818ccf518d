#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "shapefit/geometry.hpp"
#include "shapefit/random.hpp"

namespace shapefit::testing {

inline Points random_points(std::size_t n, std::uint64_t seed, double extent = 10.0) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(-extent, extent);
    Points p(static_cast<Eigen::Index>(n), 3);
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (int c = 0; c < 3; ++c) p(i, c) = u(rng);
    return p;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("shapefit_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace shapefit::testing
