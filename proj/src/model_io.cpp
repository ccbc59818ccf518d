#include "shapefit/model_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "shapefit/point_io.hpp"

namespace shapefit::io {

namespace {

static_assert(std::endian::native == std::endian::little, "model container I/O assumes a little-endian host");

constexpr char kMagic[8] = {'S', 'F', 'M', 'O', 'D', 'E', 'L', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kKindPca = 1;
constexpr std::uint32_t kKindGp = 2;

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in, const std::filesystem::path& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("truncated model file " + path.string());
    return v;
}

void write_container(const std::filesystem::path& path, std::uint32_t kind, const std::vector<RowMajor>& mats) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, kind);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(mats.size()));
    for (const RowMajor& m : mats) {
        put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
        put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    }
    for (const RowMajor& m : mats) {
        out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<RowMajor> read_container(const std::filesystem::path& path, std::uint32_t kind, std::size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IoError("not a shapefit model file: " + path.string());
    if (take<std::uint32_t>(in, path) != kVersion) throw IoError("unsupported model version in " + path.string());
    if (take<std::uint32_t>(in, path) != kind) throw IoError("model kind mismatch in " + path.string());
    if (take<std::uint32_t>(in, path) != count) throw IoError("unexpected matrix count in " + path.string());
    std::vector<std::pair<std::uint64_t, std::uint64_t>> dims(count);
    for (auto& d : dims) {
        d.first = take<std::uint64_t>(in, path);
        d.second = take<std::uint64_t>(in, path);
        if (d.first > (std::uint64_t{1} << 32) || d.second > (std::uint64_t{1} << 32))
            throw IoError("implausible matrix size in " + path.string());
    }
    std::vector<RowMajor> mats;
    for (const auto& [r, c] : dims) {
        RowMajor m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
        if (!in) throw IoError("truncated model file " + path.string());
        mats.push_back(std::move(m));
    }
    return mats;
}

void write_sidecar(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(sidecar_path(path));
    if (!out) throw IoError("cannot open " + sidecar_path(path).string() + " for writing");
    out << j.dump(2) << '\n';
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    return std::filesystem::path(path.string() + ".json");
}

void save_pca_model(const std::filesystem::path& path, const PcaShapeModel& model) {
    model.validate();
    RowMajor scalars(1, 2);
    scalars << model.noise_sigma2, static_cast<double>(model.point_count);
    write_container(path, kKindPca, {RowMajor(model.mean), RowMajor(model.components), RowMajor(model.eigenvalues), scalars});

    nlohmann::json j;
    j["format"] = "SFMODEL1";
    j["kind"] = "pca";
    j["point_count"] = model.point_count;
    j["components"] = model.rank();
    j["noise_sigma2"] = model.noise_sigma2;
    j["eigenvalues"] = std::vector<double>(model.eigenvalues.data(), model.eigenvalues.data() + model.eigenvalues.size());
    write_sidecar(path, j);
}

PcaShapeModel load_pca_model(const std::filesystem::path& path) {
    const std::vector<RowMajor> m = read_container(path, kKindPca, 4);
    if (m[3].size() != 2) throw IoError("malformed PCA scalars in " + path.string());
    PcaShapeModel model;
    model.mean = Eigen::Map<const Eigen::VectorXd>(m[0].data(), m[0].size());
    model.components = m[1];
    model.eigenvalues = Eigen::Map<const Eigen::VectorXd>(m[2].data(), m[2].size());
    model.noise_sigma2 = m[3](0, 0);
    model.point_count = static_cast<std::size_t>(m[3](0, 1));
    try {
        model.validate();
    } catch (const InvalidArgument& e) {
        throw IoError("invalid PCA model in " + path.string() + ": " + e.what());
    }
    return model;
}

void save_gp_model(const std::filesystem::path& path, const GpShapeModel& model) {
    model.validate();
    RowMajor scalars(1, 2);
    scalars << model.gaussian_sigma, model.gaussian_amplitude;
    write_container(path, kKindGp,
                    {RowMajor(model.reference.points()), RowMajor(model.mean_deformation), RowMajor(model.eigenvectors),
                     RowMajor(model.eigenvalues), RowMajor(model.sample_deformations), scalars});

    nlohmann::json j;
    j["format"] = "SFMODEL1";
    j["kind"] = "gp";
    j["point_count"] = model.point_count();
    j["rank"] = model.rank();
    j["sample_count"] = model.sample_deformations.rows();
    j["gaussian_sigma"] = model.gaussian_sigma;
    j["gaussian_amplitude"] = model.gaussian_amplitude;
    j["eigenvalues"] = std::vector<double>(model.eigenvalues.data(), model.eigenvalues.data() + model.eigenvalues.size());
    write_sidecar(path, j);
}

GpShapeModel load_gp_model(const std::filesystem::path& path) {
    const std::vector<RowMajor> m = read_container(path, kKindGp, 6);
    if (m[0].cols() != 3 || m[1].cols() != 3 || m[5].size() != 2) throw IoError("malformed GP model in " + path.string());
    GpShapeModel model;
    model.reference = PointCloud(Points(m[0]));
    model.mean_deformation = m[1];
    model.eigenvectors = m[2];
    model.eigenvalues = Eigen::Map<const Eigen::VectorXd>(m[3].data(), m[3].size());
    model.sample_deformations = m[4];
    model.gaussian_sigma = m[5](0, 0);
    model.gaussian_amplitude = m[5](0, 1);
    try {
        model.validate();
    } catch (const InvalidArgument& e) {
        throw IoError("invalid GP model in " + path.string() + ": " + e.what());
    }
    return model;
}

}  // namespace shapefit::io
