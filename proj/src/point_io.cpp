#include "shapefit/point_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace shapefit::io {

namespace {

static_assert(std::endian::native == std::endian::little, "binary PLY support assumes a little-endian host");

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    return s;
}

std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream ss(line);
    std::vector<std::string> out;
    for (std::string tok; ss >> tok;) out.push_back(tok);
    return out;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    for (auto& s : out) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        s = b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    }
    return out;
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(path, mode);
    if (!in) throw IoError("cannot open " + path.string());
    return in;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(path, mode);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

/// Normalises stored normals that are not already unit within 1e-6 (those are
/// kept verbatim so files round-trip); zero vectors become undefined (NaN).
void attach_normals(PointCloud& cloud, Points normals) {
    for (Eigen::Index i = 0; i < normals.rows(); ++i) {
        const double len = normals.row(i).norm();
        if (std::abs(len - 1.0) <= 1e-6) continue;
        if (len > 0.0 && std::isfinite(len)) {
            normals.row(i) /= len;
        } else {
            normals.row(i).setConstant(std::numeric_limits<double>::quiet_NaN());
        }
    }
    cloud.set_normals(std::move(normals));
}

// --- PLY -------------------------------------------------------------------

enum class PlyType { int8, uint8, int16, uint16, int32, uint32, float32, float64 };

PlyType parse_ply_type(const std::string& name) {
    static const std::pair<const char*, PlyType> table[] = {
        {"char", PlyType::int8},     {"int8", PlyType::int8},       {"uchar", PlyType::uint8},
        {"uint8", PlyType::uint8},   {"short", PlyType::int16},     {"int16", PlyType::int16},
        {"ushort", PlyType::uint16}, {"uint16", PlyType::uint16},   {"int", PlyType::int32},
        {"int32", PlyType::int32},   {"uint", PlyType::uint32},     {"uint32", PlyType::uint32},
        {"float", PlyType::float32}, {"float32", PlyType::float32}, {"double", PlyType::float64},
        {"float64", PlyType::float64},
    };
    for (const auto& [key, type] : table) {
        if (name == key) return type;
    }
    throw IoError("unsupported PLY property type '" + name + "'");
}

std::size_t ply_type_size(PlyType t) {
    switch (t) {
        case PlyType::int8:
        case PlyType::uint8: return 1;
        case PlyType::int16:
        case PlyType::uint16: return 2;
        case PlyType::int32:
        case PlyType::uint32:
        case PlyType::float32: return 4;
        case PlyType::float64: return 8;
    }
    return 0;
}

template <typename T>
double load_as_double(const char* bytes) {
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return static_cast<double>(v);
}

double decode_binary(PlyType t, const char* bytes) {
    switch (t) {
        case PlyType::int8: return load_as_double<std::int8_t>(bytes);
        case PlyType::uint8: return load_as_double<std::uint8_t>(bytes);
        case PlyType::int16: return load_as_double<std::int16_t>(bytes);
        case PlyType::uint16: return load_as_double<std::uint16_t>(bytes);
        case PlyType::int32: return load_as_double<std::int32_t>(bytes);
        case PlyType::uint32: return load_as_double<std::uint32_t>(bytes);
        case PlyType::float32: return load_as_double<float>(bytes);
        case PlyType::float64: return load_as_double<double>(bytes);
    }
    return 0.0;
}

struct PlyProperty {
    std::string name;
    PlyType type = PlyType::float32;
    bool is_list = false;
    PlyType count_type = PlyType::uint8;
};

struct PlyElement {
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> properties;
};

double read_binary_value(std::istream& in, PlyType t) {
    char buf[8];
    in.read(buf, static_cast<std::streamsize>(ply_type_size(t)));
    if (!in) throw IoError("truncated binary PLY body");
    return decode_binary(t, buf);
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
    double v = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (first != last && *first == '+') ++first;
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc{} || res.ptr != last) {
        throw IoError("cannot parse number '" + std::string(text) + "'");
    }
    return v;
}

PointCloud read_ply(const std::filesystem::path& path) {
    auto in = open_in(path, std::ios::in | std::ios::binary);
    std::string line;
    std::getline(in, line);
    if (line.rfind("ply", 0) != 0) throw IoError(path.string() + ": not a PLY file");

    bool ascii = false;
    std::vector<PlyElement> elements;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto tok = split_ws(line);
        if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
        if (tok[0] == "end_header") break;
        if (tok[0] == "format") {
            if (tok.size() < 2) throw IoError("malformed PLY format line");
            if (tok[1] == "ascii") {
                ascii = true;
            } else if (tok[1] != "binary_little_endian") {
                throw IoError("unsupported PLY encoding '" + tok[1] + "'");
            }
        } else if (tok[0] == "element") {
            if (tok.size() != 3) throw IoError("malformed PLY element line");
            elements.push_back({tok[1], static_cast<std::size_t>(std::stoull(tok[2])), {}});
        } else if (tok[0] == "property") {
            if (elements.empty()) throw IoError("PLY property before any element");
            PlyProperty prop;
            if (tok.size() == 5 && tok[1] == "list") {
                prop.is_list = true;
                prop.count_type = parse_ply_type(tok[2]);
                prop.type = parse_ply_type(tok[3]);
                prop.name = tok[4];
            } else if (tok.size() == 3) {
                prop.type = parse_ply_type(tok[1]);
                prop.name = tok[2];
            } else {
                throw IoError("malformed PLY property line");
            }
            elements.back().properties.push_back(prop);
        }
    }

    for (const auto& el : elements) {
        if (el.name != "vertex") {
            // Skip the element.
            for (std::size_t r = 0; r < el.count; ++r) {
                if (ascii) {
                    if (!std::getline(in, line)) throw IoError("truncated ascii PLY body");
                } else {
                    for (const auto& p : el.properties) {
                        if (p.is_list) {
                            const auto n = static_cast<std::size_t>(read_binary_value(in, p.count_type));
                            in.ignore(static_cast<std::streamsize>(n * ply_type_size(p.type)));
                        } else {
                            in.ignore(static_cast<std::streamsize>(ply_type_size(p.type)));
                        }
                    }
                }
            }
            continue;
        }

        int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1;
        for (std::size_t k = 0; k < el.properties.size(); ++k) {
            const auto& name = el.properties[k].name;
            const int idx = static_cast<int>(k);
            if (name == "x") ix = idx;
            if (name == "y") iy = idx;
            if (name == "z") iz = idx;
            if (name == "nx") inx = idx;
            if (name == "ny") iny = idx;
            if (name == "nz") inz = idx;
        }
        if (ix < 0 || iy < 0 || iz < 0) throw IoError(path.string() + ": vertex element lacks x/y/z");
        const bool with_normals = inx >= 0 && iny >= 0 && inz >= 0;

        Points pts(static_cast<Eigen::Index>(el.count), 3);
        Points nrm(with_normals ? static_cast<Eigen::Index>(el.count) : 0, 3);
        std::vector<double> values(el.properties.size());
        for (std::size_t r = 0; r < el.count; ++r) {
            if (ascii) {
                if (!std::getline(in, line)) throw IoError("truncated ascii PLY body");
                const auto tok = split_ws(line);
                std::size_t t = 0;
                for (std::size_t k = 0; k < el.properties.size(); ++k) {
                    if (t >= tok.size()) throw IoError("short ascii PLY vertex line");
                    if (el.properties[k].is_list) {
                        t += static_cast<std::size_t>(std::stoull(tok[t])) + 1;
                        continue;
                    }
                    values[k] = parse_double(tok[t++]);
                }
            } else {
                for (std::size_t k = 0; k < el.properties.size(); ++k) {
                    const auto& p = el.properties[k];
                    if (p.is_list) {
                        const auto n = static_cast<std::size_t>(read_binary_value(in, p.count_type));
                        in.ignore(static_cast<std::streamsize>(n * ply_type_size(p.type)));
                        continue;
                    }
                    values[k] = read_binary_value(in, p.type);
                }
            }
            const auto row = static_cast<Eigen::Index>(r);
            pts.row(row) << values[static_cast<std::size_t>(ix)], values[static_cast<std::size_t>(iy)],
                values[static_cast<std::size_t>(iz)];
            if (with_normals) {
                nrm.row(row) << values[static_cast<std::size_t>(inx)], values[static_cast<std::size_t>(iny)],
                    values[static_cast<std::size_t>(inz)];
            }
        }
        PointCloud cloud(std::move(pts));
        if (with_normals) attach_normals(cloud, std::move(nrm));
        return cloud;
    }
    throw IoError(path.string() + ": no vertex element");
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud, const PlyWriteOptions& options) {
    for (const auto& [name, values] : options.scalar_fields) {
        if (values.size() != cloud.size()) throw InvalidArgument("scalar field '" + name + "' has wrong length");
    }
    const bool ascii = options.encoding == PlyEncoding::ascii;
    const bool f64 = options.scalar == PlyScalar::float64;
    const char* type = f64 ? "double" : "float";

    auto out = open_out(path, std::ios::out | std::ios::binary);
    out << "ply\n" << (ascii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n");
    out << "element vertex " << cloud.size() << "\n";
    for (const char* axis : {"x", "y", "z"}) out << "property " << type << " " << axis << "\n";
    if (cloud.has_normals()) {
        for (const char* axis : {"nx", "ny", "nz"}) out << "property " << type << " " << axis << "\n";
    }
    for (const auto& field : options.scalar_fields) out << "property " << type << " " << field.first << "\n";
    out << "end_header\n";

    std::vector<double> row;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        row.clear();
        const Vec3 p = cloud.point(i);
        row.insert(row.end(), {p(0), p(1), p(2)});
        if (cloud.has_normals()) {
            const Vec3 n = cloud.normal(i);
            row.insert(row.end(), {n(0), n(1), n(2)});
        }
        for (const auto& field : options.scalar_fields) row.push_back(field.second[i]);

        if (ascii) {
            for (std::size_t k = 0; k < row.size(); ++k) {
                if (k) out << ' ';
                out << (f64 ? format_double(row[k]) : format_double(static_cast<float>(row[k])));
            }
            out << '\n';
        } else if (f64) {
            out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * 8));
        } else {
            for (double v : row) {
                const float f = static_cast<float>(v);
                out.write(reinterpret_cast<const char*>(&f), 4);
            }
        }
    }
    if (!out) throw IoError("failed writing " + path.string());
}

PointCloud read_obj(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::vector<Vec3> v, vn;
    std::string line;
    while (std::getline(in, line)) {
        const auto tok = split_ws(line);
        if (tok.size() < 4) continue;
        if (tok[0] == "v") {
            v.emplace_back(parse_double(tok[1]), parse_double(tok[2]), parse_double(tok[3]));
        } else if (tok[0] == "vn") {
            vn.emplace_back(parse_double(tok[1]), parse_double(tok[2]), parse_double(tok[3]));
        }
    }
    Points pts(static_cast<Eigen::Index>(v.size()), 3);
    for (std::size_t i = 0; i < v.size(); ++i) pts.row(static_cast<Eigen::Index>(i)) = v[i].transpose();
    PointCloud cloud(std::move(pts));
    if (!vn.empty() && vn.size() == v.size()) {
        Points nrm(static_cast<Eigen::Index>(vn.size()), 3);
        for (std::size_t i = 0; i < vn.size(); ++i) nrm.row(static_cast<Eigen::Index>(i)) = vn[i].transpose();
        attach_normals(cloud, std::move(nrm));
    }
    return cloud;
}

void write_obj(const std::filesystem::path& path, const PointCloud& cloud) {
    auto out = open_out(path);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3 p = cloud.point(i);
        out << "v " << format_double(p(0)) << ' ' << format_double(p(1)) << ' ' << format_double(p(2)) << '\n';
    }
    if (cloud.has_normals()) {
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            Vec3 n = cloud.normal(i);
            if (!n.allFinite()) n.setZero();
            out << "vn " << format_double(n(0)) << ' ' << format_double(n(1)) << ' ' << format_double(n(2)) << '\n';
        }
    }
    if (!out) throw IoError("failed writing " + path.string());
}

PointCloud read_csv(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) throw IoError(path.string() + ": empty CSV");
    auto header = split_csv(line);
    for (auto& h : header) h = lower(h);
    const bool with_normals = header.size() == 6;
    const std::vector<std::string> expect3{"x", "y", "z"};
    const std::vector<std::string> expect6{"x", "y", "z", "nx", "ny", "nz"};
    if (header != expect3 && header != expect6) {
        throw IoError(path.string() + ": CSV header must be x,y,z[,nx,ny,nz]");
    }
    std::vector<std::array<double, 6>> rows;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv(line);
        if (cells.size() != header.size()) throw IoError(path.string() + ": ragged CSV row");
        std::array<double, 6> r{};
        for (std::size_t k = 0; k < cells.size(); ++k) r[k] = parse_double(cells[k]);
        rows.push_back(r);
    }
    Points pts(static_cast<Eigen::Index>(rows.size()), 3);
    Points nrm(static_cast<Eigen::Index>(rows.size()), 3);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        pts.row(row) << rows[i][0], rows[i][1], rows[i][2];
        nrm.row(row) << rows[i][3], rows[i][4], rows[i][5];
    }
    // Normals are taken verbatim so that a write/read cycle is bit-exact.
    return with_normals ? PointCloud(std::move(pts), std::move(nrm)) : PointCloud(std::move(pts));
}

void write_csv(const std::filesystem::path& path, const PointCloud& cloud) {
    auto out = open_out(path);
    out << (cloud.has_normals() ? "x,y,z,nx,ny,nz\n" : "x,y,z\n");
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3 p = cloud.point(i);
        out << format_double(p(0)) << ',' << format_double(p(1)) << ',' << format_double(p(2));
        if (cloud.has_normals()) {
            const Vec3 n = cloud.normal(i);
            out << ',' << format_double(n(0)) << ',' << format_double(n(1)) << ',' << format_double(n(2));
        }
        out << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

PointCloud read_point_cloud(const std::filesystem::path& path) {
    const auto ext = lower(path.extension().string());
    if (ext == ".ply") return read_ply(path);
    if (ext == ".obj") return read_obj(path);
    if (ext == ".csv") return read_csv(path);
    throw IoError("unsupported point cloud extension '" + ext + "'");
}

void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
    const auto ext = lower(path.extension().string());
    if (ext == ".ply") return write_ply(path, cloud);
    if (ext == ".obj") return write_obj(path, cloud);
    if (ext == ".csv") return write_csv(path, cloud);
    throw IoError("unsupported point cloud extension '" + ext + "'");
}

std::vector<std::size_t> read_index_list(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::vector<std::size_t> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto tok = split_ws(line);
        if (tok.empty()) continue;
        if (tok.size() != 1) throw IoError(path.string() + ": expected one index per line");
        std::size_t v = 0;
        const auto res = std::from_chars(tok[0].data(), tok[0].data() + tok[0].size(), v);
        if (res.ec != std::errc{} || res.ptr != tok[0].data() + tok[0].size()) {
            throw IoError(path.string() + ": bad index '" + tok[0] + "'");
        }
        out.push_back(v);
    }
    return out;
}

void write_index_list(const std::filesystem::path& path, const std::vector<std::size_t>& indices) {
    auto out = open_out(path);
    for (std::size_t i : indices) out << i << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace shapefit::io
