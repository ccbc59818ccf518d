#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>

#include "shapefit/corruption.hpp"
#include "shapefit/nonrigid.hpp"
#include "shapefit/rigid.hpp"

namespace shapefit {

/**
 * INI configuration: `[section]` headers and `key = value` lines, `;` or `#`
 * comments. Keys are addressed as "section.key". Unknown keys are reported
 * by unknown_keys() so callers can reject typos.
 */
class Config {
public:
    Config() = default;
    static Config load(const std::filesystem::path& path);
    static Config parse(const std::string& text);

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::optional<std::string> get_string(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    std::optional<double> get_double(const std::string& key) const;
    long long get_int(const std::string& key, long long fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    /// Comma-separated list, items trimmed, empty items dropped.
    std::vector<std::string> get_list(const std::string& key) const;

    void set(const std::string& key, const std::string& value);
    std::vector<std::string> keys() const;
    /// Keys not present in `known`.
    std::vector<std::string> unknown_keys(const std::vector<std::string>& known) const;

    /// Directory of the loaded file; relative paths in values resolve against it.
    const std::filesystem::path& base_dir() const { return base_dir_; }
    std::filesystem::path resolve(const std::string& value) const;

private:
    boost::property_tree::ptree tree_;
    std::filesystem::path base_dir_;
};

/// "sphere: cx, cy, cz, r", "box: x0, y0, z0, x1, y1, z1" or "indices: <file>".
RegionSpec parse_region(const std::string& text, const Config& config);

IcpParams icp_params_from(const Config& config, const std::string& section = "icp");
RansipParams ransip_params_from(const Config& config);
CpdParams cpd_params_from(const Config& config);
BcpdParams bcpd_params_from(const Config& config);
CorruptionConfig corruption_config_from(const Config& config);

/// Every key the library and command-line tool read.
const std::vector<std::string>& known_config_keys();

}  // namespace shapefit
