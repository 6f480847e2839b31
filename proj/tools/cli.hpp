#pragma once

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bsing::cli {

inline constexpr const char* kVersion = "1.0.0";

/// Effective option values of one subcommand, keyed by long flag name
/// without dashes.  Values are kept as the strings CLI11 parsed.
struct RunConfig {
    std::string subcommand;
    std::map<std::string, std::string> values;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

struct RunRecord {
    RunConfig config;
    std::string version = kVersion;
    /// Only filled with --timing; left out otherwise so records stay
    /// byte-identical across runs.
    std::optional<double> wall_time;
    nlohmann::json result = nlohmann::json::object();

    friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

/// Finite numbers pass through; NaN and ±Inf become "nan", "inf", "-inf".
nlohmann::json number(double x);
/// Inverse of number().
double number_value(const nlohmann::json& j);

/// JSON text with every floating value printed at 17 significant digits.
/// indent < 0 gives a single line.
std::string to_json_text(const nlohmann::json& j, int indent = 2);

std::string serialize(const RunRecord& record);
RunRecord parse_record(const std::string& text);

/// `key = value` lines; blank lines and lines starting with '#' are ignored.
/// Throws std::runtime_error on malformed lines.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

/// Effective configuration of `subcommand` with only the file applied.
/// Unknown keys throw std::invalid_argument naming the key.
RunConfig load_config(const std::string& subcommand, const std::filesystem::path& path);

/// Entry point.  Exit codes: 0 success (including certified nonexistence),
/// 1 malformed invocation or I/O failure, 2 regime or precondition error,
/// 3 solver failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace bsing::cli
