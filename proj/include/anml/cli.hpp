#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include <nlohmann/json.hpp>

namespace anml::cli {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kUsage = 2, kRuntime = 3 };

/// Entry point of the `anml` tool. Never throws; errors become an exit code
/// and a one-line JSON message on `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// $ANML_DATA_DIR, else the data directory of the source tree.
std::filesystem::path data_dir();
/// $ANML_CACHE_DIR, else $XDG_CACHE_HOME/anml, else $HOME/.cache/anml.
std::filesystem::path cache_dir();

/// The dataset manifest shipped in data_dir().
nlohmann::json load_manifest();

/// Downloads a manifest entry into cache_dir() unless already present and
/// returns its path. Verifies the checksum when the manifest has one.
std::filesystem::path fetch_dataset(const std::string& name, bool force, std::ostream& log);

}  // namespace anml::cli
