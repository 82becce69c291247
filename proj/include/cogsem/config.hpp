#pragma once

// Run configuration: one JSON document merged over built-in defaults.
// Unknown keys and type mismatches are rejected with their key path.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace cogsem::config {

using Json = nlohmann::json;

/// Every recognised key with its default value.
const Json& defaults();

/// Overlays `overlay` onto `base`. Throws ConfigError naming the first key
/// path that is unknown or has the wrong type.
Json merge(const Json& base, const Json& overlay, const std::string& path = "");

/// `a.b.c=value`; the value is parsed as JSON, falling back to a string.
void apply_override(Json& config, const std::string& assignment);

struct Issue {
    std::string path;
    std::string message;
};

struct ValidationReport {
    std::vector<Issue> issues;
    bool ok() const { return issues.empty(); }
    std::string describe() const;
};

/// Schema and cross-field checks. With `stage` and `run_dir` set, also
/// checks that the prerequisite stage checkpoints exist.
ValidationReport validate(const Json& config, const std::optional<std::string>& stage = std::nullopt,
                          const std::optional<std::filesystem::path>& run_dir = std::nullopt);

/// Reads a config file (or just the defaults when `path` is empty), applies
/// overrides in order and validates. Throws ConfigError on any issue.
Json load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// FNV-1a 64 of the canonical dump with `seed` removed, as 16 hex digits.
std::string config_hash(const Json& config);

/// `{out}/{hash}/{seed}`.
std::filesystem::path run_directory(const std::filesystem::path& out, const Json& config);

/// `--out`, else $COGSEM_OUT, else ./runs.
std::filesystem::path default_output_root(const std::optional<std::string>& out);

} // namespace cogsem::config
