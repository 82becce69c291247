#pragma once

// Open-world dataset construction: inject foreign images with empty masks
// into every group of a grouped base dataset.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cogsem/datamodel.hpp"

namespace cogsem::owdata {

enum class NoiseMode { single_foreign, multi_foreign };
enum class SamplerKind { fixed, concentrated, bimodal, uniform };

NoiseMode parse_noise_mode(const std::string& name);
SamplerKind parse_sampler_kind(const std::string& name);
std::string to_string(NoiseMode mode);
std::string to_string(SamplerKind kind);

/// Per-group noise ratio, measured as injected / base item count.
/// `concentrated` is a normal around `center` truncated to [min_ratio,
/// max_ratio]; `bimodal` is an equal-weight mixture of two such normals
/// around `center` and `second_center`; `fixed` always returns `center`.
struct RatioSampler {
    SamplerKind kind = SamplerKind::concentrated;
    double center = 0.18;
    double second_center = 0.40;
    double sigma = 0.06;
    double min_ratio = 0.024;
    double max_ratio = 0.375;

    double sample(std::mt19937_64& rng) const;
    void validate() const;
};

struct NoisePolicy {
    NoiseMode mode = NoiseMode::single_foreign;
    int64_t min_foreign = 1;
    int64_t max_foreign = 3;
    RatioSampler ratio;
    uint64_t seed = 0;

    void validate() const;

    static NoisePolicy owcosal_like(uint64_t seed = 0);
    static NoisePolicy owcosod_like(uint64_t seed = 0);
    static NoisePolicy owcoca_like(uint64_t seed = 0);
};

struct BuildOptions {
    /// Directory the output manifest will live in; every path in the output
    /// is written relative to it.
    std::filesystem::path manifest_dir;
    /// Where generated empty masks go. Defaults to manifest_dir/noise_masks.
    std::filesystem::path mask_dir;
    std::optional<int64_t> target_total;
};

/// Adds noise items to every group. Counts come from the ratio sampler,
/// clamped to [ceil(min_ratio * n), floor(max_ratio * n)]; with a target
/// total they are rescaled and rounded by largest remainder so the sum hits
/// the target exactly. Deterministic under policy.seed.
DatasetManifest build_ow_dataset(const DatasetManifest& base, const NoisePolicy& policy, const BuildOptions& options);

/// Integer counts per group whose sum is `target`, each within [lo, hi],
/// proportional to `desired` as far as the bounds allow.
std::vector<int64_t> reconcile_counts(const std::vector<double>& desired, const std::vector<int64_t>& lo,
                                      const std::vector<int64_t>& hi, int64_t target);

struct GroupStats {
    std::string category;
    int64_t base_count = 0;
    int64_t noise_count = 0;
    double ratio = 0.0; // noise / base
    std::vector<std::string> foreign_categories;
};

struct ValidationReport {
    int64_t total_noise = 0;
    std::vector<GroupStats> groups;
    std::map<std::string, int64_t> foreign_histogram;
    std::vector<std::string> failures;

    bool ok() const { return failures.empty(); }
};

/// Never throws on invariant violations; they are listed in `failures`.
/// Mask files are decoded when `check_files` is set.
ValidationReport validate_ow_dataset(const DatasetManifest& manifest, bool check_files = true);

} // namespace cogsem::owdata
