#include "cogsem/owdata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <opencv2/imgcodecs.hpp>

#include "cogsem/errors.hpp"

namespace cogsem::owdata {

namespace fs = std::filesystem;

NoiseMode parse_noise_mode(const std::string& name) {
    if (name == "single_foreign") return NoiseMode::single_foreign;
    if (name == "multi_foreign") return NoiseMode::multi_foreign;
    throw ConfigError("unknown noise mode '" + name + "'");
}

SamplerKind parse_sampler_kind(const std::string& name) {
    if (name == "fixed") return SamplerKind::fixed;
    if (name == "concentrated") return SamplerKind::concentrated;
    if (name == "bimodal") return SamplerKind::bimodal;
    if (name == "uniform") return SamplerKind::uniform;
    throw ConfigError("unknown ratio sampler '" + name + "'");
}

std::string to_string(NoiseMode mode) { return mode == NoiseMode::single_foreign ? "single_foreign" : "multi_foreign"; }

std::string to_string(SamplerKind kind) {
    switch (kind) {
    case SamplerKind::fixed: return "fixed";
    case SamplerKind::concentrated: return "concentrated";
    case SamplerKind::bimodal: return "bimodal";
    case SamplerKind::uniform: return "uniform";
    }
    return "?";
}

void RatioSampler::validate() const {
    if (!(min_ratio >= 0.0 && min_ratio <= max_ratio && max_ratio < 0.5))
        throw ContractError("ratio bounds must satisfy 0 <= min_ratio <= max_ratio < 0.5");
    if (kind == SamplerKind::fixed && (center < 0.0 || center >= 0.5))
        throw ContractError("fixed ratio must lie in [0, 0.5)");
    if ((kind == SamplerKind::concentrated || kind == SamplerKind::bimodal) && !(sigma > 0.0))
        throw ContractError("sampler sigma must be positive");
}

namespace {

double truncated_normal(double mean, double sigma, double lo, double hi, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(mean, sigma);
    for (int attempt = 0; attempt < 10000; ++attempt) {
        const double v = normal(rng);
        if (v >= lo && v <= hi) return v;
    }
    return std::clamp(mean, lo, hi);
}

} // namespace

double RatioSampler::sample(std::mt19937_64& rng) const {
    switch (kind) {
    case SamplerKind::fixed: return center;
    case SamplerKind::concentrated: return truncated_normal(center, sigma, min_ratio, max_ratio, rng);
    case SamplerKind::bimodal: {
        std::bernoulli_distribution second(0.5);
        const double mode = second(rng) ? second_center : center;
        return truncated_normal(mode, sigma, min_ratio, max_ratio, rng);
    }
    case SamplerKind::uniform: return std::uniform_real_distribution<double>(min_ratio, max_ratio)(rng);
    }
    return center;
}

void NoisePolicy::validate() const {
    ratio.validate();
    if (min_foreign < 1 || max_foreign < min_foreign) throw ContractError("foreign category count range is invalid");
}

NoisePolicy NoisePolicy::owcosal_like(uint64_t seed) {
    NoisePolicy p;
    p.mode = NoiseMode::single_foreign;
    p.ratio = {SamplerKind::concentrated, 0.18, 0.40, 0.06, 0.024, 0.375};
    p.seed = seed;
    return p;
}

NoisePolicy NoisePolicy::owcosod_like(uint64_t seed) {
    NoisePolicy p;
    p.mode = NoiseMode::single_foreign;
    p.ratio = {SamplerKind::bimodal, 0.05, 0.40, 0.02, 0.032, 0.471};
    p.seed = seed;
    return p;
}

NoisePolicy NoisePolicy::owcoca_like(uint64_t seed) {
    NoisePolicy p;
    p.mode = NoiseMode::multi_foreign;
    p.min_foreign = 1;
    p.max_foreign = 3;
    p.ratio = {SamplerKind::concentrated, 0.28, 0.40, 0.08, 0.05, 0.45};
    p.seed = seed;
    return p;
}

std::vector<int64_t> reconcile_counts(const std::vector<double>& desired, const std::vector<int64_t>& lo,
                                      const std::vector<int64_t>& hi, int64_t target) {
    const std::size_t n = desired.size();
    if (lo.size() != n || hi.size() != n) throw ShapeError("reconcile_counts: length mismatch");
    const int64_t lo_sum = std::accumulate(lo.begin(), lo.end(), int64_t{0});
    const int64_t hi_sum = std::accumulate(hi.begin(), hi.end(), int64_t{0});
    if (target < lo_sum || target > hi_sum)
        throw ContractError("target_total " + std::to_string(target) + " is outside the feasible range [" +
                            std::to_string(lo_sum) + ", " + std::to_string(hi_sum) + "]");
    std::vector<double> d(n);
    for (std::size_t g = 0; g < n; ++g) d[g] = std::max(desired[g], 1e-9);

    auto fill = [&](double s, std::vector<double>& x) {
        double total = 0.0;
        for (std::size_t g = 0; g < n; ++g) {
            x[g] = std::clamp(s * d[g], static_cast<double>(lo[g]), static_cast<double>(hi[g]));
            total += x[g];
        }
        return total;
    };
    std::vector<double> x(n);
    double s_lo = 0.0, s_hi = 1.0;
    while (fill(s_hi, x) < static_cast<double>(target) && s_hi < 1e18) s_hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (s_lo + s_hi);
        if (fill(mid, x) < static_cast<double>(target)) s_lo = mid;
        else s_hi = mid;
    }
    fill(s_hi, x);

    std::vector<int64_t> counts(n);
    int64_t assigned = 0;
    for (std::size_t g = 0; g < n; ++g) {
        counts[g] = std::clamp(static_cast<int64_t>(std::floor(x[g])), lo[g], hi[g]);
        assigned += counts[g];
    }
    // Largest remainder first; ties to the earlier group.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return x[a] - std::floor(x[a]) > x[b] - std::floor(x[b]);
    });
    while (assigned < target) {
        bool moved = false;
        for (std::size_t g : order) {
            if (assigned == target) break;
            if (counts[g] < hi[g]) {
                ++counts[g];
                ++assigned;
                moved = true;
            }
        }
        if (!moved) break;
    }
    while (assigned > target) {
        bool moved = false;
        for (auto it = order.rbegin(); it != order.rend() && assigned > target; ++it)
            if (counts[*it] > lo[*it]) {
                --counts[*it];
                --assigned;
                moved = true;
            }
        if (!moved) break;
    }
    return counts;
}

namespace {

std::string relative_to(const fs::path& path, const fs::path& dir) {
    const fs::path abs = fs::absolute(path).lexically_normal();
    if (dir.empty()) return abs.string();
    const fs::path rel = abs.lexically_relative(fs::absolute(dir).lexically_normal());
    return rel.empty() ? abs.string() : rel.generic_string();
}

void write_zero_mask_like(const fs::path& image, const fs::path& out) {
    cv::Mat img = cv::imread(image.string(), cv::IMREAD_UNCHANGED);
    if (img.empty()) throw LoadError("cannot decode image '" + image.string() + "'");
    cv::Mat zero(img.rows, img.cols, CV_8UC1, cv::Scalar(0));
    std::error_code ec;
    fs::create_directories(out.parent_path(), ec);
    if (!cv::imwrite(out.string(), zero)) throw IoError("cannot write '" + out.string() + "'");
}

} // namespace

DatasetManifest build_ow_dataset(const DatasetManifest& base, const NoisePolicy& policy, const BuildOptions& options) {
    validate_manifest(base);
    policy.validate();
    const std::size_t ng = base.groups.size();
    if (ng < 2) throw ContractError("build_ow_dataset needs at least 2 categories");
    if (policy.mode == NoiseMode::multi_foreign && static_cast<int64_t>(ng) < policy.max_foreign + 1)
        throw ContractError("multi_foreign with up to " + std::to_string(policy.max_foreign) +
                            " foreign categories needs at least " + std::to_string(policy.max_foreign + 1) +
                            " categories");

    const fs::path manifest_dir = options.manifest_dir.empty() ? fs::current_path() : options.manifest_dir;
    const fs::path mask_dir = options.mask_dir.empty() ? manifest_dir / "noise_masks" : options.mask_dir;

    // Only clean items can be donated as noise.
    std::vector<std::vector<std::size_t>> clean(ng);
    for (std::size_t g = 0; g < ng; ++g)
        for (std::size_t i = 0; i < base.groups[g].items.size(); ++i)
            if (!base.groups[g].items[i].is_noise) clean[g].push_back(i);

    std::mt19937_64 rng(policy.seed);
    std::vector<double> desired(ng);
    std::vector<int64_t> lo(ng), hi(ng);
    for (std::size_t g = 0; g < ng; ++g) {
        const auto b = static_cast<double>(clean[g].size());
        desired[g] = policy.ratio.sample(rng) * b;
        int64_t available = 0;
        for (std::size_t o = 0; o < ng; ++o) {
            if (o == g) continue;
            const auto sz = static_cast<int64_t>(clean[o].size());
            available = policy.mode == NoiseMode::single_foreign ? std::max(available, sz) : available + sz;
        }
        lo[g] = static_cast<int64_t>(std::ceil(policy.ratio.min_ratio * b - 1e-9));
        hi[g] = std::min<int64_t>(static_cast<int64_t>(std::floor(policy.ratio.max_ratio * b + 1e-9)), available);
        if (lo[g] > hi[g])
            throw ContractError("insufficient foreign images or group too small for the ratio bounds in group '" +
                                base.groups[g].category + "'");
    }

    std::vector<int64_t> counts(ng);
    if (options.target_total) {
        counts = reconcile_counts(desired, lo, hi, *options.target_total);
    } else {
        for (std::size_t g = 0; g < ng; ++g)
            counts[g] = std::clamp(static_cast<int64_t>(std::llround(desired[g])), lo[g], hi[g]);
    }

    DatasetManifest out;
    out.seed = policy.seed;
    out.source_dataset = "ow:" + base.source_dataset;
    out.base_dir = manifest_dir;
    for (std::size_t g = 0; g < ng; ++g) {
        const auto& src = base.groups[g];
        GroupEntry entry;
        entry.category = src.category;
        for (const auto& item : src.items) {
            ManifestItem copy = item;
            copy.image_path = relative_to(resolve_path(base, item.image_path), manifest_dir);
            copy.mask_path = relative_to(resolve_path(base, item.mask_path), manifest_dir);
            entry.items.push_back(std::move(copy));
        }

        const int64_t count = counts[g];
        std::vector<std::size_t> others;
        for (std::size_t o = 0; o < ng; ++o)
            if (o != g) others.push_back(o);

        // (foreign group, number of images to take from it)
        std::vector<std::pair<std::size_t, int64_t>> plan;
        if (count > 0 && policy.mode == NoiseMode::single_foreign) {
            std::vector<std::size_t> eligible;
            for (auto o : others)
                if (static_cast<int64_t>(clean[o].size()) >= count) eligible.push_back(o);
            if (eligible.empty())
                throw ContractError("insufficient foreign images for group '" + src.category + "'");
            std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
            plan.emplace_back(eligible[pick(rng)], count);
        } else if (count > 0) {
            std::uniform_int_distribution<int64_t> draw(policy.min_foreign, policy.max_foreign);
            const int64_t m = std::min<int64_t>({draw(rng), count, static_cast<int64_t>(others.size())});
            std::shuffle(others.begin(), others.end(), rng);
            others.resize(static_cast<std::size_t>(m));
            int64_t capacity = 0;
            for (auto o : others) capacity += static_cast<int64_t>(clean[o].size());
            if (capacity < count || std::any_of(others.begin(), others.end(), [&](std::size_t o) { return clean[o].empty(); }))
                throw ContractError("insufficient foreign images for group '" + src.category + "'");
            for (auto o : others) plan.emplace_back(o, 1);
            for (int64_t extra = count - m; extra > 0;) {
                std::uniform_int_distribution<std::size_t> pick(0, plan.size() - 1);
                auto& slot = plan[pick(rng)];
                if (slot.second < static_cast<int64_t>(clean[slot.first].size())) {
                    ++slot.second;
                    --extra;
                }
            }
        }

        for (const auto& [o, take] : plan) {
            std::vector<std::size_t> pool = clean[o];
            std::shuffle(pool.begin(), pool.end(), rng);
            for (int64_t t = 0; t < take; ++t) {
                const auto& donor = base.groups[o].items[pool[static_cast<std::size_t>(t)]];
                const fs::path image = resolve_path(base, donor.image_path);
                const fs::path mask = mask_dir / src.category /
                                      (base.groups[o].category + "_" + fs::path(donor.image_path).stem().string() + ".png");
                write_zero_mask_like(image, mask);
                ManifestItem noise;
                noise.image_path = relative_to(image, manifest_dir);
                noise.mask_path = relative_to(mask, manifest_dir);
                noise.is_noise = true;
                noise.source_category = base.groups[o].category;
                entry.items.push_back(std::move(noise));
            }
        }
        out.groups.push_back(std::move(entry));
    }
    validate_manifest(out);
    return out;
}

ValidationReport validate_ow_dataset(const DatasetManifest& manifest, bool check_files) {
    ValidationReport report;
    for (const auto& g : manifest.groups) {
        GroupStats stats;
        stats.category = g.category;
        std::set<std::string> foreign;
        for (const auto& item : g.items) {
            if (!item.is_noise) {
                ++stats.base_count;
                continue;
            }
            ++stats.noise_count;
            foreign.insert(item.source_category);
            ++report.foreign_histogram[item.source_category];
            const auto id = item_id(g, item);
            if (item.source_category == g.category)
                report.failures.push_back("noise item '" + id + "' comes from its own category");
            if (check_files) {
                try {
                    if (!mask_file_is_zero(resolve_path(manifest, item.mask_path)))
                        report.failures.push_back("noise item '" + id + "' has a nonzero mask");
                } catch (const LoadError& e) {
                    report.failures.push_back("noise item '" + id + "': " + e.what());
                }
            }
        }
        stats.foreign_categories.assign(foreign.begin(), foreign.end());
        stats.ratio = stats.base_count > 0 ? static_cast<double>(stats.noise_count) / static_cast<double>(stats.base_count) : 0.0;
        if (stats.noise_count > 0 && stats.noise_count >= stats.base_count)
            report.failures.push_back("group '" + g.category + "' has a noise majority");
        report.total_noise += stats.noise_count;
        report.groups.push_back(std::move(stats));
    }
    return report;
}

} // namespace cogsem::owdata
