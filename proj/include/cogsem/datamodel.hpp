#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

namespace cogsem {

namespace fs = std::filesystem;

/// N images of one category. `images` is float32 [N, H, W, 3] in [0, 1].
struct ImageGroup {
    torch::Tensor images;
    std::string category;
    std::vector<std::string> ids;

    int64_t size() const { return images.defined() ? images.size(0) : 0; }
    /// Throws ContractError / ShapeError when an invariant is broken.
    /// `min_size` is 2 for anything that reaches the model.
    void validate(int64_t min_size = 2) const;
};

/// Binary masks aligned with an ImageGroup: float32 [N, H, W] in {0, 1}.
struct MaskGroup {
    torch::Tensor masks;
    std::vector<std::string> ids;

    void validate(const ImageGroup& images) const;
};

struct LabeledGroup {
    ImageGroup images;
    MaskGroup masks;
};

/// One predicted map, float32 [H, W] in [0, 1].
struct SaliencyMap {
    torch::Tensor values;
    std::string id;
};

struct ManifestItem {
    std::string image_path;
    std::string mask_path;
    bool is_noise = false;
    std::string source_category;

    bool operator==(const ManifestItem&) const = default;
};

struct GroupEntry {
    std::string category;
    std::vector<ManifestItem> items;

    bool operator==(const GroupEntry&) const = default;
};

struct DatasetManifest {
    std::vector<GroupEntry> groups;
    uint64_t seed = 0;
    std::string source_dataset;
    /// Directory relative paths are resolved against. Not serialized.
    fs::path base_dir;

    std::size_t item_count() const;
    bool operator==(const DatasetManifest& other) const {
        return groups == other.groups && seed == other.seed && source_dataset == other.source_dataset;
    }
};

/// Stable identifier of an item: `category/stem`, with the source category
/// folded in for noise items so that foreign copies never collide.
std::string item_id(const GroupEntry& group, const ManifestItem& item);
fs::path resolve_path(const DatasetManifest& manifest, const std::string& path);

/// Structural checks always; mask-file checks (noise masks all-zero) when
/// `check_files` is set. Throws ValidationError naming the offending item.
void validate_manifest(const DatasetManifest& manifest, bool check_files = false);

std::string serialize_manifest(const DatasetManifest& manifest);
DatasetManifest parse_manifest(std::string_view text, const fs::path& base_dir = {});
DatasetManifest read_manifest(const fs::path& path);
/// Validates (structure only) before touching the filesystem.
void write_manifest(const DatasetManifest& manifest, const fs::path& out_path);

// ---------------------------------------------------------------------------
// image I/O

/// 8-bit RGB scaled by 1/255 and resized to size x size. [H, W, 3] float32.
torch::Tensor read_image(const fs::path& path, int64_t size);
/// Nearest-neighbour resize, then thresholded at 0.5. [H, W] float32.
torch::Tensor read_mask(const fs::path& path, int64_t size);
/// Native-size mask, nonzero = foreground. [H, W] uint8 in {0, 1}.
torch::Tensor read_mask_native(const fs::path& path);
bool mask_file_is_zero(const fs::path& path);

/// Writes round(255 * p) as a single-channel PNG at `pred_dir / (id + ".png")`.
fs::path write_saliency_map(const SaliencyMap& map, const fs::path& pred_dir);
/// Reads a prediction PNG back as [H, W] float32 in [0, 1].
torch::Tensor read_saliency_map(const fs::path& path);
void write_png_u8(const torch::Tensor& gray_u8, const fs::path& path);

// ---------------------------------------------------------------------------
// loading

enum class LoadMode { train, eval };

struct LoadOptions {
    int64_t image_size = 224;
    /// 0 means "whole category as one group" (evaluation default).
    int64_t group_size = 5;
    LoadMode mode = LoadMode::train;
    uint64_t seed = 0;
};

/// Every image of one category, decoded and resized once.
struct CategoryPool {
    std::string category;
    torch::Tensor images; // [M, H, W, 3]
    torch::Tensor masks;  // [M, H, W]
    std::vector<std::string> ids;
    std::vector<bool> is_noise;
};

std::vector<CategoryPool> load_pools(const DatasetManifest& manifest, int64_t image_size);

/// Partitions each category into groups of `group_size` after a seeded
/// shuffle. Training drops the trailing partial group; evaluation pads it by
/// resampling from the same category (padded ids carry a `~pad` suffix).
std::vector<LabeledGroup> load_dataset(const DatasetManifest& manifest, const LoadOptions& options);
std::vector<LabeledGroup> load_dataset(const fs::path& manifest_path, const LoadOptions& options);

bool is_padding_id(std::string_view id);

} // namespace cogsem
