#include "cogsem/datamodel.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cogsem/errors.hpp"

namespace cogsem {

using json = nlohmann::json;

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::contract: return "contract error";
    case ErrorKind::shape: return "shape error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::load: return "load error";
    case ErrorKind::io: return "I/O error";
    case ErrorKind::validation: return "validation error";
    case ErrorKind::dependency: return "dependency error";
    case ErrorKind::config: return "config error";
    }
    return "error";
}

void ImageGroup::validate(int64_t min_size) const {
    if (!images.defined() || images.dim() != 4 || images.size(3) != 3)
        throw ShapeError("image group '" + category + "' must be [N, H, W, 3]");
    if (size() < min_size)
        throw ContractError("image group '" + category + "' has " + std::to_string(size()) +
                            " images, need at least " + std::to_string(min_size));
    if (static_cast<int64_t>(ids.size()) != size())
        throw ShapeError("image group '" + category + "' id count does not match N");
    if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size())
        throw ContractError("image group '" + category + "' has duplicate ids");
    if (images.numel() > 0 && (images.min().item<double>() < 0.0 || images.max().item<double>() > 1.0))
        throw ContractError("image group '" + category + "' has pixel values outside [0, 1]");
}

void MaskGroup::validate(const ImageGroup& group) const {
    if (!masks.defined() || masks.dim() != 3 || masks.size(0) != group.size() ||
        masks.size(1) != group.images.size(1) || masks.size(2) != group.images.size(2))
        throw ShapeError("mask group for '" + group.category + "' is not aligned with its images");
    if (ids != group.ids)
        throw ContractError("mask ids do not match image ids for '" + group.category + "'");
    if (!(masks.eq(0) | masks.eq(1)).all().item<bool>())
        throw ContractError("masks for '" + group.category + "' are not strictly binary");
}

std::size_t DatasetManifest::item_count() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.items.size();
    return n;
}

std::string item_id(const GroupEntry& group, const ManifestItem& item) {
    std::string stem = fs::path(item.image_path).stem().string();
    if (item.is_noise) return group.category + "/" + item.source_category + "_" + stem;
    return group.category + "/" + stem;
}

fs::path resolve_path(const DatasetManifest& manifest, const std::string& path) {
    fs::path p(path);
    if (p.is_absolute() || manifest.base_dir.empty()) return p;
    return manifest.base_dir / p;
}

bool mask_file_is_zero(const fs::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) throw LoadError("cannot decode mask '" + path.string() + "'");
    if (m.channels() > 1) cv::cvtColor(m, m, m.channels() == 4 ? cv::COLOR_BGRA2GRAY : cv::COLOR_BGR2GRAY);
    return cv::countNonZero(m) == 0;
}

void validate_manifest(const DatasetManifest& manifest, bool check_files) {
    std::set<std::string> categories;
    std::set<std::string> ids;
    for (const auto& g : manifest.groups) {
        if (g.category.empty()) throw ValidationError("group with empty category");
        if (!categories.insert(g.category).second)
            throw ValidationError("duplicate category '" + g.category + "'");
        for (const auto& item : g.items) {
            const std::string id = item_id(g, item);
            if (item.image_path.empty() || item.mask_path.empty())
                throw ValidationError("item '" + id + "' is missing a path");
            if (!ids.insert(id).second) throw ValidationError("duplicate item id '" + id + "'");
            if (item.is_noise && item.source_category == g.category)
                throw ValidationError("noise item '" + id + "' has source_category equal to its group category");
            if (check_files && item.is_noise && !mask_file_is_zero(resolve_path(manifest, item.mask_path)))
                throw ValidationError("noise item '" + id + "' has a nonzero mask");
        }
    }
}

namespace {

json to_json(const DatasetManifest& m) {
    json groups = json::array();
    for (const auto& g : m.groups) {
        json items = json::array();
        for (const auto& it : g.items)
            items.push_back({{"image_path", it.image_path},
                             {"mask_path", it.mask_path},
                             {"is_noise", it.is_noise},
                             {"source_category", it.source_category}});
        groups.push_back({{"category", g.category}, {"items", std::move(items)}});
    }
    return {{"source_dataset", m.source_dataset}, {"seed", m.seed}, {"groups", std::move(groups)}};
}

template <typename T>
T required(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) throw ValidationError("manifest: missing key '" + where + key + "'");
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw ValidationError("manifest: wrong type for '" + where + key + "'");
    }
}

} // namespace

std::string serialize_manifest(const DatasetManifest& manifest) {
    return to_json(manifest).dump(2) + "\n";
}

DatasetManifest parse_manifest(std::string_view text, const fs::path& base_dir) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("manifest: ") + e.what());
    }
    if (!doc.is_object()) throw ValidationError("manifest: top level must be an object");
    DatasetManifest m;
    m.base_dir = base_dir;
    m.source_dataset = required<std::string>(doc, "source_dataset", "");
    m.seed = required<uint64_t>(doc, "seed", "");
    auto groups = required<json>(doc, "groups", "");
    if (!groups.is_array()) throw ValidationError("manifest: 'groups' must be an array");
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const std::string where = "groups[" + std::to_string(gi) + "].";
        GroupEntry g;
        g.category = required<std::string>(groups[gi], "category", where);
        auto items = required<json>(groups[gi], "items", where);
        if (!items.is_array()) throw ValidationError("manifest: '" + where + "items' must be an array");
        for (std::size_t ii = 0; ii < items.size(); ++ii) {
            const std::string iw = where + "items[" + std::to_string(ii) + "].";
            ManifestItem it;
            it.image_path = required<std::string>(items[ii], "image_path", iw);
            it.mask_path = required<std::string>(items[ii], "mask_path", iw);
            it.is_noise = required<bool>(items[ii], "is_noise", iw);
            it.source_category = required<std::string>(items[ii], "source_category", iw);
            g.items.push_back(std::move(it));
        }
        m.groups.push_back(std::move(g));
    }
    validate_manifest(m);
    return m;
}

DatasetManifest read_manifest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open manifest '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_manifest(ss.str(), path.parent_path());
}

void write_manifest(const DatasetManifest& manifest, const fs::path& out_path) {
    validate_manifest(manifest);
    if (out_path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(out_path.parent_path(), ec);
    }
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write manifest '" + out_path.string() + "'");
    out << serialize_manifest(manifest);
    if (!out) throw IoError("failed writing manifest '" + out_path.string() + "'");
}

// ---------------------------------------------------------------------------

torch::Tensor read_image(const fs::path& path, int64_t size) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw LoadError("cannot decode image '" + path.string() + "'");
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    if (rgb.rows != size || rgb.cols != size)
        cv::resize(rgb, rgb, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_LINEAR);
    auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
    return t.to(torch::kFloat32).div_(255.0);
}

torch::Tensor read_mask_native(const fs::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw LoadError("cannot decode mask '" + path.string() + "'");
    auto t = torch::from_blob(m.data, {m.rows, m.cols}, torch::kUInt8).clone();
    return t.ge(128).to(torch::kUInt8);
}

torch::Tensor read_mask(const fs::path& path, int64_t size) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw LoadError("cannot decode mask '" + path.string() + "'");
    if (m.rows != size || m.cols != size)
        cv::resize(m, m, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_NEAREST);
    auto t = torch::from_blob(m.data, {m.rows, m.cols}, torch::kUInt8).clone();
    return t.to(torch::kFloat32).div_(255.0).ge(0.5).to(torch::kFloat32);
}

void write_png_u8(const torch::Tensor& gray_u8, const fs::path& path) {
    TORCH_CHECK(gray_u8.dim() == 2 && gray_u8.scalar_type() == torch::kUInt8, "write_png_u8 expects [H, W] uint8");
    auto c = gray_u8.contiguous();
    cv::Mat m(static_cast<int>(c.size(0)), static_cast<int>(c.size(1)), CV_8UC1, c.data_ptr<uint8_t>());
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    if (!cv::imwrite(path.string(), m)) throw IoError("cannot write '" + path.string() + "'");
}

fs::path write_saliency_map(const SaliencyMap& map, const fs::path& pred_dir) {
    if (!map.values.defined() || map.values.dim() != 2) throw ShapeError("saliency map '" + map.id + "' must be [H, W]");
    auto u8 = map.values.detach().to(torch::kFloat64).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8);
    fs::path out = pred_dir / (map.id + ".png");
    write_png_u8(u8, out);
    return out;
}

torch::Tensor read_saliency_map(const fs::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw LoadError("cannot decode prediction '" + path.string() + "'");
    auto t = torch::from_blob(m.data, {m.rows, m.cols}, torch::kUInt8).clone();
    return t.to(torch::kFloat32).div_(255.0);
}

// ---------------------------------------------------------------------------

std::vector<CategoryPool> load_pools(const DatasetManifest& manifest, int64_t image_size) {
    if (image_size <= 0) throw ContractError("image_size must be positive");
    std::vector<CategoryPool> pools;
    pools.reserve(manifest.groups.size());
    for (const auto& g : manifest.groups) {
        CategoryPool pool;
        pool.category = g.category;
        std::vector<torch::Tensor> images, masks;
        for (const auto& item : g.items) {
            images.push_back(read_image(resolve_path(manifest, item.image_path), image_size));
            masks.push_back(read_mask(resolve_path(manifest, item.mask_path), image_size));
            pool.ids.push_back(item_id(g, item));
            pool.is_noise.push_back(item.is_noise);
        }
        if (!images.empty()) {
            pool.images = torch::stack(images);
            pool.masks = torch::stack(masks);
        } else {
            pool.images = torch::zeros({0, image_size, image_size, 3});
            pool.masks = torch::zeros({0, image_size, image_size});
        }
        pools.push_back(std::move(pool));
    }
    return pools;
}

bool is_padding_id(std::string_view id) { return id.find("~pad") != std::string_view::npos; }

std::vector<LabeledGroup> load_dataset(const DatasetManifest& manifest, const LoadOptions& options) {
    if (options.group_size < 0) throw ContractError("group_size must be non-negative");
    if (options.mode == LoadMode::train && options.group_size == 0)
        throw ContractError("training needs a fixed group_size");
    validate_manifest(manifest);
    std::mt19937_64 rng(options.seed);
    std::vector<LabeledGroup> out;
    for (auto& pool : load_pools(manifest, options.image_size)) {
        const auto m = static_cast<int64_t>(pool.ids.size());
        if (m == 0) continue;
        std::vector<int64_t> order(static_cast<std::size_t>(m));
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        const int64_t n = options.group_size == 0 ? m : options.group_size;
        const int64_t full = m / n;
        const int64_t rest = m % n;
        auto emit = [&](std::vector<int64_t> idx, std::vector<std::string> ids) {
            auto index = torch::tensor(idx, torch::kLong);
            LabeledGroup lg;
            lg.images.images = pool.images.index_select(0, index);
            lg.images.category = pool.category;
            lg.images.ids = ids;
            lg.masks.masks = pool.masks.index_select(0, index);
            lg.masks.ids = std::move(ids);
            out.push_back(std::move(lg));
        };
        for (int64_t gi = 0; gi < full; ++gi) {
            std::vector<int64_t> idx(order.begin() + gi * n, order.begin() + (gi + 1) * n);
            std::vector<std::string> ids;
            for (auto i : idx) ids.push_back(pool.ids[static_cast<std::size_t>(i)]);
            emit(std::move(idx), std::move(ids));
        }
        if (rest > 0 && options.mode == LoadMode::eval) {
            std::vector<int64_t> idx(order.begin() + full * n, order.end());
            std::vector<std::string> ids;
            for (auto i : idx) ids.push_back(pool.ids[static_cast<std::size_t>(i)]);
            std::uniform_int_distribution<int64_t> pick(0, m - 1);
            for (int64_t p = 0; static_cast<int64_t>(idx.size()) < n; ++p) {
                const int64_t i = order[static_cast<std::size_t>(pick(rng))];
                idx.push_back(i);
                ids.push_back(pool.ids[static_cast<std::size_t>(i)] + "~pad" + std::to_string(p));
            }
            emit(std::move(idx), std::move(ids));
        }
    }
    return out;
}

std::vector<LabeledGroup> load_dataset(const fs::path& manifest_path, const LoadOptions& options) {
    auto manifest = read_manifest(manifest_path);
    validate_manifest(manifest, true);
    return load_dataset(manifest, options);
}

} // namespace cogsem
