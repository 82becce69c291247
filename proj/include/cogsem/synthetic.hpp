#pragma once

// Procedural grouped datasets: saturated shapes of a per-category form and
// hue band on low-saturation cluttered backgrounds.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cogsem/datamodel.hpp"

namespace cogsem::synthetic {

namespace fs = std::filesystem;

enum class Shape { square, circle, triangle };

struct CategorySpec {
    std::string name;
    Shape shape = Shape::square;
    /// OpenCV hue range (0..180).
    double hue_lo = 0.0;
    double hue_hi = 10.0;
};

struct DatasetSpec {
    std::vector<CategorySpec> categories;
    /// Images per category; when `max_per_category` exceeds it, each
    /// category draws its count uniformly from the closed range.
    int64_t per_category = 20;
    int64_t max_per_category = 0;
    int64_t image_size = 64;
    int64_t clutter = 6;
    uint64_t seed = 0;
    /// File-name prefix, so several splits can share one directory.
    std::string prefix = "img";
};

/// Squares in a red band vs. circles in a blue band.
std::vector<CategorySpec> squares_and_circles();
/// `count` categories cycling through shapes with evenly spread hues.
std::vector<CategorySpec> many_categories(int64_t count);

/// Writes images/<cat>/, masks/<cat>/ and manifest.json (relative paths)
/// under `root`. Returns the manifest path.
fs::path write_dataset(const fs::path& root, const DatasetSpec& spec, const std::string& manifest_name = "manifest.json");

} // namespace cogsem::synthetic
