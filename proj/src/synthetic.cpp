#include "cogsem/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cogsem/errors.hpp"

namespace cogsem::synthetic {

std::vector<CategorySpec> squares_and_circles() {
    return {{"square", Shape::square, 0.0, 12.0}, {"circle", Shape::circle, 100.0, 125.0}};
}

std::vector<CategorySpec> many_categories(int64_t count) {
    std::vector<CategorySpec> out;
    const Shape shapes[] = {Shape::square, Shape::circle, Shape::triangle};
    for (int64_t i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "cat%03lld", static_cast<long long>(i));
        const double hue = 180.0 * static_cast<double>(i) / static_cast<double>(count);
        out.push_back({name, shapes[i % 3], hue, hue + 2.0});
    }
    return out;
}

namespace {

cv::Scalar hsv_to_bgr(double h, double s, double v) {
    cv::Mat px(1, 1, CV_8UC3, cv::Scalar(h, s * 255.0, v * 255.0));
    cv::cvtColor(px, px, cv::COLOR_HSV2BGR);
    const auto c = px.at<cv::Vec3b>(0, 0);
    return {static_cast<double>(c[0]), static_cast<double>(c[1]), static_cast<double>(c[2])};
}

void draw_shape(cv::Mat& img, Shape shape, cv::Point center, int half, const cv::Scalar& color) {
    switch (shape) {
    case Shape::square:
        cv::rectangle(img, {center.x - half, center.y - half}, {center.x + half, center.y + half}, color, cv::FILLED);
        break;
    case Shape::circle: cv::circle(img, center, half, color, cv::FILLED, cv::LINE_8); break;
    case Shape::triangle: {
        std::vector<cv::Point> pts = {{center.x, center.y - half}, {center.x - half, center.y + half},
                                      {center.x + half, center.y + half}};
        cv::fillConvexPoly(img, pts, color, cv::LINE_8);
        break;
    }
    }
}

} // namespace

fs::path write_dataset(const fs::path& root, const DatasetSpec& spec, const std::string& manifest_name) {
    if (spec.categories.empty()) throw ContractError("synthetic dataset needs at least one category");
    if (spec.image_size < 16) throw ContractError("synthetic image_size must be at least 16");
    if (spec.per_category < 1) throw ContractError("per_category must be positive");

    std::mt19937_64 rng(spec.seed);
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto uint = [&](int64_t lo, int64_t hi) { return std::uniform_int_distribution<int64_t>(lo, hi)(rng); };
    const int size = static_cast<int>(spec.image_size);

    DatasetManifest manifest;
    manifest.seed = spec.seed;
    manifest.source_dataset = "synthetic";
    for (const auto& cat : spec.categories) {
        fs::create_directories(root / "images" / cat.name);
        fs::create_directories(root / "masks" / cat.name);
        const int64_t count = spec.max_per_category > spec.per_category
                                  ? uint(spec.per_category, spec.max_per_category)
                                  : spec.per_category;
        GroupEntry group;
        group.category = cat.name;
        for (int64_t i = 0; i < count; ++i) {
            cv::Mat img(size, size, CV_8UC3);
            const double base = uni(0.35, 0.65);
            img.setTo(hsv_to_bgr(uni(0, 180), uni(0.0, 0.12), base));
            for (int64_t c = 0; c < spec.clutter; ++c) {
                const auto color = hsv_to_bgr(uni(0, 180), uni(0.0, 0.15), uni(0.2, 0.8));
                const int w = static_cast<int>(uint(size / 16 + 1, size / 4));
                const int h = static_cast<int>(uint(size / 16 + 1, size / 4));
                const cv::Point p(static_cast<int>(uint(0, size - 1)), static_cast<int>(uint(0, size - 1)));
                if (c % 2 == 0) cv::rectangle(img, p, {p.x + w, p.y + h}, color, cv::FILLED);
                else cv::ellipse(img, p, {w / 2 + 1, h / 2 + 1}, 0, 0, 360, color, cv::FILLED);
            }
            cv::Mat noise(size, size, CV_16SC3), img16;
            cv::randn(noise, cv::Scalar::all(0), cv::Scalar::all(6));
            img.convertTo(img16, CV_16SC3);
            img16 += noise;
            img16.convertTo(img, CV_8UC3);

            const int half = static_cast<int>(uint(size * 9 / 64, size * 14 / 64));
            const cv::Point center(static_cast<int>(uint(half + 1, size - half - 2)),
                                   static_cast<int>(uint(half + 1, size - half - 2)));
            const auto color = hsv_to_bgr(uni(cat.hue_lo, cat.hue_hi), uni(0.75, 1.0), uni(0.75, 1.0));
            draw_shape(img, cat.shape, center, half, color);
            cv::Mat mask = cv::Mat::zeros(size, size, CV_8UC1);
            draw_shape(mask, cat.shape, center, half, cv::Scalar(255));

            char stem[64];
            std::snprintf(stem, sizeof stem, "%s_%03lld", spec.prefix.c_str(), static_cast<long long>(i));
            const fs::path image_rel = fs::path("images") / cat.name / (std::string(stem) + ".png");
            const fs::path mask_rel = fs::path("masks") / cat.name / (std::string(stem) + ".png");
            if (!cv::imwrite((root / image_rel).string(), img) || !cv::imwrite((root / mask_rel).string(), mask))
                throw IoError("cannot write synthetic image under '" + root.string() + "'");
            group.items.push_back({image_rel.generic_string(), mask_rel.generic_string(), false, cat.name});
        }
        manifest.groups.push_back(std::move(group));
    }
    const auto path = root / manifest_name;
    write_manifest(manifest, path);
    return path;
}

} // namespace cogsem::synthetic
