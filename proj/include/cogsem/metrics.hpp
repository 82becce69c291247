#pragma once

// MAE, S-measure, max E-measure and max F-measure for saliency maps, plus
// PR / ROC threshold sweeps.
//
// Predictions are float maps in [0, 1]; ground truths are binary (nonzero =
// foreground). Threshold sweeps run over the 256 levels of the 8-bit
// quantised prediction q = round(255 p); level t marks q >= t as positive.
//
// Empty ground truths (noise images) follow fixed conventions:
//   S = 1 - mean(pred)
//   E(t) = 1 - (foreground fraction of the thresholded prediction)
//   F: empty/empty -> 1, empty gt with a nonempty prediction -> 0,
//      nonempty gt with an empty prediction -> 0

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "cogsem/datamodel.hpp"

namespace cogsem::metrics {

inline constexpr int kLevels = 256;
inline constexpr double kDefaultBetaSq = 0.3;
inline constexpr double kDefaultAlpha = 0.5;

using Curve = std::array<double, kLevels>;

/// Pixel counts at every threshold level.
struct ThresholdCounts {
    std::array<int64_t, kLevels> tp{};
    std::array<int64_t, kLevels> fp{};
    int64_t positives = 0;
    int64_t negatives = 0;
};

/// cv::Mat inputs: pred CV_32FC1 or CV_64FC1 in [0, 1], gt CV_8UC1.
double mae(const cv::Mat& pred, const cv::Mat& gt);
double s_measure(const cv::Mat& pred, const cv::Mat& gt, double alpha = kDefaultAlpha);

ThresholdCounts threshold_counts(const cv::Mat& pred, const cv::Mat& gt);

/// F-beta from precision/recall; zero when both are zero.
double f_beta(double precision, double recall, double beta_sq = kDefaultBetaSq);

struct PrecisionRecall {
    double precision = 0.0;
    double recall = 0.0;
};
PrecisionRecall precision_recall(int64_t tp, int64_t fp, int64_t positives);

struct SweepResult {
    double max = 0.0;
    Curve curve{};
};

SweepResult f_measure_max(const cv::Mat& pred, const cv::Mat& gt, double beta_sq = kDefaultBetaSq);
SweepResult e_measure_max(const cv::Mat& pred, const cv::Mat& gt);
/// E-measure of one binary foreground map.
double e_measure_binary(const cv::Mat& binary_pred, const cv::Mat& gt);

struct ImageEvaluation {
    std::string id;
    double mae = 0.0;
    double s = 0.0;
    double e_max = 0.0;
    double f_max = 0.0;
    Curve precision{};
    Curve recall{};
    ThresholdCounts counts;
};

ImageEvaluation evaluate_image(const cv::Mat& pred, const cv::Mat& gt, std::string id = {},
                               double beta_sq = kDefaultBetaSq, double alpha = kDefaultAlpha);
/// torch overload: pred [H, W] float in [0, 1], gt [H, W] (nonzero = fg).
ImageEvaluation evaluate_image(const torch::Tensor& pred, const torch::Tensor& gt, std::string id = {},
                               double beta_sq = kDefaultBetaSq, double alpha = kDefaultAlpha);

struct EvalResult {
    double mae = 0.0;
    double s_measure = 0.0;
    double e_measure_max = 0.0;
    double f_measure_max = 0.0;
    /// (precision, recall) per threshold, averaged over images.
    std::vector<std::pair<double, double>> pr_curve;
    /// (fpr, tpr) per threshold, pixels pooled over the dataset.
    std::vector<std::pair<double, double>> roc_curve;
    std::size_t image_count = 0;
};

/// Means of the per-image scalars; curves as documented on EvalResult.
EvalResult aggregate(const std::vector<ImageEvaluation>& images);

struct DatasetEvaluation {
    EvalResult summary;
    std::vector<ImageEvaluation> images;
};

/// Reads `pred_dir/<id>.png` for every manifest item and scores it against
/// the item's mask. Predictions of a different size are resized to the
/// mask. Throws LoadError listing every absent id.
DatasetEvaluation evaluate_dataset(const std::filesystem::path& pred_dir, const DatasetManifest& manifest,
                                   double beta_sq = kDefaultBetaSq, double alpha = kDefaultAlpha);

void write_per_image_csv(const std::vector<ImageEvaluation>& images, const std::filesystem::path& path);
void write_summary(const EvalResult& result, const std::filesystem::path& path);
void write_curves_csv(const EvalResult& result, const std::filesystem::path& path);

} // namespace cogsem::metrics
