#include "cogsem/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include "cogsem/errors.hpp"

namespace cogsem::metrics {

namespace {

// MATLAB eps, as used by the reference structure and enhanced-alignment code.
constexpr double kEps = 2.220446049250313e-16;

struct Plane {
    int rows = 0;
    int cols = 0;
    std::vector<double> pred;
    std::vector<uint8_t> gt;

    double p(int r, int c) const { return pred[static_cast<std::size_t>(r) * cols + c]; }
    bool g(int r, int c) const { return gt[static_cast<std::size_t>(r) * cols + c] != 0; }
};

Plane to_plane(const cv::Mat& pred, const cv::Mat& gt) {
    if (pred.channels() != 1 || gt.channels() != 1) throw ShapeError("metrics expect single-channel maps");
    if (pred.size() != gt.size()) throw ShapeError("prediction and ground truth sizes differ");
    if (pred.depth() != CV_32F && pred.depth() != CV_64F) throw ShapeError("prediction must be a float map");
    Plane out;
    out.rows = pred.rows;
    out.cols = pred.cols;
    cv::Mat p64, g8;
    pred.convertTo(p64, CV_64F);
    if (gt.depth() == CV_8U) g8 = gt;
    else cv::compare(gt, 0, g8, cv::CMP_NE);
    out.pred.reserve(static_cast<std::size_t>(pred.total()));
    out.gt.reserve(static_cast<std::size_t>(pred.total()));
    for (int r = 0; r < out.rows; ++r) {
        const double* pr = p64.ptr<double>(r);
        const uint8_t* gr = g8.ptr<uint8_t>(r);
        for (int c = 0; c < out.cols; ++c) {
            out.pred.push_back(pr[c]);
            out.gt.push_back(gr[c] != 0 ? 1 : 0);
        }
    }
    return out;
}

double gt_mean(const Plane& pl) {
    if (pl.gt.empty()) return 0.0;
    int64_t n = 0;
    for (auto v : pl.gt) n += v;
    return static_cast<double>(n) / static_cast<double>(pl.gt.size());
}

double pred_mean(const Plane& pl) {
    double s = 0.0;
    for (double v : pl.pred) s += v;
    return pl.pred.empty() ? 0.0 : s / static_cast<double>(pl.pred.size());
}

// Foreground/background object score over the pixels where `select` holds.
template <typename Value, typename Select>
double object_score(const Plane& pl, Value value, Select select) {
    double sum = 0.0;
    int64_t n = 0;
    for (int r = 0; r < pl.rows; ++r)
        for (int c = 0; c < pl.cols; ++c)
            if (select(r, c)) {
                sum += value(r, c);
                ++n;
            }
    if (n == 0) return 0.0;
    const double mean = sum / static_cast<double>(n);
    double var = 0.0;
    for (int r = 0; r < pl.rows; ++r)
        for (int c = 0; c < pl.cols; ++c)
            if (select(r, c)) {
                const double d = value(r, c) - mean;
                var += d * d;
            }
    const double sd = n > 1 ? std::sqrt(var / static_cast<double>(n - 1)) : 0.0;
    return 2.0 * mean / (mean * mean + 1.0 + sd + kEps);
}

double s_object(const Plane& pl) {
    const double fg = object_score(
        pl, [&](int r, int c) { return pl.p(r, c); }, [&](int r, int c) { return pl.g(r, c); });
    const double bg = object_score(
        pl, [&](int r, int c) { return 1.0 - pl.p(r, c); }, [&](int r, int c) { return !pl.g(r, c); });
    const double u = gt_mean(pl);
    return u * fg + (1.0 - u) * bg;
}

// Structural similarity of one rectangular block [r0, r1) x [c0, c1).
double block_ssim(const Plane& pl, int r0, int r1, int c0, int c1) {
    const int64_t n = static_cast<int64_t>(r1 - r0) * (c1 - c0);
    if (n <= 0) return 0.0;
    double x = 0.0, y = 0.0;
    for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) {
            x += pl.p(r, c);
            y += pl.g(r, c) ? 1.0 : 0.0;
        }
    x /= static_cast<double>(n);
    y /= static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) {
            const double dx = pl.p(r, c) - x;
            const double dy = (pl.g(r, c) ? 1.0 : 0.0) - y;
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
    const double denom = static_cast<double>(n) - 1.0 + kEps;
    sxx /= denom;
    syy /= denom;
    sxy /= denom;
    const double alpha = 4.0 * x * y * sxy;
    const double beta = (x * x + y * y) * (sxx + syy);
    if (alpha != 0.0) return alpha / (beta + kEps);
    return beta == 0.0 ? 1.0 : 0.0;
}

double s_region(const Plane& pl) {
    // Centroid in 1-based pixel coordinates, rounded half away from zero;
    // it gives the width/height of the top-left quadrant.
    double total = 0.0, sx = 0.0, sy = 0.0;
    for (int r = 0; r < pl.rows; ++r)
        for (int c = 0; c < pl.cols; ++c)
            if (pl.g(r, c)) {
                total += 1.0;
                sx += c + 1;
                sy += r + 1;
            }
    int cx, cy;
    if (total == 0.0) {
        cx = static_cast<int>(std::round(pl.cols / 2.0));
        cy = static_cast<int>(std::round(pl.rows / 2.0));
    } else {
        cx = static_cast<int>(std::round(sx / total));
        cy = static_cast<int>(std::round(sy / total));
    }
    const double area = static_cast<double>(pl.rows) * pl.cols;
    const double w1 = static_cast<double>(cx) * cy / area;
    const double w2 = static_cast<double>(pl.cols - cx) * cy / area;
    const double w3 = static_cast<double>(cx) * (pl.rows - cy) / area;
    const double w4 = static_cast<double>(pl.cols - cx) * (pl.rows - cy) / area;
    return w1 * block_ssim(pl, 0, cy, 0, cx) + w2 * block_ssim(pl, 0, cy, cx, pl.cols) +
           w3 * block_ssim(pl, cy, pl.rows, 0, cx) + w4 * block_ssim(pl, cy, pl.rows, cx, pl.cols);
}

std::vector<uint8_t> quantize(const Plane& pl) {
    std::vector<uint8_t> q(pl.pred.size());
    for (std::size_t i = 0; i < q.size(); ++i)
        q[i] = static_cast<uint8_t>(std::lround(std::clamp(pl.pred[i], 0.0, 1.0) * 255.0));
    return q;
}

ThresholdCounts counts_of(const Plane& pl) {
    // Histogram per class, then a suffix sum gives counts for q >= t.
    std::array<int64_t, kLevels> hist_fg{}, hist_bg{};
    const auto q = quantize(pl);
    ThresholdCounts out;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (pl.gt[i]) {
            ++hist_fg[q[i]];
            ++out.positives;
        } else {
            ++hist_bg[q[i]];
            ++out.negatives;
        }
    }
    int64_t tp = 0, fp = 0;
    for (int t = kLevels - 1; t >= 0; --t) {
        tp += hist_fg[static_cast<std::size_t>(t)];
        fp += hist_bg[static_cast<std::size_t>(t)];
        out.tp[static_cast<std::size_t>(t)] = tp;
        out.fp[static_cast<std::size_t>(t)] = fp;
    }
    return out;
}

// Enhanced alignment score from confusion counts. For binary maps the
// alignment matrix takes one value per (pred, gt) combination.
double e_from_counts(int64_t tp, int64_t fp, int64_t positives, int64_t negatives) {
    const double total = static_cast<double>(positives + negatives);
    if (total == 0.0) return 0.0;
    const double fg_pred = static_cast<double>(tp + fp);
    if (positives == 0) return 1.0 - fg_pred / total;
    if (negatives == 0) return fg_pred / total;
    const double mu_p = fg_pred / total;
    const double mu_g = static_cast<double>(positives) / total;
    auto enhanced = [&](double pv, double gv) {
        const double ap = pv - mu_p;
        const double ag = gv - mu_g;
        const double align = 2.0 * ag * ap / (ag * ag + ap * ap + kEps);
        return (align + 1.0) * (align + 1.0) / 4.0;
    };
    const int64_t fn = positives - tp;
    const int64_t tn = negatives - fp;
    const double sum = static_cast<double>(tp) * enhanced(1, 1) + static_cast<double>(fp) * enhanced(1, 0) +
                       static_cast<double>(fn) * enhanced(0, 1) + static_cast<double>(tn) * enhanced(0, 0);
    return sum / total;
}

cv::Mat wrap(const torch::Tensor& t, torch::Tensor& keep, torch::ScalarType type, int cv_type) {
    if (t.dim() != 2) throw ShapeError("metrics expect [H, W] tensors");
    keep = t.detach().to(torch::kCPU).to(type).contiguous();
    return cv::Mat(static_cast<int>(keep.size(0)), static_cast<int>(keep.size(1)), cv_type, keep.data_ptr());
}

} // namespace

double mae(const cv::Mat& pred, const cv::Mat& gt) {
    const Plane pl = to_plane(pred, gt);
    if (pl.pred.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < pl.pred.size(); ++i) s += std::abs(pl.pred[i] - (pl.gt[i] ? 1.0 : 0.0));
    return s / static_cast<double>(pl.pred.size());
}

double s_measure(const cv::Mat& pred, const cv::Mat& gt, double alpha) {
    const Plane pl = to_plane(pred, gt);
    const double y = gt_mean(pl);
    if (y == 0.0) return 1.0 - pred_mean(pl);
    if (y == 1.0) return pred_mean(pl);
    const double q = alpha * s_object(pl) + (1.0 - alpha) * s_region(pl);
    return std::max(q, 0.0);
}

ThresholdCounts threshold_counts(const cv::Mat& pred, const cv::Mat& gt) { return counts_of(to_plane(pred, gt)); }

double f_beta(double precision, double recall, double beta_sq) {
    const double denom = beta_sq * precision + recall;
    if (denom <= 0.0) return 0.0;
    return (1.0 + beta_sq) * precision * recall / denom;
}

PrecisionRecall precision_recall(int64_t tp, int64_t fp, int64_t positives) {
    PrecisionRecall pr;
    const int64_t predicted = tp + fp;
    if (predicted == 0) pr.precision = positives == 0 ? 1.0 : 0.0;
    else pr.precision = static_cast<double>(tp) / static_cast<double>(predicted);
    pr.recall = positives == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(positives);
    return pr;
}

SweepResult f_measure_max(const cv::Mat& pred, const cv::Mat& gt, double beta_sq) {
    const auto counts = threshold_counts(pred, gt);
    SweepResult out;
    for (int t = 0; t < kLevels; ++t) {
        const auto i = static_cast<std::size_t>(t);
        const auto pr = precision_recall(counts.tp[i], counts.fp[i], counts.positives);
        out.curve[i] = f_beta(pr.precision, pr.recall, beta_sq);
        out.max = std::max(out.max, out.curve[i]);
    }
    return out;
}

SweepResult e_measure_max(const cv::Mat& pred, const cv::Mat& gt) {
    const auto counts = threshold_counts(pred, gt);
    SweepResult out;
    for (int t = 0; t < kLevels; ++t) {
        const auto i = static_cast<std::size_t>(t);
        out.curve[i] = e_from_counts(counts.tp[i], counts.fp[i], counts.positives, counts.negatives);
        out.max = std::max(out.max, out.curve[i]);
    }
    return out;
}

double e_measure_binary(const cv::Mat& binary_pred, const cv::Mat& gt) {
    cv::Mat p;
    if (binary_pred.depth() == CV_8U) {
        cv::Mat nz;
        cv::compare(binary_pred, 0, nz, cv::CMP_NE);
        nz.convertTo(p, CV_64F, 1.0 / 255.0);
    } else {
        cv::Mat nz;
        cv::compare(binary_pred, 0.5, nz, cv::CMP_GE);
        nz.convertTo(p, CV_64F, 1.0 / 255.0);
    }
    const Plane pl = to_plane(p, gt);
    int64_t tp = 0, fp = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < pl.pred.size(); ++i) {
        const bool fg = pl.pred[i] > 0.5;
        if (pl.gt[i]) {
            ++pos;
            tp += fg;
        } else {
            ++neg;
            fp += fg;
        }
    }
    return e_from_counts(tp, fp, pos, neg);
}

ImageEvaluation evaluate_image(const cv::Mat& pred, const cv::Mat& gt, std::string id, double beta_sq, double alpha) {
    const Plane pl = to_plane(pred, gt);
    ImageEvaluation ev;
    ev.id = std::move(id);
    ev.mae = mae(pred, gt);
    ev.s = s_measure(pred, gt, alpha);
    ev.counts = counts_of(pl);
    for (int t = 0; t < kLevels; ++t) {
        const auto i = static_cast<std::size_t>(t);
        const auto pr = precision_recall(ev.counts.tp[i], ev.counts.fp[i], ev.counts.positives);
        ev.precision[i] = pr.precision;
        ev.recall[i] = pr.recall;
        ev.f_max = std::max(ev.f_max, f_beta(pr.precision, pr.recall, beta_sq));
        ev.e_max = std::max(ev.e_max, e_from_counts(ev.counts.tp[i], ev.counts.fp[i], ev.counts.positives,
                                                    ev.counts.negatives));
    }
    return ev;
}

ImageEvaluation evaluate_image(const torch::Tensor& pred, const torch::Tensor& gt, std::string id, double beta_sq,
                               double alpha) {
    torch::Tensor keep_p, keep_g;
    cv::Mat p = wrap(pred, keep_p, torch::kFloat64, CV_64FC1);
    cv::Mat g = wrap(gt.ne(0), keep_g, torch::kUInt8, CV_8UC1);
    return evaluate_image(p, g, std::move(id), beta_sq, alpha);
}

EvalResult aggregate(const std::vector<ImageEvaluation>& images) {
    EvalResult out;
    out.image_count = images.size();
    out.pr_curve.assign(kLevels, {0.0, 0.0});
    out.roc_curve.assign(kLevels, {0.0, 0.0});
    if (images.empty()) return out;
    std::array<int64_t, kLevels> tp{}, fp{};
    int64_t pos = 0, neg = 0;
    for (const auto& ev : images) {
        out.mae += ev.mae;
        out.s_measure += ev.s;
        out.e_measure_max += ev.e_max;
        out.f_measure_max += ev.f_max;
        for (std::size_t t = 0; t < kLevels; ++t) {
            out.pr_curve[t].first += ev.precision[t];
            out.pr_curve[t].second += ev.recall[t];
            tp[t] += ev.counts.tp[t];
            fp[t] += ev.counts.fp[t];
        }
        pos += ev.counts.positives;
        neg += ev.counts.negatives;
    }
    const double n = static_cast<double>(images.size());
    out.mae /= n;
    out.s_measure /= n;
    out.e_measure_max /= n;
    out.f_measure_max /= n;
    for (std::size_t t = 0; t < kLevels; ++t) {
        out.pr_curve[t].first /= n;
        out.pr_curve[t].second /= n;
        const double fpr = neg > 0 ? static_cast<double>(fp[t]) / static_cast<double>(neg) : 0.0;
        const double tpr = pos > 0 ? static_cast<double>(tp[t]) / static_cast<double>(pos) : 0.0;
        out.roc_curve[t] = {fpr, tpr};
    }
    return out;
}

DatasetEvaluation evaluate_dataset(const std::filesystem::path& pred_dir, const DatasetManifest& manifest,
                                   double beta_sq, double alpha) {
    std::vector<std::string> missing;
    for (const auto& g : manifest.groups)
        for (const auto& item : g.items) {
            const auto id = item_id(g, item);
            if (!std::filesystem::exists(pred_dir / (id + ".png"))) missing.push_back(id);
        }
    if (!missing.empty()) {
        std::string msg = "missing predictions for " + std::to_string(missing.size()) + " image(s):";
        for (const auto& id : missing) msg += " " + id;
        throw LoadError(msg);
    }

    DatasetEvaluation out;
    for (const auto& g : manifest.groups)
        for (const auto& item : g.items) {
            const auto id = item_id(g, item);
            auto gt = read_mask_native(resolve_path(manifest, item.mask_path));
            auto pred = read_saliency_map(pred_dir / (id + ".png"));
            if (pred.sizes() != gt.sizes()) {
                pred = torch::upsample_bilinear2d(pred.unsqueeze(0).unsqueeze(0), {gt.size(0), gt.size(1)}, false)
                           .squeeze(0)
                           .squeeze(0)
                           .clamp(0.0, 1.0);
            }
            out.images.push_back(evaluate_image(pred, gt, id, beta_sq, alpha));
        }
    out.summary = aggregate(out.images);
    return out;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << std::setprecision(10);
    return out;
}

} // namespace

void write_per_image_csv(const std::vector<ImageEvaluation>& images, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "id,mae,s,e_max,f_max\n";
    for (const auto& ev : images) out << ev.id << ',' << ev.mae << ',' << ev.s << ',' << ev.e_max << ',' << ev.f_max << '\n';
}

void write_summary(const EvalResult& result, const std::filesystem::path& path) {
    nlohmann::json doc = {{"images", result.image_count},
                          {"mae", result.mae},
                          {"s_measure", result.s_measure},
                          {"e_measure_max", result.e_measure_max},
                          {"f_measure_max", result.f_measure_max}};
    auto out = open_out(path);
    out << doc.dump(2) << '\n';
}

void write_curves_csv(const EvalResult& result, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "threshold,precision,recall,tpr,fpr\n";
    for (std::size_t t = 0; t < result.pr_curve.size(); ++t)
        out << t << ',' << result.pr_curve[t].first << ',' << result.pr_curve[t].second << ','
            << result.roc_curve[t].second << ',' << result.roc_curve[t].first << '\n';
}

} // namespace cogsem::metrics
