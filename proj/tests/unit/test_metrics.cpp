#include <doctest.h>

#include <random>

#include <opencv2/imgproc.hpp>

#include "../oracles.hpp"
#include "cogsem/errors.hpp"
#include "cogsem/metrics.hpp"
#include "helpers.hpp"

using namespace cogsem;
using namespace cogsem::metrics;

namespace {

cv::Mat square_gt(int size = 16) {
    cv::Mat gt = cv::Mat::zeros(size, size, CV_8UC1);
    cv::rectangle(gt, cv::Rect(size / 4, size / 4, size / 2, size / 2), cv::Scalar(255), cv::FILLED);
    return gt;
}

cv::Mat as_pred(const cv::Mat& gt) {
    cv::Mat p;
    gt.convertTo(p, CV_64F, 1.0 / 255.0);
    return p;
}

} // namespace

TEST_SUITE("metrics") {

TEST_CASE("mae examples") {
    const auto gt = square_gt();
    CHECK(mae(as_pred(gt), gt) == 0.0);
    CHECK(mae(1.0 - as_pred(gt), gt) == doctest::Approx(1.0));

    cv::Mat p = (cv::Mat_<double>(2, 2) << 0.2, 0.8, 0.5, 0.0);
    cv::Mat g = (cv::Mat_<uint8_t>(2, 2) << 0, 255, 255, 0);
    CHECK(mae(p, g) == doctest::Approx(0.225));
}

TEST_CASE("f measure examples") {
    const auto gt = square_gt();
    CHECK(f_measure_max(as_pred(gt), gt).max == doctest::Approx(1.0));
    CHECK(f_beta(0.5, 1.0) == doctest::Approx(1.3 * 0.5 / (0.3 * 0.5 + 1.0)));
    CHECK(f_beta(0.5, 1.0) == doctest::Approx(0.5652173913));
    cv::Mat empty = cv::Mat::zeros(8, 8, CV_8UC1);
    CHECK(f_measure_max(cv::Mat::zeros(8, 8, CV_64F), empty).max == 1.0);
    CHECK(f_measure_max(cv::Mat::ones(8, 8, CV_64F), empty).max == 0.0);
}

TEST_CASE("s measure examples") {
    const auto gt = square_gt();
    CHECK(s_measure(as_pred(gt), gt) == doctest::Approx(1.0).epsilon(1e-6));
    cv::Mat empty = cv::Mat::zeros(8, 8, CV_8UC1);
    cv::Mat p(8, 8, CV_64F);
    cv::randu(p, 0.0, 1.0);
    CHECK(s_measure(p, empty) == doctest::Approx(1.0 - cv::mean(p)[0]).epsilon(1e-12));
}

TEST_CASE("s and e measures match the reference implementation on random 8x8 pairs") {
    cv::RNG rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        cv::Mat p(8, 8, CV_64F), g(8, 8, CV_8UC1);
        rng.fill(p, cv::RNG::UNIFORM, 0.0, 1.0);
        rng.fill(g, cv::RNG::UNIFORM, 0, 2);
        g *= 255;
        CHECK(s_measure(p, g) == doctest::Approx(oracle::s_measure(p, g)).epsilon(1e-9));
        CHECK(e_measure_max(p, g).max == doctest::Approx(oracle::e_measure_max(p, g)).epsilon(1e-9));
    }
}

TEST_CASE("e measure examples") {
    const auto gt = square_gt();
    CHECK(e_measure_max(as_pred(gt), gt).max == doctest::Approx(1.0));
    cv::Mat empty = cv::Mat::zeros(8, 8, CV_8UC1);
    CHECK(e_measure_max(cv::Mat::zeros(8, 8, CV_64F), empty).max == 1.0);

    // half foreground: the inverse map scores lowest among binary candidates
    cv::Mat half = cv::Mat::zeros(8, 8, CV_8UC1);
    half.colRange(0, 4).setTo(255);
    cv::Mat inv = 255 - half;
    const double worst = e_measure_binary(inv, half);
    CHECK(worst == doctest::Approx(0.0).epsilon(1e-9));
    cv::RNG rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        cv::Mat cand(8, 8, CV_8UC1);
        rng.fill(cand, cv::RNG::UNIFORM, 0, 2);
        CHECK(e_measure_binary(cand * 255, half) >= worst);
    }
}

TEST_CASE("aggregation") {
    const auto gt = square_gt();
    auto perfect = aggregate({evaluate_image(as_pred(gt), gt)});
    CHECK(perfect.mae == 0.0);
    CHECK(perfect.s_measure == doctest::Approx(1.0));
    CHECK(perfect.e_measure_max == doctest::Approx(1.0));
    CHECK(perfect.f_measure_max == doctest::Approx(1.0));
    CHECK(perfect.pr_curve.size() == kLevels);
    CHECK(perfect.roc_curve.size() == kLevels);

    cv::Mat g = cv::Mat::zeros(4, 4, CV_8UC1);
    auto a = evaluate_image(cv::Mat(4, 4, CV_64F, cv::Scalar(0.1)), g);
    auto b = evaluate_image(cv::Mat(4, 4, CV_64F, cv::Scalar(0.3)), g);
    CHECK(aggregate({a, b}).mae == doctest::Approx(0.2));
}

TEST_CASE("suppressing noise images scores better on every scalar") {
    std::vector<ImageEvaluation> quiet, loud;
    cv::Mat empty = cv::Mat::zeros(16, 16, CV_8UC1);
    for (int i = 0; i < 4; ++i) {
        const auto gt = square_gt();
        quiet.push_back(evaluate_image(as_pred(gt), gt));
        loud.push_back(evaluate_image(as_pred(gt), gt));
    }
    for (int i = 0; i < 2; ++i) {
        quiet.push_back(evaluate_image(cv::Mat::zeros(16, 16, CV_64F), empty));
        loud.push_back(evaluate_image(cv::Mat::ones(16, 16, CV_64F), empty));
    }
    const auto q = aggregate(quiet), l = aggregate(loud);
    CHECK(q.mae < l.mae);
    CHECK(q.s_measure > l.s_measure);
    CHECK(q.e_measure_max > l.e_measure_max);
    CHECK(q.f_measure_max > l.f_measure_max);
}

TEST_CASE("dataset evaluation reads predictions by item id") {
    testutil::TempDir dir;
    const auto m = read_manifest(testutil::tiny_dataset(dir / "data", 3));
    for (const auto& g : m.groups)
        for (const auto& item : g.items) {
            auto mask = read_mask_native(resolve_path(m, item.mask_path)).to(torch::kFloat32);
            write_saliency_map({mask, item_id(g, item)}, dir / "pred");
        }
    auto res = evaluate_dataset(dir / "pred", m);
    CHECK(res.images.size() == 6);
    CHECK(res.summary.mae == 0.0);
    CHECK(res.summary.f_measure_max == doctest::Approx(1.0));

    fs::remove(dir / "pred" / (item_id(m.groups[0], m.groups[0].items[0]) + ".png"));
    CHECK_THROWS_AS(evaluate_dataset(dir / "pred", m), LoadError);
}

}
