// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance            run everything
//   acceptance 1 5 7      run a subset

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <opencv2/core.hpp>

#include "cogsem/cosodtb.hpp"
#include "cogsem/gsem.hpp"
#include "cogsem/lvgb.hpp"
#include "cogsem/metrics.hpp"
#include "cogsem/owdata.hpp"
#include "oracles.hpp"
#include "toy_experiment.hpp"

namespace fs = std::filesystem;
using namespace cogsem;
using cogsem::config::Json;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

void check(Outcome& o, bool ok, const std::string& what) {
    if (!ok) {
        if (o.pass) o.detail = what;
        o.pass = false;
    }
}

double rel_diff(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(4);
    s << v;
    return s.str();
}

fs::path scratch_root() {
    static fs::path root = fs::temp_directory_path() / ("cogsem-acceptance-" + std::to_string(::getpid()));
    return root;
}

// ---------------------------------------------------------------------------

Outcome criterion_bdc() {
    Outcome o;
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> cdist(2, 8), pdist(1, 16);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto random_matrix = [&](int64_t c, int64_t p) {
        gsem::Matrix m(c, p);
        for (auto& v : m.data) v = normal(rng);
        return m;
    };
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int64_t c = cdist(rng);
        auto x = random_matrix(c, pdist(rng));
        auto y = random_matrix(c, pdist(rng));
        const auto bx = gsem::bdc_matrix(x), by = gsem::bdc_matrix(y);
        const double trace = gsem::bdc_trace_form(bx, by);
        const double inner = gsem::bdc_inner_form(bx, by);
        const double naive = oracle::bdc_naive(x, y);
        worst = std::max({worst, rel_diff(trace, inner), rel_diff(inner, naive)});
        check(o, rel_diff(trace, inner) <= 1e-6, "trace and inner forms disagree");
        check(o, rel_diff(inner, naive) <= 1e-6, "library disagrees with the naive oracle");

        const double scale = std::max(1.0, std::abs(inner));
        check(o, inner >= -1e-6 * scale, "negative BDC");
        check(o, gsem::bdc(x, x) >= -1e-6, "negative self BDC");
        check(o, rel_diff(gsem::bdc(x, y), gsem::bdc(y, x)) <= 1e-6, "BDC is not symmetric");

        auto shifted = x;
        std::vector<double> offset(static_cast<std::size_t>(x.cols));
        for (auto& v : offset) v = 5.0 * normal(rng);
        for (int64_t r = 0; r < x.rows; ++r)
            for (int64_t col = 0; col < x.cols; ++col) shifted(r, col) += offset[static_cast<std::size_t>(col)];
        check(o, std::abs(gsem::bdc(shifted, y) - inner) <= 1e-6 * scale, "BDC is not translation invariant");

        const double a = -3.0 + 6.0 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        auto scaled = x;
        for (auto& v : scaled.data) v *= a;
        check(o, std::abs(gsem::bdc(scaled, y) - std::abs(a) * inner) <= 1e-6 * std::max(1.0, std::abs(a) * scale),
              "BDC is not |a|-homogeneous");
    }
    if (o.pass) o.detail = "worst relative gap " + fmt(worst);
    return o;
}

Outcome criterion_quantizer() {
    Outcome o;
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<int64_t> kdist(1, 16), ddist(1, 8), coarse(-2, 2);
    std::normal_distribution<double> normal(0.0, 1.0);
    int64_t ties = 0;
    for (int q = 0; q < 1000; ++q) {
        const int64_t k = kdist(rng), d = ddist(rng);
        // Coarse integer grids make exact ties common.
        const bool discrete = q % 2 == 0;
        auto book = torch::empty({k, d}, torch::kFloat32);
        auto ze = torch::empty({1, 1, 1, d}, torch::kFloat32);
        auto fill = [&](torch::Tensor& t) {
            auto a = t.accessor<float, 2>();
            for (int64_t i = 0; i < t.size(0); ++i)
                for (int64_t j = 0; j < t.size(1); ++j)
                    a[i][j] = discrete ? static_cast<float>(coarse(rng)) : static_cast<float>(normal(rng));
        };
        fill(book);
        auto flat = ze.view({1, d});
        fill(flat);
        const auto got = lvgb::nearest_codes(ze, lvgb::Codebook{book}).item<int64_t>();
        const auto want = oracle::nearest_index(flat[0], book, &ties);
        check(o, got == want, "query " + std::to_string(q) + ": got " + std::to_string(got) + ", want " +
                                  std::to_string(want));
        auto grid = lvgb::quantize(ze, lvgb::Codebook{book});
        check(o, torch::equal(grid.quantized.view({d}), book[got]), "quantized value differs from the codebook row");
    }
    if (o.pass) o.detail = "1000 queries exact, " + std::to_string(ties) + " with tied minima";
    return o;
}

Outcome criterion_gradients() {
    Outcome o;
    torch::manual_seed(13);
    double worst = 0.0;
    auto compare = [&](const torch::Tensor& analytic, const torch::Tensor& numeric, const std::string& what) {
        const double scale = std::max(numeric.abs().max().item<double>(), 1e-12);
        const double err = (analytic - numeric).abs().max().item<double>() / scale;
        worst = std::max(worst, err);
        check(o, err <= 1e-4, what + " relative error " + fmt(err));
    };
    auto is_zero = [](const torch::Tensor& g) { return !g.defined() || g.abs().max().item<double>() == 0.0; };

    // Straight-through: d f(st(ze)) / d ze equals f'(zq).
    {
        auto book = torch::randn({6, 3}, torch::kFloat64);
        auto ze = torch::randn({2, 2, 2, 3}, torch::kFloat64).requires_grad_(true);
        auto w = torch::randn({2, 2, 2, 3}, torch::kFloat64);
        auto f = [&](const torch::Tensor& z) { return (torch::sin(z) * w).sum() + (z * z).sum(); };
        auto grid = lvgb::quantize(ze, lvgb::Codebook{book});
        f(lvgb::straight_through(grid)).backward();
        auto numeric = oracle::finite_difference([&](const torch::Tensor& z) { return f(z).item<double>(); },
                                                 grid.quantized.detach());
        compare(ze.grad(), numeric, "straight-through");
    }

    // Stop-gradient routing of the three VQ-VAE loss terms.
    {
        lvgb::VqVaeOptions opts;
        opts.hidden = 4;
        opts.res_blocks = 1;
        opts.downsample_stages = 1;
        opts.codebook_size = 5;
        opts.code_dim = 3;
        lvgb::VqVae model(opts);
        model->to(torch::kFloat64);
        auto x = torch::rand({1, 4, 4, 3}, torch::kFloat64);
        auto enc_param = model->encoder->parameters().front();
        auto dec_param = model->decoder->parameters().front();
        auto book = model->embeddings;

        auto ze_fixed = model->encoder(x).detach();
        auto idx = lvgb::nearest_codes(ze_fixed, model->codebook());
        auto gather = [&](const torch::Tensor& e) { return e.index_select(0, idx.reshape({-1})).view(ze_fixed.sizes()); };
        auto zq_fixed = gather(book).detach();

        auto grads = [&](const std::function<torch::Tensor()>& term) {
            model->zero_grad();
            term().backward();
            return std::make_tuple(enc_param.grad().defined() ? enc_param.grad().clone() : torch::Tensor(),
                                   dec_param.grad().defined() ? dec_param.grad().clone() : torch::Tensor(),
                                   book.grad().defined() ? book.grad().clone() : torch::Tensor());
        };
        auto mse = [](const torch::Tensor& a, const torch::Tensor& b) { return (a - b).pow(2).mean(); };
        auto loss_terms = [&]() {
            auto ze = model->encoder(x);
            auto grid = lvgb::quantize(ze, model->codebook());
            auto rec = model->decoder(lvgb::straight_through(grid)).reconstruction;
            return lvgb::vqvae_loss(x, rec, ze, grid.quantized, 0.25);
        };

        auto [e1, d1, b1] = grads([&] { return loss_terms().reconstruction; });
        auto [e2, d2, b2] = grads([&] { return loss_terms().codebook; });
        auto [e3, d3, b3] = grads([&] { return loss_terms().commitment; });
        check(o, is_zero(b1), "reconstruction term leaks gradient into the codebook");
        check(o, is_zero(e2) && is_zero(d2), "codebook term leaks gradient into the encoder/decoder");
        check(o, is_zero(b3) && is_zero(d3), "commitment term leaks gradient into the codebook/decoder");
        (void)e1;

        torch::NoGradGuard no_grad;
        compare(d1,
                oracle::finite_difference_param(
                    dec_param, [&] { return mse(model->decoder(zq_fixed).reconstruction, x).item<double>(); }),
                "reconstruction term (decoder)");
        compare(b2, oracle::finite_difference_param(book, [&] { return mse(gather(book), ze_fixed).item<double>(); }),
                "codebook term");
        compare(e3,
                oracle::finite_difference_param(enc_param, [&] { return mse(model->encoder(x), zq_fixed).item<double>(); }),
                "commitment term");
    }

    // BCE.
    {
        auto pred = (0.05 + 0.9 * torch::rand({2, 3, 3}, torch::kFloat64)).requires_grad_(true);
        auto target = (torch::rand({2, 3, 3}, torch::kFloat64) > 0.5).to(torch::kFloat64);
        cosodtb::bce_loss(pred, target).backward();
        auto numeric = oracle::finite_difference(
            [&](const torch::Tensor& p) { return cosodtb::bce_loss(p, target).item<double>(); }, pred.detach());
        compare(pred.grad(), numeric, "bce_loss");
    }
    if (o.pass) o.detail = "worst relative error " + fmt(worst);
    return o;
}

Outcome criterion_exchange() {
    Outcome o;
    std::mt19937_64 rng(14);
    auto monotone = std::vector<std::function<double(double)>>{
        [](double v) { return 3.0 * v + 1.0; }, [](double v) { return std::exp(v); },
        [](double v) { return v * v * v; }, [](double v) { return std::atan(v) - 7.0; }};
    int64_t trials = 0;
    for (int64_t n = 4; n <= 8; ++n) {
        for (int64_t k = 1; 2 * k < n; ++k) {
            for (int rep = 0; rep < 20; ++rep, ++trials) {
                torch::manual_seed(static_cast<uint64_t>(rng()));
                auto make_group = [&](const std::string& cat) {
                    LabeledGroup g;
                    g.images.images = torch::rand({n, 8, 8, 3});
                    g.images.category = cat;
                    auto m = (torch::rand({n, 8, 8}) > 0.5).to(torch::kFloat32);
                    m.select(1, 0).select(1, 0).fill_(1.0f); // every mask non-empty
                    g.masks.masks = m;
                    for (int64_t i = 0; i < n; ++i) g.images.ids.push_back(cat + "/" + std::to_string(i));
                    g.masks.ids = g.images.ids;
                    return g;
                };
                auto g1 = make_group("a"), g2 = make_group("b");
                auto report = [&]() {
                    std::vector<double> bdc(static_cast<std::size_t>(n)), bin(static_cast<std::size_t>(n));
                    std::uniform_real_distribution<double> u(0.0, 1.0);
                    for (auto& v : bdc) v = u(rng);
                    for (auto& v : bin) v = std::round(u(rng) * 4.0); // coarse: ties happen
                    return gsem::mixed_difficulty(bdc, bin, 0.5);
                };
                auto r1 = report(), r2 = report();
                auto ex = gsem::select_exchange_mask(g1, g2, r1, r2, k);

                const auto sel1 = oracle::k_smallest(r1.mixed, k);
                const auto sel2 = oracle::k_smallest(r2.mixed, k);
                check(o, gsem::select_hardest(r1.mixed, k, gsem::HardnessOrder::low) == sel1,
                      "selection differs from the k-smallest oracle");
                for (const auto& f : monotone) {
                    std::vector<double> t;
                    for (double v : r1.mixed) t.push_back(f(v));
                    check(o, gsem::select_hardest(t, k, gsem::HardnessOrder::low) == sel1,
                          "selection changes under a monotone transform");
                }

                // Conservation: every image ends up in exactly one output slot, unchanged.
                std::multiset<std::string> before, after;
                for (auto* g : {&g1, &g2})
                    for (const auto& id : g->images.ids) before.insert(id);
                for (auto* g : {&ex.group1, &ex.group2})
                    for (const auto& id : g->images.ids) after.insert(id);
                check(o, before == after, "image ids not conserved");
                auto find_image = [&](const std::string& id) {
                    for (auto* g : {&g1, &g2})
                        for (int64_t i = 0; i < n; ++i)
                            if (g->images.ids[static_cast<std::size_t>(i)] == id) return g->images.images[i];
                    return torch::Tensor();
                };
                int64_t zero_masks = 0;
                for (auto [out, in, sel, slots] :
                     {std::tuple{&ex.group1, &g1, &sel1, &ex.noise_slots1}, std::tuple{&ex.group2, &g2, &sel2, &ex.noise_slots2}}) {
                    for (int64_t i = 0; i < n; ++i) {
                        const auto& id = out->images.ids[static_cast<std::size_t>(i)];
                        check(o, torch::equal(out->images.images[i], find_image(id)), "image content changed");
                        const bool exchanged = std::find(sel->begin(), sel->end(), i) != sel->end();
                        if (out->masks.masks[i].abs().sum().item<double>() == 0.0) ++zero_masks;
                        if (exchanged) {
                            check(o, out->masks.masks[i].abs().sum().item<double>() == 0.0, "exchanged mask not zero");
                            check(o, std::find(slots->begin(), slots->end(), i) != slots->end(),
                                  "noise slot not reported");
                        } else {
                            check(o, id == in->images.ids[static_cast<std::size_t>(i)], "non-exchanged slot moved");
                            check(o, torch::equal(out->masks.masks[i], in->masks.masks[i]), "non-exchanged mask changed");
                        }
                    }
                }
                check(o, zero_masks == 2 * k, "expected exactly 2k zero masks");
                check(o, static_cast<int64_t>(ex.exchanged_ids.size()) == k, "exchange list has the wrong length");
            }
        }
    }
    if (o.pass) o.detail = std::to_string(trials) + " randomized exchanges";
    return o;
}

Outcome criterion_metrics() {
    Outcome o;
    std::mt19937_64 rng(15);
    // Perfect prediction.
    for (int t = 0; t < 10; ++t) {
        cv::Mat gt(16, 16, CV_8U);
        cv::randu(gt, 0, 2);
        gt.at<uint8_t>(0, 0) = 1;
        gt.at<uint8_t>(0, 1) = 0;
        cv::Mat pred;
        gt.convertTo(pred, CV_64F);
        auto ev = metrics::evaluate_image(pred, gt);
        check(o, ev.mae == 0.0, "perfect MAE is not 0");
        check(o, std::abs(ev.s - 1.0) <= 1e-6, "perfect S is not 1");
        check(o, std::abs(ev.e_max - 1.0) <= 1e-6, "perfect E_max is not 1");
        check(o, std::abs(ev.f_max - 1.0) <= 1e-6, "perfect F_max is not 1");
    }
    const double f = metrics::f_beta(0.5, 1.0, 0.3);
    check(o, std::abs(f - 0.5652) <= 1e-4, "F(0.5, 1) = " + fmt(f));
    check(o, std::abs(f - oracle::f_beta(0.5, 1.0, 0.3)) <= 1e-12, "F differs from the closed form");

    // Empty ground truth.
    for (int t = 0; t < 20; ++t) {
        cv::Mat pred(12, 9, CV_64F), gt = cv::Mat::zeros(12, 9, CV_8U);
        cv::randu(pred, 0.0, 1.0);
        const double sum = metrics::mae(pred, gt) + metrics::s_measure(pred, gt);
        check(o, sum == 1.0, "MAE + S = " + fmt(sum) + " on an empty ground truth");
    }

    // Dual implementation on random 8x8 cases.
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
        cv::Mat pred(8, 8, CV_64F), gt(8, 8, CV_8U);
        cv::randu(pred, 0.0, 1.0);
        if (t % 10 == 3) pred.setTo(0.0);
        if (t % 10 == 4) pred = (pred > 0.5) / 255;
        cv::randu(gt, 0, 2);
        if (t % 10 == 1) gt.setTo(0);
        if (t % 10 == 2) gt.setTo(1);
        if (t % 10 == 5) {
            gt.setTo(0);
            gt(cv::Rect(2, 1, 3, 4)).setTo(1);
        }
        cv::Mat p64;
        pred.convertTo(p64, CV_64F);
        const double s_lib = metrics::s_measure(p64, gt);
        const double s_ref = oracle::s_measure(p64, gt);
        const double e_lib = metrics::e_measure_max(p64, gt).max;
        const double e_ref = oracle::e_measure_max(p64, gt);
        worst = std::max({worst, std::abs(s_lib - s_ref), std::abs(e_lib - e_ref)});
        check(o, std::abs(s_lib - s_ref) <= 1e-6, "S oracle mismatch on case " + std::to_string(t));
        check(o, std::abs(e_lib - e_ref) <= 1e-6, "E oracle mismatch on case " + std::to_string(t));
    }
    (void)rng;
    if (o.pass) o.detail = "F(0.5,1)=" + fmt(f) + ", worst S/E gap " + fmt(worst);
    return o;
}

// ---------------------------------------------------------------------------
// toy pipeline (criteria 6 and 8 share it)

struct ToyRuns {
    toy::ToyData data;
    Json config;
    fs::path with_gsem, without_gsem;
    bool trained_with = false, trained_without = false;
    double seconds_with = 0.0;
};

ToyRuns& toy_runs() {
    static ToyRuns runs = [] {
        ToyRuns r;
        r.data = toy::make_data(scratch_root() / "toy");
        r.config = toy::toy_config();
        r.with_gsem = scratch_root() / "run-gsem";
        r.without_gsem = scratch_root() / "run-nogsem";
        return r;
    }();
    return runs;
}

void ensure_with_gsem() {
    auto& r = toy_runs();
    if (r.trained_with) return;
    const auto t0 = std::chrono::steady_clock::now();
    toy::run_all_stages(r.config, r.data, r.with_gsem);
    r.seconds_with = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.trained_with = true;
}

void ensure_without_gsem() {
    auto& r = toy_runs();
    if (r.trained_without) return;
    ensure_with_gsem();
    // Same VQ-VAE and prior; only the full stage differs.
    fs::create_directories(r.without_gsem);
    for (auto s : {training::Stage::vqvae, training::Stage::prior})
        fs::copy(training::stage_dir(r.with_gsem, s), training::stage_dir(r.without_gsem, s),
                 fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    Json cfg = r.config;
    config::apply_override(cfg, "gsem.k=0");
    training::run_stage(training::StageConfig::from_config(cfg, training::Stage::full), cfg, r.data.train,
                        r.without_gsem);
    r.trained_without = true;
}

Outcome criterion_toy() {
    Outcome o;
    ensure_with_gsem();
    auto& r = toy_runs();
    const int64_t n = r.config["data"]["group_size"];
    auto model = training::load_model(r.config, r.with_gsem, training::Stage::full);
    const auto scores = toy::training_scores(model, r.data, n, 21);
    const auto noise = toy::exchanged_noise(model, r.data, n, 20, 22);
    check(o, scores.f_measure_max >= 0.90, "training F_max " + fmt(scores.f_measure_max) + " < 0.90");
    check(o, noise.noise_mean <= 0.15, "noise saliency " + fmt(noise.noise_mean) + " > 0.15");
    check(o, noise.cosalient_mean >= 0.6, "co-salient saliency " + fmt(noise.cosalient_mean) + " < 0.6");
    check(o, r.seconds_with <= 900.0, "training took " + fmt(r.seconds_with) + " s");
    const std::string detail = "F_max " + fmt(scores.f_measure_max) + ", S " + fmt(scores.s_measure) + ", noise " +
                               fmt(noise.noise_mean) + ", co-salient " + fmt(noise.cosalient_mean) + ", train " +
                               fmt(r.seconds_with) + " s";
    o.detail = o.pass ? detail : o.detail + " (" + detail + ")";
    return o;
}

Outcome criterion_ow() {
    Outcome o;
    const auto root = scratch_root() / "ow";
    synthetic::DatasetSpec spec{synthetic::many_categories(50), 20, 40, 32, 3, 31, "img"};
    const auto base_path = synthetic::write_dataset(root / "base", spec);
    const auto base = read_manifest(base_path);
    const int64_t base_total = static_cast<int64_t>(base.item_count());
    const int64_t target = 460;
    auto policy = owdata::NoisePolicy::owcosal_like(5);

    std::vector<std::string> texts;
    for (const char* name : {"build-a", "build-b"}) {
        owdata::BuildOptions opts;
        opts.manifest_dir = root / name;
        opts.target_total = target;
        auto out = owdata::build_ow_dataset(base, policy, opts);
        write_manifest(out, root / name / "manifest.json");
        std::ifstream in(root / name / "manifest.json", std::ios::binary);
        texts.emplace_back(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());

        auto report = owdata::validate_ow_dataset(read_manifest(root / name / "manifest.json"), true);
        check(o, report.ok(), report.ok() ? "" : "validation failed: " + report.failures.front());
        check(o, report.total_noise == target, "injected " + std::to_string(report.total_noise) + " items");
        for (const auto& g : report.groups) {
            const double lo = policy.ratio.min_ratio, hi = policy.ratio.max_ratio;
            check(o, g.ratio >= lo - 1e-12 && g.ratio <= hi + 1e-12,
                  "group " + g.category + " ratio " + fmt(g.ratio) + " outside bounds");
        }
        // Independent mask check straight from the files.
        for (const auto& g : out.groups)
            for (const auto& item : g.items)
                if (item.is_noise) check(o, oracle::png_all_zero(resolve_path(out, item.mask_path)), "nonzero noise mask");
    }
    check(o, texts.size() == 2 && texts[0] == texts[1], "rebuild is not byte-identical");
    if (o.pass)
        o.detail = std::to_string(target) + " injected into " + std::to_string(base_total) + " base items, byte-identical";
    return o;
}

Outcome criterion_ablation() {
    Outcome o;
    ensure_without_gsem();
    auto& r = toy_runs();
    const int64_t n = r.config["data"]["group_size"];
    auto with = training::load_model(r.config, r.with_gsem, training::Stage::full);
    Json cfg = r.config;
    config::apply_override(cfg, "gsem.k=0");
    auto without = training::load_model(cfg, r.without_gsem, training::Stage::full);
    const double s_with = toy::heldout_foreign_saliency(with, r.data, n, 23);
    const double s_without = toy::heldout_foreign_saliency(without, r.data, n, 23);
    check(o, s_without > s_with, "foreign saliency without GSEM " + fmt(s_without) + " <= with " + fmt(s_with));
    const std::string detail = "held-out foreign saliency: k=0 " + fmt(s_without) + ", k=1 " + fmt(s_with);
    o.detail = o.pass ? detail : o.detail + " (" + detail + ")";
    return o;
}

} // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"BDC oracle equivalence", criterion_bdc},
        {"quantizer brute force", criterion_quantizer},
        {"gradient contracts", criterion_gradients},
        {"exchange-masking invariants", criterion_exchange},
        {"metric oracle", criterion_metrics},
        {"toy overfit and noise suppression", criterion_toy},
        {"OW builder statistics", criterion_ow},
        {"ablation switchability", criterion_ablation},
    };
    const std::map<int, double> limits = {{1, 10}, {2, 10}, {3, 60}, {4, 10}, {5, 30}, {7, 30}};

    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
    torch::set_num_threads(1);

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!selected.empty() && !selected.count(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (auto it = limits.find(id); it != limits.end() && secs > it->second)
            o = {false, "took " + fmt(secs) + " s, limit " + fmt(it->second) + " s; " + o.detail};
        failures += !o.pass;
        std::printf("criterion %d [%s]: %s (%.1f s) %s\n", id, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL", secs,
                    o.detail.c_str());
        std::fflush(stdout);
    }
    std::error_code ec;
    fs::remove_all(scratch_root(), ec);
    return failures == 0 ? 0 : 1;
}
