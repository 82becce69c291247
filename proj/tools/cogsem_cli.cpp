// cogsem: dataset construction, difficulty scoring, staged training,
// evaluation and prior sampling from one JSON config.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cogsem/config.hpp"
#include "cogsem/datamodel.hpp"
#include "cogsem/errors.hpp"
#include "cogsem/gsem.hpp"
#include "cogsem/metrics.hpp"
#include "cogsem/owdata.hpp"
#include "cogsem/training.hpp"

namespace fs = std::filesystem;
using namespace cogsem;
using config::Json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<int64_t> seed;
    std::string out;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file (defaults when omitted)");
    cmd->add_option("--seed", args.seed, "Override the global seed");
    cmd->add_option("--out", args.out, "Output root (default: $COGSEM_OUT or ./runs)");
    cmd->add_option("--set", args.overrides, "key.path=value override (repeatable)")->take_all();
}

Json load_config(const CommonArgs& args) {
    auto overrides = args.overrides;
    if (args.seed) overrides.push_back("seed=" + std::to_string(*args.seed));
    return config::load(args.config_path, overrides);
}

fs::path prepare_run(const CommonArgs& args, const Json& cfg) {
    const auto run = config::run_directory(config::default_output_root(args.out), cfg);
    fs::create_directories(run);
    std::ofstream(run / "config.json") << cfg.dump(2) << "\n";
    return run;
}

fs::path require_path(const Json& cfg, const std::string& section, const std::string& key) {
    const auto value = cfg.at(section).at(key).get<std::string>();
    if (value.empty()) throw ConfigError(section + "." + key + ": required for this command");
    return value;
}

// ---------------------------------------------------------------------------

int cmd_validate(const CommonArgs& args, const std::string& stage) {
    Json cfg = config::defaults();
    if (!args.config_path.empty()) {
        std::ifstream in(args.config_path);
        if (!in) throw IoError("cannot read config '" + args.config_path + "'");
        Json file = Json::parse(in, nullptr, false);
        if (file.is_discarded()) throw ConfigError(args.config_path + ": not valid JSON");
        cfg = file;
    }
    for (const auto& o : args.overrides) {
        Json merged = config::merge(config::defaults(), cfg);
        config::apply_override(merged, o);
        cfg = merged;
    }
    std::optional<std::string> st;
    std::optional<fs::path> run;
    if (!stage.empty()) {
        st = stage;
        auto report = config::validate(cfg);
        if (report.ok()) run = config::run_directory(config::default_output_root(args.out), config::merge(config::defaults(), cfg));
    }
    auto report = config::validate(cfg, st, run);
    if (report.ok()) {
        std::cout << "config OK\n";
        return 0;
    }
    std::cerr << report.describe();
    return static_cast<int>(ErrorKind::config);
}

int cmd_build_ow(const CommonArgs& args) {
    const Json cfg = load_config(args);
    const auto run = prepare_run(args, cfg);
    const auto& ow = cfg.at("owdata");
    const auto base = read_manifest(require_path(cfg, "owdata", "base_manifest"));

    owdata::NoisePolicy policy;
    policy.mode = owdata::parse_noise_mode(ow.at("mode"));
    policy.min_foreign = ow.at("min_foreign");
    policy.max_foreign = ow.at("max_foreign");
    policy.seed = cfg.at("seed").get<uint64_t>();
    const auto& s = ow.at("sampler");
    policy.ratio.kind = owdata::parse_sampler_kind(s.at("kind"));
    policy.ratio.center = s.at("center");
    policy.ratio.second_center = s.at("second_center");
    policy.ratio.sigma = s.at("sigma");
    policy.ratio.min_ratio = s.at("min_ratio");
    policy.ratio.max_ratio = s.at("max_ratio");

    owdata::BuildOptions opts;
    opts.manifest_dir = run / "owdataset";
    if (const int64_t t = ow.at("target_total"); t > 0) opts.target_total = t;
    auto out = owdata::build_ow_dataset(base, policy, opts);
    const auto path = opts.manifest_dir / "manifest.json";
    write_manifest(out, path);

    auto report = owdata::validate_ow_dataset(read_manifest(path), true);
    std::cout << path.string() << "\n"
              << "injected " << report.total_noise << " noise items over " << report.groups.size() << " groups\n";
    if (!report.ok()) throw ValidationError("built dataset failed validation: " + report.failures.front());
    return 0;
}

int cmd_score(const CommonArgs& args) {
    const Json cfg = load_config(args);
    const auto run = prepare_run(args, cfg);
    LoadOptions lo;
    lo.image_size = cfg["data"]["image_size"];
    lo.group_size = cfg["data"]["group_size"];
    lo.seed = cfg["seed"].get<uint64_t>();
    const auto groups = load_dataset(require_path(cfg, "data", "manifest"), lo);

    // The current full-stage backbone when one exists, else a seeded init.
    std::optional<training::CogsemModel> model;
    if (training::latest_checkpoint(run, training::Stage::full)) {
        model = training::load_model(cfg, run, training::Stage::full);
    } else {
        std::cerr << "note: no full-stage checkpoint in " << run.string() << "; scoring with initial weights\n";
        torch::manual_seed(cfg["seed"].get<uint64_t>());
        model = training::CogsemModel(training::ModelOptions::from_config(cfg));
    }
    const double mu = cfg["gsem"]["mu"];
    const int64_t k = cfg["gsem"]["k"];
    const auto order = gsem::parse_hardness_order(cfg["gsem"]["hardness_order"]);
    const bool normalize = cfg["gsem"]["normalize"];

    const auto dir = run / "difficulty";
    fs::create_directories(dir);
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        const auto& g = groups[i];
        auto feats = (*model)->branch->backbone_features(g.images.images);
        auto report = gsem::score_group({feats}, g.masks, mu, normalize);
        Json side = {{"category", g.images.category}, {"ids", g.images.ids},          {"bdc", report.bdc_scores},
                     {"bin", report.bin_scores},      {"mixed", report.mixed},        {"mu", report.mu},
                     {"hardness_order", to_string(order)}};
        std::vector<std::string> hardest;
        if (k > 0)
            for (auto idx : gsem::select_hardest(report.mixed, k, order))
                hardest.push_back(g.images.ids[static_cast<std::size_t>(idx)]);
        side["hardest"] = hardest;
        const auto path = dir / (g.images.category + "_" + std::to_string(i) + ".json");
        std::ofstream(path) << side.dump(2) << "\n";
    }
    std::cout << "wrote " << groups.size() << " difficulty reports to " << dir.string() << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args, const std::string& stage_name) {
    const Json cfg = load_config(args);
    const auto stage = training::parse_stage(stage_name);
    const auto run = prepare_run(args, cfg);
    auto report = config::validate(cfg, stage_name, run);
    if (!report.ok()) {
        for (const auto& issue : report.issues)
            if (issue.path == "stage") throw DependencyError(issue.message);
        throw ConfigError(report.describe());
    }
    const auto manifest = read_manifest(require_path(cfg, "data", "manifest"));
    const auto pools = load_pools(manifest, cfg["data"]["image_size"]);
    auto outcome = training::run_stage(training::StageConfig::from_config(cfg, stage), cfg, pools, run);
    std::cout << outcome.checkpoint.string() << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args) {
    const Json cfg = load_config(args);
    const auto run = prepare_run(args, cfg);
    const auto& data = cfg["data"];
    const fs::path manifest_path =
        data["eval_manifest"].get<std::string>().empty() ? require_path(cfg, "data", "manifest")
                                                         : fs::path(data["eval_manifest"].get<std::string>());
    const auto manifest = read_manifest(manifest_path);
    const auto out_dir = run / "eval";
    fs::create_directories(out_dir);

    fs::path pred_dir = cfg["metrics"]["pred_dir"].get<std::string>();
    if (pred_dir.empty()) {
        auto model = training::load_model(cfg, run, training::Stage::full);
        pred_dir = out_dir / "pred";
        LoadOptions lo;
        lo.image_size = data["image_size"];
        lo.group_size = data["eval_group_size"];
        lo.mode = LoadMode::eval;
        lo.seed = cfg["seed"].get<uint64_t>();
        auto gen = lvgb::make_generator(cfg["seed"].get<uint64_t>());
        torch::NoGradGuard no_grad;
        for (const auto& g : load_dataset(manifest, lo)) {
            auto pred = model->predict_group(g.images.images, training::VPath::sampled, gen);
            for (std::size_t i = 0; i < g.images.ids.size(); ++i) {
                const auto& id = g.images.ids[i];
                if (is_padding_id(id)) continue;
                write_saliency_map({pred[static_cast<int64_t>(i)], id}, pred_dir);
            }
        }
    }
    const double beta_sq = cfg["metrics"]["beta_sq"];
    const double alpha = cfg["metrics"]["alpha"];
    auto result = metrics::evaluate_dataset(pred_dir, manifest, beta_sq, alpha);
    metrics::write_summary(result.summary, out_dir / "summary.json");
    metrics::write_per_image_csv(result.images, out_dir / "per_image.csv");
    metrics::write_curves_csv(result.summary, out_dir / "curves.csv");
    std::printf("MAE %.4f  S %.4f  E_max %.4f  F_max %.4f  (%zu images)\n", result.summary.mae,
                result.summary.s_measure, result.summary.e_measure_max, result.summary.f_measure_max,
                result.summary.image_count);
    return 0;
}

int cmd_sample(const CommonArgs& args) {
    const Json cfg = load_config(args);
    const auto run = prepare_run(args, cfg);
    auto model = training::load_model(cfg, run, training::Stage::prior);
    const int64_t count = cfg["sample"]["count"];
    const double temperature = cfg["sample"]["temperature"];
    const int64_t side = cfg["data"]["image_size"].get<int64_t>() >> cfg["model"]["vqvae"]["downsample_stages"].get<int64_t>();
    auto gen = lvgb::make_generator(cfg["seed"].get<uint64_t>());
    torch::NoGradGuard no_grad;
    auto grids = lvgb::prior_sample(model->prior, count, side, side, temperature, gen);
    auto zq = model->vqvae->embeddings.index_select(0, grids.reshape({-1}))
                  .view({count, side, side, model->options().vqvae.code_dim});
    auto images = model->vqvae->decoder(zq).reconstruction;

    const auto dir = run / "samples";
    fs::create_directories(dir);
    Json out = Json::array();
    for (int64_t i = 0; i < count; ++i) {
        auto g = grids[i];
        std::vector<std::vector<int64_t>> rows;
        for (int64_t r = 0; r < side; ++r) {
            auto row = g[r].contiguous();
            rows.emplace_back(row.data_ptr<int64_t>(), row.data_ptr<int64_t>() + side);
        }
        out.push_back(rows);
        auto rgb = (images[i] * 255.0).round().clamp(0, 255).to(torch::kUInt8).contiguous();
        cv::Mat img(static_cast<int>(rgb.size(0)), static_cast<int>(rgb.size(1)), CV_8UC3, rgb.data_ptr()), bgr;
        cv::cvtColor(img, bgr, cv::COLOR_RGB2BGR);
        const auto path = dir / ("sample_" + std::to_string(i) + ".png");
        if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write '" + path.string() + "'");
    }
    std::ofstream(dir / "grids.json") << out.dump() << "\n";
    std::cout << "wrote " << count << " samples to " << dir.string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Open-world co-salient object detection toolkit"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string stage;

    auto* validate = app.add_subcommand("validate-config", "Check a config without side effects");
    add_common(validate, args);
    validate->add_option("--stage", stage, "Also check prerequisites of this stage")
        ->check(CLI::IsMember({"vqvae", "prior", "full"}));
    auto* build = app.add_subcommand("build-owdataset", "Inject foreign noise images into a grouped dataset");
    add_common(build, args);
    auto* score = app.add_subcommand("score-difficulty", "Write per-group difficulty reports");
    add_common(score, args);
    auto* train = app.add_subcommand("train", "Run one training stage");
    add_common(train, args);
    train->add_option("--stage", stage, "Stage to run")->required()->check(CLI::IsMember({"vqvae", "prior", "full"}));
    auto* eval = app.add_subcommand("eval", "Predict (or read predictions) and compute metrics");
    add_common(eval, args);
    auto* sample = app.add_subcommand("sample-prior", "Sample latent grids from the prior and decode them");
    add_common(sample, args);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*validate) return cmd_validate(args, stage);
        if (*build) return cmd_build_ow(args);
        if (*score) return cmd_score(args);
        if (*train) return cmd_train(args, stage);
        if (*eval) return cmd_eval(args);
        if (*sample) return cmd_sample(args);
    } catch (const Error& e) {
        std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
