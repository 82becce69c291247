#include "cogsem/training.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>

#include "cogsem/errors.hpp"

namespace cogsem::training {

using nlohmann::json;

ModelOptions ModelOptions::from_config(const json& c) {
    ModelOptions o;
    const auto& vq = c.at("model").at("vqvae");
    o.vqvae.hidden = vq.at("hidden");
    o.vqvae.res_blocks = vq.at("res_blocks");
    o.vqvae.downsample_stages = vq.at("downsample_stages");
    o.vqvae.codebook_size = vq.at("codebook_size");
    o.vqvae.code_dim = vq.at("code_dim");
    o.vqvae.commitment = vq.at("commitment");
    const auto& pr = c.at("model").at("prior");
    o.prior.codebook_size = o.vqvae.codebook_size;
    o.prior.width = pr.at("width");
    o.prior.layers = pr.at("layers");
    o.prior.kernel = pr.at("kernel");
    o.prior.attention_layers = pr.at("attention_layers");
    o.prior.heads = pr.at("heads");
    o.temperature = pr.at("temperature");
    const auto& br = c.at("model").at("branch");
    o.branch.image_size = c.at("data").at("image_size");
    o.branch.width = br.at("width");
    o.branch.heads = br.at("heads");
    o.branch.mlp_ratio = br.at("mlp_ratio");
    o.branch.backbone_layers = br.at("backbone_layers");
    o.branch.token_layers = br.at("token_layers");
    o.branch.decoder_layers = br.at("decoder_layers");
    o.branch.v_channels = br.at("v_channels");
    return o;
}

CogsemModelImpl::CogsemModelImpl(const ModelOptions& o) : options_(o) {
    vqvae = register_module("vqvae", lvgb::VqVae(o.vqvae));
    vhead = register_module("vhead", lvgb::UncertaintyHead(vqvae->decoder->tap_channels(), o.branch.v_channels));
    prior = register_module("prior", lvgb::PixelPrior(o.prior));
    branch = register_module("branch", cosodtb::CosodBranch(o.branch));
    decoder = register_module("decoder", cosodtb::FusionDecoder(o.branch));
}

lvgb::LatentGrid CogsemModelImpl::encode(const torch::Tensor& images) {
    torch::NoGradGuard no_grad;
    return lvgb::quantize(vqvae->encoder(images), vqvae->codebook());
}

torch::Tensor CogsemModelImpl::predict_group(const torch::Tensor& images, VPath path,
                                             std::optional<at::Generator> generator) {
    torch::Tensor tap;
    {
        torch::NoGradGuard no_grad;
        auto grid = encode(images);
        auto zq = grid.quantized;
        if (path == VPath::sampled) {
            if (!generator) throw ContractError("predict_group: the sampled path needs a generator");
            auto idx = lvgb::prior_resample(prior, grid.indices, options_.temperature, *generator);
            zq = vqvae->embeddings.index_select(0, idx.reshape({-1})).view(grid.quantized.sizes());
        }
        tap = vqvae->decoder(zq).tap;
    }
    const int64_t g = options_.branch.grid();
    auto v = vhead(tap, g, g);
    return decoder(branch(images), v);
}

Stage parse_stage(const std::string& name) {
    if (name == "vqvae") return Stage::vqvae;
    if (name == "prior") return Stage::prior;
    if (name == "full") return Stage::full;
    throw ConfigError("unknown stage '" + name + "'");
}

std::string to_string(Stage stage) {
    switch (stage) {
    case Stage::vqvae: return "vqvae";
    case Stage::prior: return "prior";
    case Stage::full: return "full";
    }
    return "?";
}

void StageConfig::validate() const {
    int ones = 0, zeros = 0;
    for (double l : lambdas) {
        ones += l == 1.0;
        zeros += l == 0.0;
    }
    if (ones != 1 || zeros != 2) throw ContractError("stage lambdas must be one-hot");
    if (lambdas[static_cast<std::size_t>(stage)] != 1.0)
        throw ContractError("stage lambdas do not select the " + to_string(stage) + " loss");
    if (steps < 0) throw ContractError("steps must be non-negative");
    if (optimizer != "adam") throw ContractError("unsupported optimizer '" + optimizer + "'");
    if (!(lr > 0.0)) throw ContractError("learning rate must be positive");
    if (group_size < 2) throw ContractError("group_size must be at least 2");
    if (gsem.k < 0 || 2 * gsem.k >= group_size) throw ContractError("exchange count must satisfy 0 <= k < N/2");
}

StageConfig StageConfig::from_config(const json& c, Stage stage) {
    StageConfig s;
    s.stage = stage;
    const auto& sc = c.at("stages").at(to_string(stage));
    for (std::size_t i = 0; i < 3; ++i) s.lambdas[i] = sc.at("lambdas").at(i).get<double>();
    s.steps = sc.at("steps");
    s.optimizer = sc.at("optimizer").at("name");
    s.lr = sc.at("optimizer").at("lr");
    s.seed = c.at("seed").get<uint64_t>();
    s.group_size = c.at("data").at("group_size");
    const auto& g = c.at("gsem");
    s.gsem.k = g.at("k");
    s.gsem.mu = g.at("mu");
    s.gsem.order = gsem::parse_hardness_order(g.at("hardness_order"));
    s.gsem.normalize = g.at("normalize");
    s.bce_eps = c.at("stages").at("bce_eps");
    s.checkpoint_every = c.at("stages").at("checkpoint_every");
    s.dead_code_reinit = c.at("model").at("vqvae").at("dead_code_reinit");
    return s;
}

// ---------------------------------------------------------------------------

GroupPairSampler::GroupPairSampler(std::vector<CategoryPool> pools, int64_t group_size, uint64_t seed)
    : pools_(std::move(pools)), group_size_(group_size), rng_(seed) {
    if (pools_.size() < 2) throw ContractError("pairing groups needs at least two categories");
    for (const auto& p : pools_)
        if (static_cast<int64_t>(p.ids.size()) < group_size_)
            throw ContractError("category '" + p.category + "' has fewer than " + std::to_string(group_size_) +
                                " images");
}

std::pair<std::size_t, std::size_t> GroupPairSampler::next_categories() {
    const std::size_t c = pools_.size();
    const std::size_t a = std::uniform_int_distribution<std::size_t>(0, c - 1)(rng_);
    std::size_t b = std::uniform_int_distribution<std::size_t>(0, c - 2)(rng_);
    if (b >= a) ++b;
    return {a, b};
}

LabeledGroup GroupPairSampler::draw(std::size_t category) {
    const auto& pool = pools_[category];
    std::vector<int64_t> order(pool.ids.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    order.resize(static_cast<std::size_t>(group_size_));
    auto idx = torch::tensor(order, torch::kLong);
    LabeledGroup g;
    g.images.images = pool.images.index_select(0, idx);
    g.images.category = pool.category;
    g.masks.masks = pool.masks.index_select(0, idx);
    for (auto i : order) g.images.ids.push_back(pool.ids[static_cast<std::size_t>(i)]);
    g.masks.ids = g.images.ids;
    return g;
}

GroupPair GroupPairSampler::next() {
    auto [a, b] = next_categories();
    auto first = draw(a);
    auto second = draw(b);
    return {std::move(first), std::move(second)};
}

ImageBatchSampler::ImageBatchSampler(const std::vector<CategoryPool>& pools, int64_t batch, uint64_t seed)
    : batch_(batch), rng_(seed) {
    std::vector<torch::Tensor> all;
    for (const auto& p : pools)
        if (p.images.defined() && p.images.size(0) > 0) all.push_back(p.images);
    if (all.empty()) throw ContractError("no images to sample from");
    images_ = torch::cat(all, 0);
}

torch::Tensor ImageBatchSampler::next() {
    std::uniform_int_distribution<int64_t> pick(0, images_.size(0) - 1);
    std::vector<int64_t> idx(static_cast<std::size_t>(batch_));
    for (auto& i : idx) i = pick(rng_);
    return images_.index_select(0, torch::tensor(idx, torch::kLong));
}

// ---------------------------------------------------------------------------

torch::Tensor compute_objective(const LossComponents& losses, const std::array<double, 3>& lambdas) {
    const torch::Tensor* terms[3] = {&losses.vqvae, &losses.generative, &losses.transformer};
    torch::Tensor total;
    for (std::size_t i = 0; i < 3; ++i) {
        if (lambdas[i] == 0.0) continue;
        if (!terms[i]->defined()) throw ContractError("objective: an active loss term was not computed");
        auto t = lambdas[i] == 1.0 ? *terms[i] : lambdas[i] * *terms[i];
        total = total.defined() ? total + t : t;
    }
    if (!total.defined()) throw ContractError("objective: all loss weights are zero");
    return total;
}

std::vector<torch::Tensor> trainable_parameters(CogsemModel& model, Stage stage) {
    switch (stage) {
    case Stage::vqvae: return model->vqvae->parameters();
    case Stage::prior: return model->prior->parameters();
    case Stage::full: {
        auto params = model->branch->parameters();
        for (auto& p : model->decoder->parameters()) params.push_back(p);
        for (auto& p : model->vhead->parameters()) params.push_back(p);
        return params;
    }
    }
    return {};
}

namespace {

void require_stage(const StageConfig& stage, Stage expected) {
    if (stage.stage != expected)
        throw ContractError("step function for " + to_string(expected) + " called with stage " +
                            to_string(stage.stage));
}

} // namespace

gsem::ExchangeResult exchange_pair(CogsemModel& model, const GroupPair& pair, const GsemSettings& settings) {
    if (settings.k == 0) return {pair.first, pair.second, {}, {}, {}};
    torch::NoGradGuard no_grad;
    auto x1 = model->branch->backbone_features(pair.first.images.images);
    auto x2 = model->branch->backbone_features(pair.second.images.images);
    auto r1 = gsem::score_group({x1}, pair.first.masks, settings.mu, settings.normalize);
    auto r2 = gsem::score_group({x2}, pair.second.masks, settings.mu, settings.normalize);
    return gsem::select_exchange_mask(pair.first, pair.second, r1, r2, settings.k, settings.order);
}

StepResult train_step_vqvae(CogsemModel& model, torch::optim::Optimizer& opt, const torch::Tensor& images,
                            const StageConfig& stage) {
    require_stage(stage, Stage::vqvae);
    opt.zero_grad();
    auto ze = model->vqvae->encoder(images);
    auto grid = lvgb::quantize(ze, model->vqvae->codebook());
    auto rec = model->vqvae->decoder(lvgb::straight_through(grid)).reconstruction;
    auto loss = lvgb::vqvae_loss(images, rec, ze, grid.quantized, model->options().vqvae.commitment);
    auto objective = compute_objective({loss.total, {}, {}}, stage.lambdas);
    objective.backward();
    opt.step();
    StepResult r;
    r.loss = objective.item<double>();
    r.components = {{"reconstruction", loss.reconstruction.item<double>()},
                    {"codebook", loss.codebook.item<double>()},
                    {"commitment", loss.commitment.item<double>()}};
    return r;
}

StepResult train_step_prior(CogsemModel& model, torch::optim::Optimizer& opt, const torch::Tensor& images,
                            const StageConfig& stage) {
    require_stage(stage, Stage::prior);
    auto indices = model->encode(images).indices;
    opt.zero_grad();
    auto nll = lvgb::prior_nll(model->prior, indices);
    auto objective = compute_objective({{}, nll, {}}, stage.lambdas);
    objective.backward();
    opt.step();
    StepResult r;
    r.loss = objective.item<double>();
    r.components = {{"prior_nll", r.loss}};
    return r;
}

StepResult train_step_full(CogsemModel& model, torch::optim::Optimizer& opt, const GroupPair& pair,
                           const StageConfig& stage) {
    require_stage(stage, Stage::full);
    auto ex = exchange_pair(model, pair, stage.gsem);
    opt.zero_grad();
    auto p1 = model->predict_group(ex.group1.images.images, VPath::reconstruction);
    auto p2 = model->predict_group(ex.group2.images.images, VPath::reconstruction);
    auto pred = torch::cat({p1, p2}, 0);
    auto target = torch::cat({ex.group1.masks.masks, ex.group2.masks.masks}, 0);
    auto bce = cosodtb::bce_loss(pred, target, stage.bce_eps);
    auto objective = compute_objective({{}, {}, bce}, stage.lambdas);
    objective.backward();
    opt.step();
    StepResult r;
    r.loss = objective.item<double>();
    r.components = {{"bce", bce.item<double>()}};
    r.exchanged = ex.exchanged_ids;
    return r;
}

int64_t reinit_dead_codes(CogsemModel& model, const torch::Tensor& images, std::mt19937_64& rng) {
    torch::NoGradGuard no_grad;
    auto ze = model->vqvae->encoder(images);
    const int64_t d = ze.size(-1);
    auto flat = ze.reshape({-1, d});
    auto idx = lvgb::nearest_codes(flat, model->vqvae->codebook());
    auto counts = torch::bincount(idx, {}, model->vqvae->codebook().size());
    auto acc = counts.accessor<int64_t, 1>();
    std::uniform_int_distribution<int64_t> pick(0, flat.size(0) - 1);
    int64_t reset = 0;
    for (int64_t j = 0; j < counts.size(0); ++j) {
        if (acc[j] != 0) continue;
        model->vqvae->embeddings[j].copy_(flat[pick(rng)]);
        ++reset;
    }
    return reset;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr char kMagic[8] = {'C', 'O', 'G', 'S', 'E', 'M', 'C', 'K'};
constexpr uint32_t kVersion = 1;

std::vector<std::pair<std::string, torch::Tensor>> state_of(CogsemModel& model) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& item : model->named_parameters(true)) out.emplace_back(item.key(), item.value());
    for (const auto& item : model->named_buffers(true)) out.emplace_back(item.key(), item.value());
    return out;
}

std::string dtype_name(torch::ScalarType t) { return c10::toString(t); }

torch::ScalarType parse_dtype(const std::string& name) {
    for (auto t : {torch::kFloat32, torch::kFloat64, torch::kInt64, torch::kInt32, torch::kUInt8, torch::kBool})
        if (dtype_name(t) == name) return t;
    throw LoadError("checkpoint: unsupported dtype '" + name + "'");
}

struct RawCheckpoint {
    json header;
    std::string payload;
};

RawCheckpoint read_raw(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open checkpoint '" + path.string() + "'");
    char magic[8];
    uint32_t version = 0;
    uint64_t header_len = 0;
    in.read(magic, 8);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw LoadError("'" + path.string() + "' is not a checkpoint");
    if (version != kVersion) throw LoadError("checkpoint version " + std::to_string(version) + " is not supported");
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw LoadError("checkpoint header is truncated");
    RawCheckpoint raw;
    raw.header = json::parse(header, nullptr, false);
    if (raw.header.is_discarded()) throw LoadError("checkpoint header is not valid JSON");
    raw.payload.assign(std::istreambuf_iterator<char>(in), {});
    return raw;
}

CheckpointMeta meta_of(const json& header) {
    CheckpointMeta meta;
    meta.config = header.at("config");
    meta.completed_stages = header.at("completed_stages").get<std::vector<std::string>>();
    meta.step = header.at("step");
    return meta;
}

} // namespace

void save_checkpoint(CogsemModel& model, const CheckpointMeta& meta, const fs::path& path) {
    json header;
    header["config"] = meta.config;
    header["completed_stages"] = meta.completed_stages;
    header["step"] = meta.step;
    header["tensors"] = json::array();
    std::string payload;
    for (const auto& [name, tensor] : state_of(model)) {
        auto t = tensor.detach().to(torch::kCPU).contiguous();
        const auto nbytes = static_cast<std::size_t>(t.numel()) * t.element_size();
        header["tensors"].push_back({{"name", name},
                                     {"dtype", dtype_name(t.scalar_type())},
                                     {"shape", t.sizes().vec()},
                                     {"offset", payload.size()},
                                     {"nbytes", nbytes}});
        payload.append(static_cast<const char*>(t.data_ptr()), nbytes);
    }
    const std::string text = header.dump();
    const uint64_t header_len = text.size();

    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
        out.write(kMagic, 8);
        out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
        out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
    }
    fs::rename(tmp, path);
}

CheckpointMeta read_checkpoint_meta(const fs::path& path) { return meta_of(read_raw(path).header); }

CheckpointMeta load_checkpoint(CogsemModel& model, const fs::path& path) {
    auto raw = read_raw(path);
    std::map<std::string, json> table;
    for (const auto& entry : raw.header.at("tensors")) table[entry.at("name")] = entry;
    auto state = state_of(model);
    if (table.size() != state.size())
        throw LoadError("checkpoint holds " + std::to_string(table.size()) + " tensors, model has " +
                        std::to_string(state.size()));
    torch::NoGradGuard no_grad;
    for (auto& [name, tensor] : state) {
        auto it = table.find(name);
        if (it == table.end()) throw LoadError("checkpoint is missing tensor '" + name + "'");
        const auto& e = it->second;
        const auto dtype = parse_dtype(e.at("dtype"));
        const auto shape = e.at("shape").get<std::vector<int64_t>>();
        if (dtype != tensor.scalar_type() || shape != tensor.sizes().vec())
            throw LoadError("checkpoint tensor '" + name + "' does not match the model");
        const auto offset = e.at("offset").get<std::size_t>();
        const auto nbytes = e.at("nbytes").get<std::size_t>();
        if (offset + nbytes > raw.payload.size()) throw LoadError("checkpoint payload is truncated");
        auto src = torch::empty(shape, torch::TensorOptions().dtype(dtype));
        std::memcpy(src.data_ptr(), raw.payload.data() + offset, nbytes);
        tensor.copy_(src);
    }
    return meta_of(raw.header);
}

fs::path stage_dir(const fs::path& run_dir, Stage stage) { return run_dir / ("stage-" + to_string(stage)); }

std::optional<fs::path> latest_checkpoint(const fs::path& run_dir, Stage stage) {
    const auto dir = stage_dir(run_dir, stage);
    if (!fs::is_directory(dir)) return std::nullopt;
    std::optional<fs::path> best;
    int64_t best_step = -1;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (!entry.is_directory() || name.rfind("step-", 0) != 0) continue;
        const auto ckpt = entry.path() / "model.ckpt";
        if (!fs::exists(ckpt)) continue;
        int64_t step = -1;
        try {
            step = std::stoll(name.substr(5));
        } catch (const std::exception&) {
            continue;
        }
        if (step > best_step) {
            best_step = step;
            best = ckpt;
        }
    }
    return best;
}

namespace {

fs::path checkpoint_path(const fs::path& run_dir, Stage stage, int64_t step) {
    return stage_dir(run_dir, stage) / ("step-" + std::to_string(step)) / "model.ckpt";
}

fs::path require_checkpoint(const fs::path& run_dir, Stage needed, Stage requested) {
    auto ckpt = latest_checkpoint(run_dir, needed);
    if (!ckpt)
        throw DependencyError("stage " + to_string(requested) + " requires a " + to_string(needed) +
                              " checkpoint under " + stage_dir(run_dir, needed).string());
    return *ckpt;
}

} // namespace

CogsemModel load_model(const json& config, const fs::path& run_dir, Stage stage) {
    auto ckpt = require_checkpoint(run_dir, stage, stage);
    CogsemModel model(ModelOptions::from_config(config));
    load_checkpoint(model, ckpt);
    return model;
}

StageOutcome run_stage(const StageConfig& stage, const json& config, const std::vector<CategoryPool>& pools,
                       const fs::path& run_dir) {
    stage.validate();
    std::vector<std::string> completed;
    std::optional<fs::path> init;
    if (stage.stage == Stage::prior) init = require_checkpoint(run_dir, Stage::vqvae, stage.stage);
    if (stage.stage == Stage::full) {
        require_checkpoint(run_dir, Stage::vqvae, stage.stage);
        init = require_checkpoint(run_dir, Stage::prior, stage.stage);
    }

    torch::manual_seed(stage.seed);
    CogsemModel model(ModelOptions::from_config(config));
    if (init) {
        completed = load_checkpoint(model, *init).completed_stages;
        const auto needs = stage.stage == Stage::full ? std::vector<std::string>{"vqvae", "prior"}
                                                      : std::vector<std::string>{"vqvae"};
        for (const auto& n : needs)
            if (std::find(completed.begin(), completed.end(), n) == completed.end())
                throw DependencyError("checkpoint " + init->string() + " has not completed stage " + n);
    }
    completed.erase(std::remove(completed.begin(), completed.end(), to_string(stage.stage)), completed.end());

    // A rerun replaces the stage's previous outputs.
    const auto dir = stage_dir(run_dir, stage.stage);
    fs::remove_all(dir);
    fs::create_directories(dir);
    {
        std::ofstream cfg(run_dir / "config.json");
        cfg << config.dump(2) << "\n";
    }

    torch::optim::Adam opt(trainable_parameters(model, stage.stage),
                           torch::optim::AdamOptions(stage.lr).betas({0.9, 0.999}));
    std::optional<ImageBatchSampler> images;
    std::optional<GroupPairSampler> pairs;
    if (stage.stage == Stage::full) pairs.emplace(pools, stage.group_size, stage.seed);
    else images.emplace(pools, 2 * stage.group_size, stage.seed);
    std::mt19937_64 reinit_rng(stage.seed ^ 0x9e3779b97f4a7c15ULL);

    StageOutcome outcome;
    std::ofstream history(dir / "history.csv", std::ios::trunc);
    bool header_written = false;
    const int64_t report_every = std::max<int64_t>(1, stage.steps / 10);

    auto save = [&](int64_t step, bool final) {
        auto stages = completed;
        if (final) stages.push_back(to_string(stage.stage));
        const auto path = checkpoint_path(run_dir, stage.stage, step);
        save_checkpoint(model, {config, stages, step}, path);
        return path;
    };

    for (int64_t step = 1; step <= stage.steps; ++step) {
        StepResult r;
        switch (stage.stage) {
        case Stage::vqvae: {
            auto batch = images->next();
            r = train_step_vqvae(model, opt, batch, stage);
            if (stage.dead_code_reinit) reinit_dead_codes(model, batch, reinit_rng);
            break;
        }
        case Stage::prior: r = train_step_prior(model, opt, images->next(), stage); break;
        case Stage::full: r = train_step_full(model, opt, pairs->next(), stage); break;
        }
        if (!header_written) {
            history << "step,loss";
            for (const auto& [name, _] : r.components) history << "," << name;
            history << "\n";
            header_written = true;
        }
        history << step << "," << r.loss;
        for (const auto& [_, value] : r.components) history << "," << value;
        history << "\n";
        if (step % report_every == 0 || step == stage.steps)
            std::cerr << "[" << to_string(stage.stage) << "] step " << step << "/" << stage.steps << " loss "
                      << r.loss << "\n";
        if (stage.checkpoint_every > 0 && step % stage.checkpoint_every == 0 && step != stage.steps) save(step, false);
        outcome.history.push_back(std::move(r));
    }
    if (!header_written) history << "step,loss\n";
    outcome.checkpoint = save(stage.steps, true);
    return outcome;
}

} // namespace cogsem::training
