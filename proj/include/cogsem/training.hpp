#pragma once

// Staged training: VQ-VAE, then the prior over its codes, then the
// co-saliency branch and fusion decoder with exchange-masking applied to
// every pair of groups.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "cogsem/cosodtb.hpp"
#include "cogsem/datamodel.hpp"
#include "cogsem/gsem.hpp"
#include "cogsem/lvgb.hpp"

namespace cogsem::training {

namespace fs = std::filesystem;

struct ModelOptions {
    lvgb::VqVaeOptions vqvae;
    lvgb::PriorOptions prior;
    cosodtb::BranchOptions branch;
    double temperature = 1.0;

    static ModelOptions from_config(const nlohmann::json& config);
};

/// Where V comes from: the decoder of the encoder's own quantized codes, or
/// the decoder of codes resampled from the prior.
enum class VPath { reconstruction, sampled };

class CogsemModelImpl : public torch::nn::Module {
public:
    explicit CogsemModelImpl(const ModelOptions& options);

    /// One group [N, H, W, 3] -> saliency [N, H, W]. The sampled path needs
    /// a generator.
    torch::Tensor predict_group(const torch::Tensor& images, VPath path,
                                std::optional<at::Generator> generator = std::nullopt);

    /// Quantized codes of a batch (no gradient).
    lvgb::LatentGrid encode(const torch::Tensor& images);

    const ModelOptions& options() const { return options_; }

    lvgb::VqVae vqvae{nullptr};
    lvgb::UncertaintyHead vhead{nullptr};
    lvgb::PixelPrior prior{nullptr};
    cosodtb::CosodBranch branch{nullptr};
    cosodtb::FusionDecoder decoder{nullptr};

private:
    ModelOptions options_;
};
TORCH_MODULE(CogsemModel);

enum class Stage { vqvae, prior, full };

Stage parse_stage(const std::string& name);
std::string to_string(Stage stage);

struct GsemSettings {
    /// 0 disables exchange-masking.
    int64_t k = 1;
    double mu = 0.5;
    gsem::HardnessOrder order = gsem::HardnessOrder::low;
    bool normalize = true;
};

struct StageConfig {
    Stage stage = Stage::full;
    std::array<double, 3> lambdas{0.0, 0.0, 1.0};
    int64_t steps = 0;
    std::string optimizer = "adam";
    double lr = 1e-4;
    uint64_t seed = 0;
    int64_t group_size = 5;
    GsemSettings gsem;
    double bce_eps = 1e-7;
    int64_t checkpoint_every = 0;
    bool dead_code_reinit = false;

    /// One-hot lambdas matching the stage, 0 <= k, 2k < group_size.
    void validate() const;
    static StageConfig from_config(const nlohmann::json& config, Stage stage);
};

using GroupPair = std::pair<LabeledGroup, LabeledGroup>;

/// Uniform unordered pairs of distinct categories, each side filled with
/// `group_size` distinct images drawn from its category.
class GroupPairSampler {
public:
    GroupPairSampler(std::vector<CategoryPool> pools, int64_t group_size, uint64_t seed);
    GroupPair next();
    /// Just the category indices of the next pair (advances the stream).
    std::pair<std::size_t, std::size_t> next_categories();

    const std::vector<CategoryPool>& pools() const { return pools_; }

private:
    LabeledGroup draw(std::size_t category);

    std::vector<CategoryPool> pools_;
    int64_t group_size_;
    std::mt19937_64 rng_;
};

/// Batches of images drawn uniformly with replacement from all categories.
class ImageBatchSampler {
public:
    ImageBatchSampler(const std::vector<CategoryPool>& pools, int64_t batch, uint64_t seed);
    torch::Tensor next();

private:
    torch::Tensor images_;
    int64_t batch_;
    std::mt19937_64 rng_;
};

struct LossComponents {
    torch::Tensor vqvae;
    torch::Tensor generative;
    torch::Tensor transformer;
};

/// lambda1 * L_vqvae + lambda2 * L_gen + lambda3 * L_trans, skipping terms
/// whose weight is zero (they may be left undefined).
torch::Tensor compute_objective(const LossComponents& losses, const std::array<double, 3>& lambdas);

/// Parameters optimized in a stage.
std::vector<torch::Tensor> trainable_parameters(CogsemModel& model, Stage stage);

struct StepResult {
    double loss = 0.0;
    /// Named loss components for the history file.
    std::vector<std::pair<std::string, double>> components;
    std::vector<std::pair<std::string, std::string>> exchanged;
};

/// Applies exchange-masking to a pair using the current backbone.
gsem::ExchangeResult exchange_pair(CogsemModel& model, const GroupPair& pair, const GsemSettings& settings);

StepResult train_step_vqvae(CogsemModel& model, torch::optim::Optimizer& opt, const torch::Tensor& images,
                            const StageConfig& stage);
StepResult train_step_prior(CogsemModel& model, torch::optim::Optimizer& opt, const torch::Tensor& images,
                            const StageConfig& stage);
StepResult train_step_full(CogsemModel& model, torch::optim::Optimizer& opt, const GroupPair& pair,
                           const StageConfig& stage);

/// Resets codebook rows no position of `images` maps to onto random
/// encoder outputs. Returns the number of rows reset.
int64_t reinit_dead_codes(CogsemModel& model, const torch::Tensor& images, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// checkpoints

struct CheckpointMeta {
    nlohmann::json config;
    std::vector<std::string> completed_stages;
    int64_t step = 0;
};

/// Binary container: magic, version, JSON header (config snapshot, stage
/// list, tensor table with dtype/shape/offset), then raw tensor bytes.
void save_checkpoint(CogsemModel& model, const CheckpointMeta& meta, const fs::path& path);
CheckpointMeta load_checkpoint(CogsemModel& model, const fs::path& path);
CheckpointMeta read_checkpoint_meta(const fs::path& path);

fs::path stage_dir(const fs::path& run_dir, Stage stage);
/// Highest-step checkpoint of a stage, if any.
std::optional<fs::path> latest_checkpoint(const fs::path& run_dir, Stage stage);

struct StageOutcome {
    fs::path checkpoint;
    std::vector<StepResult> history;
};

/// Loads the prerequisite checkpoint (DependencyError when missing), trains
/// for `stage.steps` steps, and writes checkpoints plus history.csv under
/// `{run_dir}/stage-{name}/`.
StageOutcome run_stage(const StageConfig& stage, const nlohmann::json& config, const std::vector<CategoryPool>& pools,
                       const fs::path& run_dir);

/// Builds the model from the config and loads the latest checkpoint of
/// `stage` (DependencyError when missing).
CogsemModel load_model(const nlohmann::json& config, const fs::path& run_dir, Stage stage);

} // namespace cogsem::training
