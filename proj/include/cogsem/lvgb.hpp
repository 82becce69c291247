#pragma once

// Latent variable generator branch: a VQ-VAE over images, a gated PixelCNN
// prior over its code indices, and the head that turns an intermediate
// decoder activation into the stochastic feature map V.

#include <cstdint>
#include <functional>
#include <optional>

#include <torch/torch.h>

namespace cogsem::lvgb {

struct VqVaeOptions {
    int64_t hidden = 64;
    int64_t res_blocks = 2;
    /// Each stage halves the resolution; 2 stages give the 4x latent grid.
    int64_t downsample_stages = 2;
    int64_t codebook_size = 128;
    int64_t code_dim = 384;
    double commitment = 0.25;

    void validate() const;
};

/// Read-only view over the embedding matrix [K, D].
struct Codebook {
    torch::Tensor embeddings;

    int64_t size() const { return embeddings.size(0); }
    int64_t dim() const { return embeddings.size(1); }
};

struct LatentGrid {
    torch::Tensor continuous; // ze [N, hz, wz, D]
    torch::Tensor quantized;  // zq [N, hz, wz, D], differentiable w.r.t. the codebook only
    torch::Tensor indices;    // z  [N, hz, wz] int64
};

/// Nearest codebook row per position (squared Euclidean distance, ties to
/// the lowest index). Distances accumulate in double in dimension order.
torch::Tensor nearest_codes(const torch::Tensor& ze, const Codebook& codebook);

LatentGrid quantize(const torch::Tensor& ze, const Codebook& codebook);

/// Forward value zq, backward identity into ze.
torch::Tensor straight_through(const LatentGrid& grid);

class ResidualBlockImpl : public torch::nn::Module {
public:
    explicit ResidualBlockImpl(int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv3_{nullptr}, conv1_{nullptr};
};
TORCH_MODULE(ResidualBlock);

class VqEncoderImpl : public torch::nn::Module {
public:
    explicit VqEncoderImpl(const VqVaeOptions& options);
    /// [N, H, W, 3] -> [N, H/f, W/f, D] with f = 2^downsample_stages.
    torch::Tensor forward(const torch::Tensor& images);

private:
    torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(VqEncoder);

struct DecoderOutput {
    torch::Tensor reconstruction; // [N, H, W, 3] in [0, 1]
    torch::Tensor tap;            // NCHW activation after the first upsampling block
};

class VqDecoderImpl : public torch::nn::Module {
public:
    explicit VqDecoderImpl(const VqVaeOptions& options);
    DecoderOutput forward(const torch::Tensor& zq);
    int64_t tap_channels() const { return tap_channels_; }

private:
    torch::nn::Sequential stem_{nullptr};
    torch::nn::ModuleList ups_{nullptr};
    int64_t tap_channels_ = 0;
};
TORCH_MODULE(VqDecoder);

class VqVaeImpl : public torch::nn::Module {
public:
    explicit VqVaeImpl(const VqVaeOptions& options);

    Codebook codebook() const { return {embeddings}; }
    const VqVaeOptions& options() const { return options_; }

    VqEncoder encoder{nullptr};
    VqDecoder decoder{nullptr};
    torch::Tensor embeddings;

private:
    VqVaeOptions options_;
};
TORCH_MODULE(VqVae);

/// Learned 1x1 projection of the decoder tap to c_v channels followed by
/// average pooling onto the branch feature grid.
class UncertaintyHeadImpl : public torch::nn::Module {
public:
    UncertaintyHeadImpl(int64_t tap_channels, int64_t v_channels);
    /// Returns [N, h, w, c_v].
    torch::Tensor forward(const torch::Tensor& tap, int64_t h, int64_t w);

private:
    torch::nn::Conv2d proj_{nullptr};
};
TORCH_MODULE(UncertaintyHead);

struct UncertaintyFeatures {
    torch::Tensor values; // [N, h, w, c_v]
};

torch::Tensor vq_encode(VqVae& model, const torch::Tensor& images);

struct VqDecodeResult {
    torch::Tensor reconstruction;
    UncertaintyFeatures features;
};
/// `grid_h` x `grid_w` is the feature grid V is pooled onto (H/16 by default).
VqDecodeResult vq_decode(VqVae& model, UncertaintyHead& head, const torch::Tensor& zq, int64_t grid_h, int64_t grid_w);

struct VqLoss {
    torch::Tensor total;
    torch::Tensor reconstruction;
    torch::Tensor codebook;
    torch::Tensor commitment;
};

/// MSE(x, x_rec) + MSE(sg[ze], zq) + lambda0 * MSE(sg[zq], ze). Each MSE is
/// the per-element mean, i.e. per-image means averaged over the batch.
VqLoss vqvae_loss(const torch::Tensor& x, const torch::Tensor& x_rec, const torch::Tensor& ze,
                  const torch::Tensor& zq, double lambda0);

// ---------------------------------------------------------------------------
// autoregressive prior

struct PriorOptions {
    int64_t codebook_size = 128;
    int64_t width = 64;
    int64_t layers = 6;
    int64_t kernel = 7;
    /// Causal self-attention layers after the gated stack; 0 disables them.
    int64_t attention_layers = 0;
    int64_t heads = 4;

    void validate() const;
};

/// Gated masked convolution with separate vertical and horizontal stacks.
/// The first layer (mask A) excludes the current position.
class GatedMaskedConvImpl : public torch::nn::Module {
public:
    GatedMaskedConvImpl(int64_t width, int64_t kernel, bool mask_a, bool residual);
    std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& xv, const torch::Tensor& xh);

private:
    torch::nn::Conv2d vert_{nullptr}, horiz_{nullptr}, v2h_{nullptr}, hres_{nullptr};
    torch::Tensor vmask_, hmask_;
    bool residual_;
};
TORCH_MODULE(GatedMaskedConv);

class CausalAttentionImpl : public torch::nn::Module {
public:
    CausalAttentionImpl(int64_t width, int64_t heads);
    /// x: [N, C, h, w]; position t attends to positions <= t in raster order.
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::LayerNorm norm_{nullptr};
    torch::nn::MultiheadAttention attn_{nullptr};
};
TORCH_MODULE(CausalAttention);

class PixelPriorImpl : public torch::nn::Module {
public:
    explicit PixelPriorImpl(const PriorOptions& options);
    /// indices [N, hz, wz] -> logits [N, K, hz, wz]. Logits at a position
    /// depend only on indices strictly earlier in raster order.
    torch::Tensor forward(const torch::Tensor& indices);
    const PriorOptions& options() const { return options_; }

private:
    PriorOptions options_;
    torch::nn::Embedding embed_{nullptr};
    torch::nn::ModuleList gated_{nullptr};
    torch::nn::ModuleList attention_{nullptr};
    torch::nn::Sequential head_{nullptr};
};
TORCH_MODULE(PixelPrior);

/// Mean cross-entropy of the prior's next-index prediction over all positions.
torch::Tensor prior_nll(PixelPrior& prior, const torch::Tensor& indices);

/// Any causal model mapping an index grid [N, hz, wz] to logits [N, K, hz, wz].
using LogitsFn = std::function<torch::Tensor(const torch::Tensor&)>;

/// Raster-order ancestral sampling of `count` grids.
torch::Tensor prior_sample(const LogitsFn& logits_fn, int64_t count, int64_t hz, int64_t wz, double temperature,
                           at::Generator generator);
torch::Tensor prior_sample(PixelPrior& prior, int64_t count, int64_t hz, int64_t wz, double temperature,
                           at::Generator generator);

/// Resamples every position of an observed grid from the prior's
/// conditional given the observed prefix (one parallel pass).
torch::Tensor prior_resample(PixelPrior& prior, const torch::Tensor& indices, double temperature,
                             at::Generator generator);

at::Generator make_generator(uint64_t seed);

} // namespace cogsem::lvgb
