#pragma once

// Transformer co-saliency branch: a strided convolutional tokenizer, plain
// ViT layers, group/specific tokens, and the decoder that fuses the branch
// features F with the uncertainty features V into saliency maps.

#include <cstdint>
#include <vector>

#include <torch/torch.h>

namespace cogsem::cosodtb {

struct BranchOptions {
    int64_t image_size = 224;
    int64_t width = 384;
    int64_t heads = 6;
    int64_t mlp_ratio = 4;
    int64_t backbone_layers = 4;
    int64_t token_layers = 2;
    int64_t decoder_layers = 2;
    int64_t v_channels = 64;

    /// Side length of the stride-16 token grid.
    int64_t grid() const { return image_size / 16; }
    void validate() const;
};

struct TokenState {
    torch::Tensor patch_tokens;   // [N, h*w, c]
    torch::Tensor group_token;    // [N, 1, c]
    torch::Tensor specific_token; // [N, 1, c]

    /// [N, h*w + 2, c] as [group, specific, patches...].
    torch::Tensor concat() const;
};

struct BranchFeatures {
    torch::Tensor values;   // F [N, h, w, c]
    torch::Tensor backbone; // token map after the backbone layers [N, h, w, c]
    /// Tokenizer activations at stride 4 and stride 8 (NCHW), used as skips.
    std::vector<torch::Tensor> pyramid;
};

/// Pre-norm transformer encoder layer over [N, L, c].
class TransformerLayerImpl : public torch::nn::Module {
public:
    TransformerLayerImpl(int64_t width, int64_t heads, int64_t mlp_ratio);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
    torch::nn::MultiheadAttention attn_{nullptr};
    torch::nn::Sequential mlp_{nullptr};
};
TORCH_MODULE(TransformerLayer);

/// Soft-split tokenizer: overlapping strided convolutions 4x, 2x, 2x.
class TokenizerImpl : public torch::nn::Module {
public:
    explicit TokenizerImpl(int64_t width);
    /// images [N, H, W, 3] -> {stride 4, stride 8, stride 16} NCHW maps.
    std::vector<torch::Tensor> forward(const torch::Tensor& images);

private:
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
};
TORCH_MODULE(Tokenizer);

class CosodBranchImpl : public torch::nn::Module {
public:
    explicit CosodBranchImpl(const BranchOptions& options);

    /// Patch tokens after the backbone layers as [N, h, w, c].
    torch::Tensor backbone_features(const torch::Tensor& images);
    BranchFeatures forward(const torch::Tensor& images);

    const BranchOptions& options() const { return options_; }

private:
    /// Mean over the group, summed in sorted order so it does not depend on
    /// the order of the images.
    static torch::Tensor group_mean(const torch::Tensor& tokens);

    BranchOptions options_;
    Tokenizer tokenizer_{nullptr};
    torch::Tensor pos_embed_, group_token_, specific_token_;
    torch::nn::ModuleList backbone_{nullptr}, token_layers_{nullptr};
    torch::nn::LayerNorm group_norm_{nullptr};
    torch::nn::Sequential group_mlp_{nullptr};
    torch::nn::LayerNorm out_norm_{nullptr};
};
TORCH_MODULE(CosodBranch);

class FusionDecoderImpl : public torch::nn::Module {
public:
    explicit FusionDecoderImpl(const BranchOptions& options);
    /// F [N, h, w, c] and V [N, h, w, c_v] -> saliency [N, H, W] in [0, 1].
    torch::Tensor forward(const BranchFeatures& f, const torch::Tensor& v);

private:
    BranchOptions options_;
    torch::nn::Linear fuse_{nullptr};
    torch::nn::ModuleList layers_{nullptr};
    torch::nn::Sequential head_{nullptr};
    torch::nn::ModuleList ups_{nullptr};
    torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(FusionDecoder);

/// Pixel-mean binary cross-entropy per image, averaged over images. `pred`
/// is clamped to [eps, 1 - eps].
torch::Tensor bce_loss(const torch::Tensor& pred, const torch::Tensor& target, double eps = 1e-7);

} // namespace cogsem::cosodtb
