#include "cogsem/cosodtb.hpp"

#include <cmath>
#include <iostream>

#include "cogsem/errors.hpp"

namespace cogsem::cosodtb {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

void BranchOptions::validate() const {
    if (image_size < 16 || image_size % 16 != 0) throw ContractError("image_size must be a positive multiple of 16");
    if (width < 8 || width % 8 != 0) throw ContractError("branch width must be a positive multiple of 8");
    if (heads < 1 || width % heads != 0) throw ContractError("heads must divide the branch width");
    if (mlp_ratio < 1 || backbone_layers < 0 || token_layers < 1 || decoder_layers < 0)
        throw ContractError("invalid branch depth settings");
    if (v_channels < 1) throw ContractError("v_channels must be positive");
}

torch::Tensor TokenState::concat() const { return torch::cat({group_token, specific_token, patch_tokens}, 1); }

TransformerLayerImpl::TransformerLayerImpl(int64_t width, int64_t heads, int64_t mlp_ratio) {
    norm1_ = register_module("norm1", nn::LayerNorm(nn::LayerNormOptions({width})));
    norm2_ = register_module("norm2", nn::LayerNorm(nn::LayerNormOptions({width})));
    attn_ = register_module("attn", nn::MultiheadAttention(nn::MultiheadAttentionOptions(width, heads)));
    mlp_ = register_module("mlp", nn::Sequential(nn::Linear(width, width * mlp_ratio), nn::GELU(),
                                                 nn::Linear(width * mlp_ratio, width)));
}

torch::Tensor TransformerLayerImpl::forward(const torch::Tensor& x) {
    auto q = norm1_(x).transpose(0, 1); // [L, N, c]
    auto attended = std::get<0>(attn_->forward(q, q, q, {}, false));
    auto y = x + attended.transpose(0, 1);
    return y + mlp_->forward(norm2_(y));
}

TokenizerImpl::TokenizerImpl(int64_t width) {
    conv1_ = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(3, width / 4, 7).stride(4).padding(3)));
    conv2_ = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(width / 4, width / 2, 3).stride(2).padding(1)));
    conv3_ = register_module("conv3", nn::Conv2d(nn::Conv2dOptions(width / 2, width, 3).stride(2).padding(1)));
}

std::vector<torch::Tensor> TokenizerImpl::forward(const torch::Tensor& images) {
    auto s4 = F::gelu(conv1_(images.permute({0, 3, 1, 2})));
    auto s8 = F::gelu(conv2_(s4));
    auto s16 = conv3_(s8);
    return {s4, s8, s16};
}

namespace {

torch::Tensor trunc_normal(std::vector<int64_t> shape, double std) {
    // Inverse-CDF sampling of a normal truncated to two standard deviations.
    const double cdf = 0.5 * (1.0 + std::erf(2.0 / std::sqrt(2.0)));
    auto t = torch::empty(shape).uniform_(1.0 - 2.0 * cdf, 2.0 * cdf - 1.0);
    return t.erfinv_().mul_(std * std::sqrt(2.0)).clamp_(-2.0 * std, 2.0 * std);
}

} // namespace

CosodBranchImpl::CosodBranchImpl(const BranchOptions& o) : options_(o) {
    o.validate();
    const int64_t tokens = o.grid() * o.grid();
    tokenizer_ = register_module("tokenizer", Tokenizer(o.width));
    pos_embed_ = register_parameter("pos_embed", trunc_normal({1, tokens, o.width}, 0.02));
    group_token_ = register_parameter("group_token", trunc_normal({1, 1, o.width}, 0.02));
    specific_token_ = register_parameter("specific_token", trunc_normal({1, 1, o.width}, 0.02));
    backbone_ = nn::ModuleList();
    for (int64_t i = 0; i < o.backbone_layers; ++i) backbone_->push_back(TransformerLayer(o.width, o.heads, o.mlp_ratio));
    register_module("backbone", backbone_);
    token_layers_ = nn::ModuleList();
    for (int64_t i = 0; i < o.token_layers; ++i)
        token_layers_->push_back(TransformerLayer(o.width, o.heads, o.mlp_ratio));
    register_module("token_layers", token_layers_);
    group_norm_ = register_module("group_norm", nn::LayerNorm(nn::LayerNormOptions({o.width})));
    group_mlp_ = register_module("group_mlp", nn::Sequential(nn::Linear(o.width, o.width * o.mlp_ratio), nn::GELU(),
                                                             nn::Linear(o.width * o.mlp_ratio, o.width)));
    out_norm_ = register_module("out_norm", nn::LayerNorm(nn::LayerNormOptions({o.width})));
}

torch::Tensor CosodBranchImpl::group_mean(const torch::Tensor& tokens) {
    const auto n = tokens.size(0);
    return std::get<0>(tokens.sort(0)).sum(0, true) / static_cast<double>(n);
}

namespace {

void check_images(const torch::Tensor& images, const BranchOptions& o) {
    if (images.dim() != 4 || images.size(3) != 3) throw ShapeError("branch expects images [N, H, W, 3]");
    if (images.size(1) != o.image_size || images.size(2) != o.image_size)
        throw ShapeError("branch: images must be " + std::to_string(o.image_size) + "x" + std::to_string(o.image_size));
}

torch::Tensor to_grid(const torch::Tensor& tokens, int64_t side) {
    return tokens.reshape({tokens.size(0), side, side, tokens.size(2)});
}

} // namespace

torch::Tensor CosodBranchImpl::backbone_features(const torch::Tensor& images) {
    check_images(images, options_);
    auto x = tokenizer_(images)[2].flatten(2).transpose(1, 2) + pos_embed_;
    for (const auto& layer : *backbone_) x = layer->as<TransformerLayer>()->forward(x);
    return to_grid(x, options_.grid());
}

BranchFeatures CosodBranchImpl::forward(const torch::Tensor& images) {
    check_images(images, options_);
    const int64_t n = images.size(0);
    if (n < 2) std::cerr << "warning: group of " << n << " image(s); group consensus is degenerate\n";

    auto maps = tokenizer_(images);
    auto x = maps[2].flatten(2).transpose(1, 2) + pos_embed_;
    for (const auto& layer : *backbone_) x = layer->as<TransformerLayer>()->forward(x);

    BranchFeatures out;
    out.backbone = to_grid(x, options_.grid());
    out.pyramid = {maps[0], maps[1]};

    TokenState state{x, group_token_.expand({n, 1, options_.width}), specific_token_.expand({n, 1, options_.width})};
    for (const auto& layer : *token_layers_) {
        auto seq = layer->as<TransformerLayer>()->forward(state.concat());
        auto g = group_mean(seq.slice(1, 0, 1));
        g = g + group_mlp_->forward(group_norm_(g));
        state.group_token = g.expand({n, 1, options_.width});
        state.specific_token = seq.slice(1, 1, 2);
        state.patch_tokens = seq.slice(1, 2);
    }
    out.values = to_grid(out_norm_(state.patch_tokens), options_.grid());
    return out;
}

// ---------------------------------------------------------------------------

FusionDecoderImpl::FusionDecoderImpl(const BranchOptions& o) : options_(o) {
    o.validate();
    const int64_t c = o.width;
    fuse_ = register_module("fuse", nn::Linear(c + o.v_channels, c));
    layers_ = nn::ModuleList();
    for (int64_t i = 0; i < o.decoder_layers; ++i) layers_->push_back(TransformerLayer(c, o.heads, o.mlp_ratio));
    register_module("layers", layers_);
    head_ = register_module("head", nn::Sequential(nn::LayerNorm(nn::LayerNormOptions({c})), nn::Linear(c, c),
                                                   nn::GELU(), nn::Linear(c, c)));
    // Stage inputs: stride 8 and stride 4 concatenate the tokenizer skips.
    const std::vector<std::pair<int64_t, int64_t>> stages = {
        {c + c / 2, c / 2}, {c / 2 + c / 4, c / 4}, {c / 4, c / 8}, {c / 8, c / 8}};
    ups_ = nn::ModuleList();
    for (auto [in, out] : stages) ups_->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)));
    register_module("ups", ups_);
    out_ = register_module("out", nn::Conv2d(nn::Conv2dOptions(c / 8, 1, 1)));
}

torch::Tensor FusionDecoderImpl::forward(const BranchFeatures& f, const torch::Tensor& v) {
    const auto& fv = f.values;
    if (fv.dim() != 4 || v.dim() != 4 || fv.size(0) != v.size(0) || fv.size(1) != v.size(1) || fv.size(2) != v.size(2))
        throw ShapeError("fuse_and_decode: F and V must share [N, h, w]");
    if (v.size(3) != options_.v_channels) throw ShapeError("fuse_and_decode: unexpected V channel count");
    if (f.pyramid.size() != 2) throw ShapeError("fuse_and_decode: missing tokenizer skips");
    const int64_t n = fv.size(0), h = fv.size(1), w = fv.size(2);

    auto x = fuse_(torch::cat({fv, v.to(fv.dtype())}, 3)).reshape({n, h * w, options_.width});
    for (const auto& layer : *layers_) x = layer->as<TransformerLayer>()->forward(x);
    x = head_->forward(x).transpose(1, 2).reshape({n, options_.width, h, w});

    for (std::size_t s = 0; s < ups_->size(); ++s) {
        x = F::interpolate(x, F::InterpolateFuncOptions()
                                  .scale_factor(std::vector<double>{2.0, 2.0})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
        if (s == 0) x = torch::cat({x, f.pyramid[1]}, 1);
        if (s == 1) x = torch::cat({x, f.pyramid[0]}, 1);
        x = torch::relu(ups_[s]->as<nn::Conv2d>()->forward(x));
    }
    return torch::sigmoid(out_(x)).squeeze(1);
}

torch::Tensor bce_loss(const torch::Tensor& pred, const torch::Tensor& target, double eps) {
    if (pred.sizes() != target.sizes()) throw ShapeError("bce_loss: pred and target shapes differ");
    if (pred.dim() < 1) throw ShapeError("bce_loss: expected a batch of maps");
    auto p = pred.clamp(eps, 1.0 - eps);
    auto t = target.to(pred.dtype());
    auto per_pixel = -(t * torch::log(p) + (1.0 - t) * torch::log1p(-p));
    return per_pixel.reshape({pred.size(0), -1}).mean(1).mean();
}

} // namespace cogsem::cosodtb
