#include "cogsem/lvgb.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include "cogsem/errors.hpp"

namespace cogsem::lvgb {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

void VqVaeOptions::validate() const {
    if (codebook_size < 2) throw ContractError("codebook_size must be at least 2");
    if (code_dim < 1 || hidden < 2 || res_blocks < 0 || downsample_stages < 1)
        throw ContractError("invalid VQ-VAE dimensions");
    if (commitment < 0.0) throw ContractError("commitment weight must be non-negative");
}

torch::Tensor nearest_codes(const torch::Tensor& ze, const Codebook& codebook) {
    if (!codebook.embeddings.defined() || codebook.embeddings.dim() != 2 || codebook.size() == 0)
        throw ContractError("quantize: empty codebook");
    if (ze.dim() < 1 || ze.size(-1) != codebook.dim())
        throw ShapeError("quantize: last dimension of ze must equal the code dimension");

    const int64_t k = codebook.size();
    const int64_t d = codebook.dim();
    auto flat = ze.detach().to(torch::kCPU, torch::kFloat64).reshape({-1, d}).contiguous();
    auto book = codebook.embeddings.detach().to(torch::kCPU, torch::kFloat64).contiguous();
    const int64_t m = flat.size(0);
    auto out = torch::empty({m}, torch::kLong);
    const double* z = flat.data_ptr<double>();
    const double* e = book.data_ptr<double>();
    int64_t* idx = out.data_ptr<int64_t>();
    for (int64_t i = 0; i < m; ++i) {
        int64_t best = 0;
        double best_dist = 0.0;
        for (int64_t j = 0; j < k; ++j) {
            double dist = 0.0;
            for (int64_t c = 0; c < d; ++c) {
                const double diff = z[i * d + c] - e[j * d + c];
                dist += diff * diff;
            }
            if (j == 0 || dist < best_dist) {
                best = j;
                best_dist = dist;
            }
        }
        idx[i] = best;
    }
    auto sizes = ze.sizes().vec();
    sizes.pop_back();
    return out.view(sizes).to(ze.device());
}

LatentGrid quantize(const torch::Tensor& ze, const Codebook& codebook) {
    LatentGrid grid;
    grid.continuous = ze;
    grid.indices = nearest_codes(ze, codebook);
    grid.quantized = codebook.embeddings.index_select(0, grid.indices.reshape({-1})).view(ze.sizes());
    return grid;
}

torch::Tensor straight_through(const LatentGrid& grid) {
    return grid.continuous + (grid.quantized - grid.continuous).detach();
}

// ---------------------------------------------------------------------------

ResidualBlockImpl::ResidualBlockImpl(int64_t channels) {
    conv3_ = register_module("conv3", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
    conv1_ = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(channels, channels, 1)));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
    return x + conv1_(torch::relu(conv3_(torch::relu(x))));
}

namespace {

int64_t stage_channels(int64_t hidden, int64_t stages, int64_t s) {
    return std::max<int64_t>(1, hidden >> (stages - 1 - s));
}

} // namespace

VqEncoderImpl::VqEncoderImpl(const VqVaeOptions& o) {
    o.validate();
    body_ = nn::Sequential();
    int64_t in = 3;
    for (int64_t s = 0; s < o.downsample_stages; ++s) {
        const int64_t out = stage_channels(o.hidden, o.downsample_stages, s);
        body_->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(2).padding(1)));
        body_->push_back(nn::ReLU());
        in = out;
    }
    body_->push_back(nn::Conv2d(nn::Conv2dOptions(in, o.hidden, 3).padding(1)));
    for (int64_t r = 0; r < o.res_blocks; ++r) body_->push_back(ResidualBlock(o.hidden));
    body_->push_back(nn::ReLU());
    body_->push_back(nn::Conv2d(nn::Conv2dOptions(o.hidden, o.code_dim, 1)));
    register_module("body", body_);
}

torch::Tensor VqEncoderImpl::forward(const torch::Tensor& images) {
    if (images.dim() != 4 || images.size(3) != 3) throw ShapeError("vq_encode expects [N, H, W, 3]");
    return body_->forward(images.permute({0, 3, 1, 2})).permute({0, 2, 3, 1});
}

VqDecoderImpl::VqDecoderImpl(const VqVaeOptions& o) {
    o.validate();
    stem_ = nn::Sequential();
    stem_->push_back(nn::Conv2d(nn::Conv2dOptions(o.code_dim, o.hidden, 3).padding(1)));
    for (int64_t r = 0; r < o.res_blocks; ++r) stem_->push_back(ResidualBlock(o.hidden));
    stem_->push_back(nn::ReLU());
    register_module("stem", stem_);

    ups_ = nn::ModuleList();
    int64_t in = o.hidden;
    tap_channels_ = o.hidden;
    for (int64_t s = 0; s < o.downsample_stages; ++s) {
        const bool last = s + 1 == o.downsample_stages;
        const int64_t out = last ? 3 : std::max<int64_t>(1, in / 2);
        ups_->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1)));
        if (s == 0 && !last) tap_channels_ = out;
        in = out;
    }
    register_module("ups", ups_);
}

DecoderOutput VqDecoderImpl::forward(const torch::Tensor& zq) {
    if (zq.dim() != 4) throw ShapeError("vq_decode expects [N, hz, wz, D]");
    auto x = stem_->forward(zq.permute({0, 3, 1, 2}));
    DecoderOutput out;
    out.tap = x;
    const auto n = ups_->size();
    for (std::size_t s = 0; s < n; ++s) {
        x = ups_[s]->as<nn::ConvTranspose2d>()->forward(x);
        if (s + 1 < n) {
            x = torch::relu(x);
            if (s == 0) out.tap = x;
        }
    }
    out.reconstruction = torch::sigmoid(x).permute({0, 2, 3, 1});
    return out;
}

VqVaeImpl::VqVaeImpl(const VqVaeOptions& o) : options_(o) {
    o.validate();
    encoder = register_module("encoder", VqEncoder(o));
    decoder = register_module("decoder", VqDecoder(o));
    const double bound = 1.0 / static_cast<double>(o.codebook_size);
    embeddings = register_parameter("embeddings", torch::empty({o.codebook_size, o.code_dim}).uniform_(-bound, bound));
}

UncertaintyHeadImpl::UncertaintyHeadImpl(int64_t tap_channels, int64_t v_channels) {
    if (v_channels < 1) throw ContractError("v_channels must be positive");
    proj_ = register_module("proj", nn::Conv2d(nn::Conv2dOptions(tap_channels, v_channels, 1)));
}

torch::Tensor UncertaintyHeadImpl::forward(const torch::Tensor& tap, int64_t h, int64_t w) {
    auto v = F::adaptive_avg_pool2d(proj_(tap), F::AdaptiveAvgPool2dFuncOptions({h, w}));
    return v.permute({0, 2, 3, 1});
}

torch::Tensor vq_encode(VqVae& model, const torch::Tensor& images) { return model->encoder(images); }

VqDecodeResult vq_decode(VqVae& model, UncertaintyHead& head, const torch::Tensor& zq, int64_t grid_h, int64_t grid_w) {
    auto out = model->decoder(zq);
    return {out.reconstruction, {head(out.tap, grid_h, grid_w)}};
}

VqLoss vqvae_loss(const torch::Tensor& x, const torch::Tensor& x_rec, const torch::Tensor& ze, const torch::Tensor& zq,
                  double lambda0) {
    if (lambda0 < 0.0) throw ContractError("vqvae_loss: lambda0 must be non-negative");
    if (x.sizes() != x_rec.sizes() || ze.sizes() != zq.sizes()) throw ShapeError("vqvae_loss: shape mismatch");
    VqLoss loss;
    loss.reconstruction = F::mse_loss(x_rec, x);
    loss.codebook = F::mse_loss(zq, ze.detach());
    loss.commitment = F::mse_loss(ze, zq.detach());
    loss.total = loss.reconstruction + loss.codebook + lambda0 * loss.commitment;
    return loss;
}

// ---------------------------------------------------------------------------

void PriorOptions::validate() const {
    if (codebook_size < 2) throw ContractError("prior codebook_size must be at least 2");
    if (width < 1 || layers < 1) throw ContractError("prior width and layers must be positive");
    if (kernel < 3 || kernel % 2 == 0) throw ContractError("prior kernel must be odd and >= 3");
    if (attention_layers < 0 || (attention_layers > 0 && width % heads != 0))
        throw ContractError("prior attention heads must divide the width");
}

namespace {

torch::Tensor gate(const torch::Tensor& x) {
    auto parts = x.chunk(2, 1);
    return torch::tanh(parts[0]) * torch::sigmoid(parts[1]);
}

} // namespace

GatedMaskedConvImpl::GatedMaskedConvImpl(int64_t width, int64_t kernel, bool mask_a, bool residual)
    : residual_(residual) {
    const int64_t half = kernel / 2;
    vert_ = register_module("vert", nn::Conv2d(nn::Conv2dOptions(width, 2 * width, {half + 1, kernel})));
    horiz_ = register_module("horiz", nn::Conv2d(nn::Conv2dOptions(width, 2 * width, {1, half + 1})));
    v2h_ = register_module("v2h", nn::Conv2d(nn::Conv2dOptions(2 * width, 2 * width, 1)));
    hres_ = register_module("hres", nn::Conv2d(nn::Conv2dOptions(width, width, 1)));
    auto vmask = torch::ones({2 * width, width, half + 1, kernel});
    auto hmask = torch::ones({2 * width, width, 1, half + 1});
    if (mask_a) {
        vmask.select(2, half).zero_();
        hmask.select(3, half).zero_();
    }
    vmask_ = register_buffer("vmask", vmask);
    hmask_ = register_buffer("hmask", hmask);
}

std::pair<torch::Tensor, torch::Tensor> GatedMaskedConvImpl::forward(const torch::Tensor& xv, const torch::Tensor& xh) {
    const int64_t h = xv.size(2);
    const int64_t w = xv.size(3);
    const int64_t half = vmask_.size(2) - 1;
    // Padding above/left and cropping keeps every output row (column)
    // looking only at rows (columns) at or before it.
    auto hv = torch::conv2d(xv, vert_->weight * vmask_, vert_->bias, torch::IntArrayRef{1, 1}, torch::IntArrayRef{half, half}).slice(2, 0, h);
    auto out_v = gate(hv);
    auto hh = torch::conv2d(xh, horiz_->weight * hmask_, horiz_->bias, torch::IntArrayRef{1, 1}, torch::IntArrayRef{0, half}).slice(3, 0, w);
    auto out = gate(v2h_(hv) + hh);
    auto out_h = hres_(out);
    if (residual_) out_h = out_h + xh;
    return std::make_pair(out_v, out_h);
}

CausalAttentionImpl::CausalAttentionImpl(int64_t width, int64_t heads) {
    norm_ = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({width})));
    attn_ = register_module("attn", nn::MultiheadAttention(nn::MultiheadAttentionOptions(width, heads)));
}

torch::Tensor CausalAttentionImpl::forward(const torch::Tensor& x) {
    const int64_t n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    auto seq = x.flatten(2).permute({2, 0, 1}); // [L, N, C]
    const int64_t len = h * w;
    auto mask = torch::full({len, len}, -std::numeric_limits<double>::infinity(), x.options()).triu(1);
    auto q = norm_(seq);
    auto attended = std::get<0>(attn_->forward(q, q, q, {}, false, mask));
    return (seq + attended).permute({1, 2, 0}).reshape({n, c, h, w});
}

PixelPriorImpl::PixelPriorImpl(const PriorOptions& o) : options_(o) {
    o.validate();
    embed_ = register_module("embed", nn::Embedding(o.codebook_size, o.width));
    gated_ = nn::ModuleList();
    for (int64_t l = 0; l < o.layers; ++l) gated_->push_back(GatedMaskedConv(o.width, o.kernel, l == 0, l != 0));
    register_module("gated", gated_);
    attention_ = nn::ModuleList();
    for (int64_t l = 0; l < o.attention_layers; ++l) attention_->push_back(CausalAttention(o.width, o.heads));
    register_module("attention", attention_);
    head_ = register_module("head", nn::Sequential(nn::ReLU(), nn::Conv2d(nn::Conv2dOptions(o.width, o.width, 1)),
                                                   nn::ReLU(), nn::Conv2d(nn::Conv2dOptions(o.width, o.codebook_size, 1))));
}

torch::Tensor PixelPriorImpl::forward(const torch::Tensor& indices) {
    if (indices.dim() != 3) throw ShapeError("prior expects an index grid [N, hz, wz]");
    if (indices.numel() > 0 &&
        (indices.min().item<int64_t>() < 0 || indices.max().item<int64_t>() >= options_.codebook_size))
        throw ContractError("prior: code index out of range");
    auto x = embed_(indices).permute({0, 3, 1, 2});
    auto xv = x, xh = x;
    for (const auto& layer : *gated_) std::tie(xv, xh) = layer->as<GatedMaskedConv>()->forward(xv, xh);
    for (const auto& layer : *attention_) xh = layer->as<CausalAttention>()->forward(xh);
    return head_->forward(xh);
}

torch::Tensor prior_nll(PixelPrior& prior, const torch::Tensor& indices) {
    return F::cross_entropy(prior(indices), indices);
}

torch::Tensor prior_sample(const LogitsFn& logits_fn, int64_t count, int64_t hz, int64_t wz, double temperature,
                           at::Generator generator) {
    if (!(temperature > 0.0)) throw ContractError("prior_sample: temperature must be positive");
    torch::NoGradGuard no_grad;
    auto grid = torch::zeros({count, hz, wz}, torch::kLong);
    for (int64_t i = 0; i < hz; ++i) {
        for (int64_t j = 0; j < wz; ++j) {
            auto logits = logits_fn(grid).select(2, i).select(2, j).to(torch::kFloat64) / temperature;
            auto probs = torch::softmax(logits, 1);
            auto pick = torch::multinomial(probs, 1, false, generator).squeeze(1);
            grid.select(1, i).select(1, j).copy_(pick);
        }
    }
    return grid;
}

torch::Tensor prior_sample(PixelPrior& prior, int64_t count, int64_t hz, int64_t wz, double temperature,
                           at::Generator generator) {
    return prior_sample([&](const torch::Tensor& g) { return prior(g); }, count, hz, wz, temperature,
                        std::move(generator));
}

torch::Tensor prior_resample(PixelPrior& prior, const torch::Tensor& indices, double temperature,
                             at::Generator generator) {
    if (!(temperature > 0.0)) throw ContractError("prior_resample: temperature must be positive");
    torch::NoGradGuard no_grad;
    auto logits = prior(indices).permute({0, 2, 3, 1});
    const int64_t k = logits.size(3);
    auto probs = torch::softmax(logits.reshape({-1, k}).to(torch::kFloat64) / temperature, 1);
    return torch::multinomial(probs, 1, false, generator).view(indices.sizes());
}

at::Generator make_generator(uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

} // namespace cogsem::lvgb
