#include "cogsem/gsem.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cogsem/errors.hpp"

namespace cogsem::gsem {

BdcMatrix bdc_matrix(const Matrix& observations) {
    const int64_t c = observations.rows;
    const int64_t p = observations.cols;
    if (c < 2) throw ContractError("bdc_matrix needs at least 2 observations");
    for (double v : observations.data)
        if (!std::isfinite(v)) throw NumericError("bdc_matrix: non-finite observation");

    Matrix dist(c, c);
    for (int64_t k = 0; k < c; ++k) {
        for (int64_t l = k + 1; l < c; ++l) {
            double acc = 0.0;
            for (int64_t j = 0; j < p; ++j) {
                const double d = observations(k, j) - observations(l, j);
                acc += d * d;
            }
            dist(k, l) = dist(l, k) = std::sqrt(acc);
        }
    }

    std::vector<double> row_mean(static_cast<std::size_t>(c), 0.0);
    double grand = 0.0;
    for (int64_t k = 0; k < c; ++k) {
        for (int64_t l = 0; l < c; ++l) row_mean[static_cast<std::size_t>(k)] += dist(k, l);
        grand += row_mean[static_cast<std::size_t>(k)];
        row_mean[static_cast<std::size_t>(k)] /= static_cast<double>(c);
    }
    grand /= static_cast<double>(c * c);

    // dist is symmetric, so column means equal row means.
    BdcMatrix out;
    out.centered = Matrix(c, c);
    for (int64_t k = 0; k < c; ++k)
        for (int64_t l = 0; l < c; ++l)
            out.centered(k, l) =
                dist(k, l) - row_mean[static_cast<std::size_t>(k)] - row_mean[static_cast<std::size_t>(l)] + grand;

    out.vectorized.reserve(static_cast<std::size_t>(c * (c + 1) / 2));
    for (int64_t k = 0; k < c; ++k)
        for (int64_t l = k; l < c; ++l)
            out.vectorized.push_back(k == l ? out.centered(k, l) : std::sqrt(2.0) * out.centered(k, l));
    return out;
}

double bdc_trace_form(const BdcMatrix& a, const BdcMatrix& b) {
    if (a.centered.rows != b.centered.rows) throw ShapeError("bdc: observation counts differ");
    const int64_t c = a.centered.rows;
    double tr = 0.0;
    for (int64_t i = 0; i < c; ++i)
        for (int64_t j = 0; j < c; ++j) tr += a.centered(j, i) * b.centered(j, i);
    return tr;
}

double bdc_inner_form(const BdcMatrix& a, const BdcMatrix& b) {
    if (a.vectorized.size() != b.vectorized.size()) throw ShapeError("bdc: observation counts differ");
    return std::inner_product(a.vectorized.begin(), a.vectorized.end(), b.vectorized.begin(), 0.0);
}

double bdc(const Matrix& x, const Matrix& y) {
    if (x.rows != y.rows) throw ShapeError("bdc: observation counts differ");
    return bdc_inner_form(bdc_matrix(x), bdc_matrix(y));
}

Matrix channels_of(const torch::Tensor& map) {
    if (map.dim() != 3) throw ShapeError("channels_of expects [h, w, c]");
    auto t = map.detach().to(torch::kFloat64).reshape({-1, map.size(2)}).t().contiguous();
    Matrix m(t.size(0), t.size(1));
    std::copy_n(t.data_ptr<double>(), t.numel(), m.data.begin());
    return m;
}

GroupConsensusFeature group_consensus(const FeatureSequence& features) {
    const auto& v = features.values;
    if (!v.defined() || v.dim() != 4 || v.size(0) < 1) throw ShapeError("group_consensus expects [N, h, w, c], N >= 1");
    return {v.detach().mean(0, /*keepdim=*/true)};
}

std::vector<double> bdc_scores(const FeatureSequence& features, const GroupConsensusFeature& consensus) {
    const auto& v = features.values;
    const auto& g = consensus.values;
    if (v.dim() != 4 || g.dim() != 4 || g.size(0) != 1 || v.sizes().slice(1) != g.sizes().slice(1))
        throw ShapeError("bdc_scores: features and consensus disagree in shape");
    const BdcMatrix gm = bdc_matrix(channels_of(g[0]));
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(v.size(0)));
    for (int64_t n = 0; n < v.size(0); ++n) out.push_back(bdc_inner_form(gm, bdc_matrix(channels_of(v[n]))));
    return out;
}

FeatureSequence reduce_channels(const FeatureSequence& features) {
    const auto& v = features.values;
    if (v.dim() != 4) throw ShapeError("reduce_channels expects [N, h, w, c]");
    auto r = v.detach().to(torch::kFloat64).mean(3);
    auto flat = r.reshape({r.size(0), -1});
    auto lo = std::get<0>(flat.min(1, true));
    auto hi = std::get<0>(flat.max(1, true));
    auto span = hi - lo;
    auto norm = torch::where(span > 0, (flat - lo) / torch::where(span > 0, span, torch::ones_like(span)),
                             torch::zeros_like(flat));
    return {norm.reshape(r.sizes()).unsqueeze(3), FeatureSource::binary_reduced};
}

torch::Tensor pool_masks(const torch::Tensor& masks, int64_t h, int64_t w) {
    if (masks.dim() != 3) throw ShapeError("pool_masks expects [N, H, W]");
    auto m = masks.detach().to(torch::kFloat64).unsqueeze(1);
    return torch::adaptive_avg_pool2d(m, {h, w}).squeeze(1);
}

std::vector<double> binary_measure(const torch::Tensor& reduced, const torch::Tensor& pooled) {
    auto r = reduced.dim() == 4 ? reduced.squeeze(3) : reduced;
    if (r.sizes() != pooled.sizes()) throw ShapeError("binary_measure: feature and mask shapes differ");
    auto s = (r.to(torch::kFloat64) * pooled.to(torch::kFloat64)).reshape({r.size(0), -1}).sum(1).contiguous();
    return {s.data_ptr<double>(), s.data_ptr<double>() + s.numel()};
}

std::vector<double> binary_scores(const FeatureSequence& features, const MaskGroup& masks) {
    const auto& v = features.values;
    if (v.dim() != 4 || masks.masks.dim() != 3 || masks.masks.size(0) != v.size(0))
        throw ShapeError("binary_scores: features and masks are not aligned");
    auto reduced = reduce_channels(features);
    return binary_measure(reduced.values, pool_masks(masks.masks, v.size(1), v.size(2)));
}

std::vector<double> minmax_normalize(std::span<const double> values) {
    std::vector<double> out(values.size(), 0.0);
    if (values.empty()) return out;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double span = *hi - *lo;
    if (!(span > 0.0)) return out;
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / span;
    return out;
}

DifficultyReport mixed_difficulty(std::vector<double> bdc_scores, std::vector<double> bin_scores, double mu,
                                  bool normalize) {
    if (bdc_scores.empty()) throw ContractError("mixed_difficulty: empty score vectors");
    if (bdc_scores.size() != bin_scores.size()) throw ShapeError("mixed_difficulty: score lengths differ");
    DifficultyReport report;
    report.mu = mu;
    std::vector<double> a = normalize ? minmax_normalize(bdc_scores) : bdc_scores;
    std::vector<double> b = normalize ? minmax_normalize(bin_scores) : bin_scores;
    report.mixed.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        report.mixed[i] = a[i] + mu * b[i];
        if (!std::isfinite(report.mixed[i])) throw NumericError("mixed_difficulty: non-finite score");
    }
    report.bdc_scores = std::move(bdc_scores);
    report.bin_scores = std::move(bin_scores);
    return report;
}

DifficultyReport score_group(const FeatureSequence& features, const MaskGroup& masks, double mu, bool normalize) {
    auto consensus = group_consensus(features);
    return mixed_difficulty(bdc_scores(features, consensus), binary_scores(features, masks), mu, normalize);
}

HardnessOrder parse_hardness_order(const std::string& name) {
    if (name == "low") return HardnessOrder::low;
    if (name == "high") return HardnessOrder::high;
    throw ConfigError("hardness_order must be 'low' or 'high', got '" + name + "'");
}

std::string to_string(HardnessOrder order) { return order == HardnessOrder::low ? "low" : "high"; }

std::vector<int64_t> select_hardest(std::span<const double> mixed, int64_t k, HardnessOrder order) {
    if (k < 0 || k > static_cast<int64_t>(mixed.size())) throw ContractError("select_hardest: k out of range");
    std::vector<int64_t> idx(mixed.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto by_score = [&](int64_t a, int64_t b) {
        const double sa = mixed[static_cast<std::size_t>(a)];
        const double sb = mixed[static_cast<std::size_t>(b)];
        return order == HardnessOrder::low ? sa < sb : sa > sb;
    };
    std::stable_sort(idx.begin(), idx.end(), by_score);
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

ExchangeResult select_exchange_mask(const LabeledGroup& g1, const LabeledGroup& g2, const DifficultyReport& r1,
                                    const DifficultyReport& r2, int64_t k, HardnessOrder order) {
    const int64_t n = g1.images.size();
    if (g1.images.category == g2.images.category)
        throw ContractError("select_exchange_mask: both groups have category '" + g1.images.category + "'");
    if (g2.images.size() != n) throw ContractError("select_exchange_mask: group sizes differ");
    if (k < 1 || 2 * k >= n)
        throw ContractError("select_exchange_mask: need 1 <= k < N/2 (k=" + std::to_string(k) +
                            ", N=" + std::to_string(n) + ")");
    if (static_cast<int64_t>(r1.mixed.size()) != n || static_cast<int64_t>(r2.mixed.size()) != n)
        throw ShapeError("select_exchange_mask: difficulty reports do not match group size");
    if (g1.images.images.sizes() != g2.images.images.sizes())
        throw ShapeError("select_exchange_mask: image shapes differ");

    const auto pick1 = select_hardest(r1.mixed, k, order);
    const auto pick2 = select_hardest(r2.mixed, k, order);

    ExchangeResult out;
    out.group1 = {{g1.images.images.clone(), g1.images.category, g1.images.ids},
                  {g1.masks.masks.clone(), g1.masks.ids}};
    out.group2 = {{g2.images.images.clone(), g2.images.category, g2.images.ids},
                  {g2.masks.masks.clone(), g2.masks.ids}};
    for (int64_t i = 0; i < k; ++i) {
        const int64_t s1 = pick1[static_cast<std::size_t>(i)];
        const int64_t s2 = pick2[static_cast<std::size_t>(i)];
        out.group1.images.images[s1].copy_(g2.images.images[s2]);
        out.group2.images.images[s2].copy_(g1.images.images[s1]);
        out.group1.masks.masks[s1].zero_();
        out.group2.masks.masks[s2].zero_();
        const auto& id1 = g1.images.ids[static_cast<std::size_t>(s1)];
        const auto& id2 = g2.images.ids[static_cast<std::size_t>(s2)];
        out.group1.images.ids[static_cast<std::size_t>(s1)] = id2;
        out.group1.masks.ids[static_cast<std::size_t>(s1)] = id2;
        out.group2.images.ids[static_cast<std::size_t>(s2)] = id1;
        out.group2.masks.ids[static_cast<std::size_t>(s2)] = id1;
        out.exchanged_ids.emplace_back(id1, id2);
        out.noise_slots1.push_back(s1);
        out.noise_slots2.push_back(s2);
    }
    return out;
}

} // namespace cogsem::gsem
