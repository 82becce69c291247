#pragma once

// Group selective exchange-masking: difficulty scoring with Brownian distance
// covariance plus a binary overlap measure, and the swap of the hardest
// images between two groups with their labels replaced by empty masks.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "cogsem/datamodel.hpp"

namespace cogsem::gsem {

enum class FeatureSource { backbone, binary_reduced };

/// [N, h, w, c] token map of one group.
struct FeatureSequence {
    torch::Tensor values;
    FeatureSource source = FeatureSource::backbone;

    int64_t size() const { return values.size(0); }
};

/// [1, h, w, c].
struct GroupConsensusFeature {
    torch::Tensor values;
};

/// Dense row-major matrix of doubles.
struct Matrix {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int64_t r, int64_t c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<std::size_t>(r * c), fill) {}

    double& operator()(int64_t r, int64_t c) { return data[static_cast<std::size_t>(r * cols + c)]; }
    double operator()(int64_t r, int64_t c) const { return data[static_cast<std::size_t>(r * cols + c)]; }
};

/// Double-centred distance matrix and its packed upper triangle. Packing
/// keeps the diagonal as is and scales off-diagonal entries by sqrt(2), so
/// dot(a.vectorized, b.vectorized) == trace(a.centered^T b.centered).
struct BdcMatrix {
    Matrix centered;
    std::vector<double> vectorized;
};

/// `observations` holds c rows, each one observation of dimension p.
BdcMatrix bdc_matrix(const Matrix& observations);

double bdc_trace_form(const BdcMatrix& a, const BdcMatrix& b);
double bdc_inner_form(const BdcMatrix& a, const BdcMatrix& b);

/// Empirical Brownian distance covariance between two sets of c
/// observations (inner-product form). Rows must match; columns may differ.
double bdc(const Matrix& x, const Matrix& y);

/// Reshapes one [h, w, c] map into c observations of length h*w.
Matrix channels_of(const torch::Tensor& map);

GroupConsensusFeature group_consensus(const FeatureSequence& features);

std::vector<double> bdc_scores(const FeatureSequence& features, const GroupConsensusFeature& consensus);

/// Channel mean followed by per-image min-max to [0, 1] (constant maps
/// become zero). Output is [N, h, w, 1] tagged binary_reduced.
FeatureSequence reduce_channels(const FeatureSequence& features);
/// Average-pools [N, H, W] masks down to [N, h, w] coverage fractions.
torch::Tensor pool_masks(const torch::Tensor& masks, int64_t h, int64_t w);
/// Sum over pixels of reduced (x) pooled, per image.
std::vector<double> binary_measure(const torch::Tensor& reduced, const torch::Tensor& pooled);
std::vector<double> binary_scores(const FeatureSequence& features, const MaskGroup& masks);

/// Min-max to [0, 1]; a constant vector maps to all zeros.
std::vector<double> minmax_normalize(std::span<const double> values);

struct DifficultyReport {
    std::vector<double> bdc_scores;
    std::vector<double> bin_scores;
    std::vector<double> mixed;
    double mu = 0.5;
};

/// mixed = norm(bdc) + mu * norm(bin). With `normalize` off the raw scores
/// are summed instead.
DifficultyReport mixed_difficulty(std::vector<double> bdc_scores, std::vector<double> bin_scores, double mu,
                                  bool normalize = true);

/// Full scoring path for one group.
DifficultyReport score_group(const FeatureSequence& features, const MaskGroup& masks, double mu,
                             bool normalize = true);

enum class HardnessOrder { low, high };

HardnessOrder parse_hardness_order(const std::string& name);
std::string to_string(HardnessOrder order);

/// Indices of the k hardest entries, hardest first. Ties go to the lower index.
std::vector<int64_t> select_hardest(std::span<const double> mixed, int64_t k, HardnessOrder order);

struct ExchangeResult {
    LabeledGroup group1;
    LabeledGroup group2;
    /// (id leaving group1, id leaving group2), hardest first.
    std::vector<std::pair<std::string, std::string>> exchanged_ids;
    /// Slots in each output group now holding a foreign, zero-masked image.
    std::vector<int64_t> noise_slots1;
    std::vector<int64_t> noise_slots2;
};

/// Swaps the k hardest images of each group into the other group's vacated
/// slots and blanks their masks. Requires 1 <= k and 2k < N, distinct
/// categories, and equal group sizes.
ExchangeResult select_exchange_mask(const LabeledGroup& g1, const LabeledGroup& g2, const DifficultyReport& r1,
                                    const DifficultyReport& r2, int64_t k,
                                    HardnessOrder order = HardnessOrder::low);

} // namespace cogsem::gsem
