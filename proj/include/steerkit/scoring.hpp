#pragma once

// Concept probabilities, disparity scores, threshold partitioning and the
// sampling utilities used to balance extraction sets.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "steerkit/types.hpp"

namespace steerkit {

inline constexpr double kDefaultDelta = 0.05;
inline constexpr std::size_t kDefaultBins = 20;

/// Sum of dist over the token set. dist must be a probability vector.
double concept_probability(std::span<const double> dist, std::span<const TokenId> tokens);

/// P(A) - P(B) for the next-token distribution.
double disparity_score(std::span<const double> dist, const ConceptSpec& spec);

/// Prompt ids split by disparity threshold: s > delta -> A, s < -delta -> B,
/// |s| <= delta -> neutral. Each id list is ascending.
struct PartitionedDataset {
    double delta = kDefaultDelta;
    std::vector<PromptId> ids_a;
    std::vector<PromptId> ids_b;
    std::vector<PromptId> ids_o;

    std::size_t size() const { return ids_a.size() + ids_b.size() + ids_o.size(); }
};

PartitionedDataset partition(std::span<const PromptRecord> records, double delta = kDefaultDelta);

/// Upper bound applied to the neutral set by subsample_neutral.
struct NeutralCapRule {
    enum class Kind { min_concept_size, fixed };
    Kind kind = Kind::min_concept_size;
    std::size_t fixed_cap = 0;
};

/// Uniformly subsample D_o (without replacement) down to the cap; no-op when
/// already within it.
PartitionedDataset subsample_neutral(const PartitionedDataset& part, NeutralCapRule rule, std::uint64_t seed);

/// Equal-width bin of a disparity score over [-1, 1]; s = 1 lands in the last bin.
std::size_t disparity_bin(double disparity, std::size_t n_bins);

/// Draw n_samples prompt ids without replacement, each weighted by
/// 1 / (count of its disparity bin)^2.
std::vector<PromptId> inverse_square_bin_sampling(std::span<const PromptRecord> records, std::size_t n_bins,
                                                  std::size_t n_samples, std::uint64_t seed);

}  // namespace steerkit
