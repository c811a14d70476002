#pragma once

// Per-layer candidate steering vectors: the weighted mean difference (WMD)
// and the plain difference-in-means (MD) baseline.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "steerkit/scoring.hpp"
#include "steerkit/traces.hpp"
#include "steerkit/types.hpp"

namespace steerkit {

inline constexpr double kDegeneracyEps = 1e-9;

struct CandidateVector {
    Method method = Method::wmd;
    std::size_t layer = 0;
    /// Unnormalized, as computed. For WMD, unit(v_A) - unit(v_B).
    std::vector<double> direction;
    std::optional<std::vector<double>> neutral_mean_used;
    /// Direction norm <= kDegeneracyEps (e.g. v_A parallel to v_B).
    bool degenerate = false;
};

/// Mean layer activation over D_o. Throws DegenerateError when D_o is empty.
std::vector<double> neutral_mean(const Trace& trace, const PartitionedDataset& part, std::size_t layer);

/// sum_x s_x (h_x - neutral) / sum_x s_x over `ids` (scores parallel to ids).
/// All scores must share one sign; |sum s_x| must exceed eps.
std::vector<double> weighted_concept_vector(const Trace& trace, std::span<const PromptId> ids,
                                            std::span<const double> scores, std::span<const double> neutral,
                                            std::size_t layer, double eps = kDegeneracyEps);

CandidateVector wmd_candidate(const Trace& trace, const PartitionedDataset& part, std::size_t layer);
CandidateVector md_candidate(const Trace& trace, const PartitionedDataset& part, std::size_t layer);

/// One candidate per layer, in layer order.
std::vector<CandidateVector> extract_all_layers(const Trace& trace, const PartitionedDataset& part, Method method);

}  // namespace steerkit
