#include "steerkit/extraction.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "steerkit/errors.hpp"
#include "steerkit/parallel.hpp"
#include "steerkit/simd/kernels.hpp"

namespace steerkit {
namespace {

std::vector<double> mean_activation(const Trace& trace, std::span<const PromptId> ids, std::size_t layer) {
    std::vector<PromptId> sorted(ids.begin(), ids.end());
    std::ranges::sort(sorted);
    std::vector<double> acc(trace.d_model(), 0.0);
    for (PromptId id : sorted) {
        simd::axpy(1.0, trace.activation(id, layer), acc);
    }
    simd::scale(1.0 / static_cast<double>(sorted.size()), acc);
    return acc;
}

std::vector<double> unit(std::vector<double> v, const char* side) {
    const double n = simd::norm(v);
    if (!(n > kDegeneracyEps)) {
        throw DegenerateError(std::string("concept ") + side + " vector has zero norm");
    }
    simd::scale(1.0 / n, v);
    return v;
}

std::vector<double> scores_of(const Trace& trace, std::span<const PromptId> ids) {
    std::vector<double> out;
    out.reserve(ids.size());
    for (PromptId id : ids) {
        out.push_back(trace.record(id).disparity);
    }
    return out;
}

}  // namespace

std::vector<double> neutral_mean(const Trace& trace, const PartitionedDataset& part, std::size_t layer) {
    if (part.ids_o.empty()) {
        throw DegenerateError("neutral partition empty; lower delta or supply neutral prompts");
    }
    return mean_activation(trace, part.ids_o, layer);
}

std::vector<double> weighted_concept_vector(const Trace& trace, std::span<const PromptId> ids,
                                            std::span<const double> scores, std::span<const double> neutral,
                                            std::size_t layer, double eps) {
    if (ids.empty()) {
        throw DegenerateError("weighted_concept_vector: empty prompt set");
    }
    if (ids.size() != scores.size()) {
        throw ValidationError("weighted_concept_vector: ids and scores differ in length");
    }
    if (neutral.size() != trace.d_model()) {
        throw ValidationError("weighted_concept_vector: neutral mean has wrong dimension");
    }
    const bool positive = scores[0] > 0.0;
    for (double s : scores) {
        if (!(positive ? s > 0.0 : s < 0.0)) {
            throw ValidationError("weighted_concept_vector: scores must all share one nonzero sign");
        }
    }

    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), 0);
    std::ranges::sort(order, [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });

    std::vector<double> acc(trace.d_model(), 0.0);
    double total = 0.0;
    for (std::size_t i : order) {
        simd::axpy(scores[i], trace.activation(ids[i], layer), acc);
        total += scores[i];
    }
    if (!(std::abs(total) > eps)) {
        throw DegenerateError("weighted_concept_vector: degenerate weights (|sum s| <= eps)");
    }
    simd::scale(1.0 / total, acc);
    simd::axpy(-1.0, neutral, acc);
    return acc;
}

CandidateVector wmd_candidate(const Trace& trace, const PartitionedDataset& part, std::size_t layer) {
    if (part.ids_a.empty() || part.ids_b.empty()) {
        throw DegenerateError(std::string("wmd: concept partition ") + (part.ids_a.empty() ? "A" : "B") + " is empty");
    }
    const auto neutral = neutral_mean(trace, part, layer);
    const auto v_a = unit(weighted_concept_vector(trace, part.ids_a, scores_of(trace, part.ids_a), neutral, layer), "A");
    const auto v_b = unit(weighted_concept_vector(trace, part.ids_b, scores_of(trace, part.ids_b), neutral, layer), "B");

    CandidateVector c;
    c.method = Method::wmd;
    c.layer = layer;
    c.direction = v_a;
    simd::axpy(-1.0, v_b, c.direction);
    c.neutral_mean_used = neutral;
    c.degenerate = !(simd::norm(c.direction) > kDegeneracyEps);
    return c;
}

CandidateVector md_candidate(const Trace& trace, const PartitionedDataset& part, std::size_t layer) {
    if (part.ids_a.empty() || part.ids_b.empty()) {
        throw DegenerateError(std::string("md: concept partition ") + (part.ids_a.empty() ? "A" : "B") + " is empty");
    }
    CandidateVector c;
    c.method = Method::md;
    c.layer = layer;
    c.direction = mean_activation(trace, part.ids_a, layer);
    simd::axpy(-1.0, mean_activation(trace, part.ids_b, layer), c.direction);
    c.degenerate = !(simd::norm(c.direction) > kDegeneracyEps);
    return c;
}

std::vector<CandidateVector> extract_all_layers(const Trace& trace, const PartitionedDataset& part, Method method) {
    std::vector<CandidateVector> out(trace.n_layers());
    parallel_for(trace.n_layers(), [&](std::size_t layer) {
        out[layer] = method == Method::wmd ? wmd_candidate(trace, part, layer) : md_candidate(trace, part, layer);
    });
    return out;
}

}  // namespace steerkit
