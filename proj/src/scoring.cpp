#include "steerkit/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "steerkit/errors.hpp"
#include "steerkit/rng.hpp"

namespace steerkit {

double concept_probability(std::span<const double> dist, std::span<const TokenId> tokens) {
    if (tokens.empty()) {
        throw ValidationError("concept_probability: empty token set");
    }
    double total = 0.0;
    for (double p : dist) {
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) {
        throw ValidationError("concept_probability: distribution sums to " + std::to_string(total));
    }
    double mass = 0.0;
    for (TokenId t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= dist.size()) {
            throw ValidationError("concept_probability: token id " + std::to_string(t) + " out of range");
        }
        mass += dist[static_cast<std::size_t>(t)];
    }
    return std::clamp(mass, 0.0, 1.0);
}

double disparity_score(std::span<const double> dist, const ConceptSpec& spec) {
    return concept_probability(dist, spec.tokens_a) - concept_probability(dist, spec.tokens_b);
}

PartitionedDataset partition(std::span<const PromptRecord> records, double delta) {
    if (!(delta >= 0.0)) {
        throw ValidationError("partition: delta must be >= 0");
    }
    PartitionedDataset out;
    out.delta = delta;
    for (const auto& r : records) {
        if (r.disparity > delta) {
            out.ids_a.push_back(r.id);
        } else if (r.disparity < -delta) {
            out.ids_b.push_back(r.id);
        } else {
            out.ids_o.push_back(r.id);
        }
    }
    std::ranges::sort(out.ids_a);
    std::ranges::sort(out.ids_b);
    std::ranges::sort(out.ids_o);
    return out;
}

PartitionedDataset subsample_neutral(const PartitionedDataset& part, NeutralCapRule rule, std::uint64_t seed) {
    const std::size_t cap = rule.kind == NeutralCapRule::Kind::fixed ? rule.fixed_cap
                                                                     : std::min(part.ids_a.size(), part.ids_b.size());
    PartitionedDataset out = part;
    if (part.ids_o.size() <= cap) {
        return out;
    }
    Rng rng(seed);
    std::vector<PromptId> pool = part.ids_o;
    rng.shuffle(pool);
    pool.resize(cap);
    std::ranges::sort(pool);
    out.ids_o = std::move(pool);
    return out;
}

std::size_t disparity_bin(double disparity, std::size_t n_bins) {
    if (n_bins == 0) {
        throw ValidationError("disparity_bin: n_bins must be >= 1");
    }
    const double clamped = std::clamp(disparity, -1.0, 1.0);
    const auto bin = static_cast<std::size_t>(std::floor((clamped + 1.0) / 2.0 * static_cast<double>(n_bins)));
    return std::min(bin, n_bins - 1);
}

std::vector<PromptId> inverse_square_bin_sampling(std::span<const PromptRecord> records, std::size_t n_bins,
                                                  std::size_t n_samples, std::uint64_t seed) {
    if (n_bins == 0) {
        throw ValidationError("inverse_square_bin_sampling: n_bins must be >= 1");
    }
    if (n_samples > records.size()) {
        throw ValidationError("inverse_square_bin_sampling: requested " + std::to_string(n_samples) +
                              " samples from a population of " + std::to_string(records.size()));
    }
    std::vector<std::size_t> counts(n_bins, 0);
    for (const auto& r : records) {
        ++counts[disparity_bin(r.disparity, n_bins)];
    }
    std::vector<double> weights;
    weights.reserve(records.size());
    for (const auto& r : records) {
        const double n = static_cast<double>(counts[disparity_bin(r.disparity, n_bins)]);
        weights.push_back(1.0 / (n * n));
    }
    Rng rng(seed);
    const auto picked = weighted_sample_without_replacement(weights, n_samples, rng);
    std::vector<PromptId> out;
    out.reserve(picked.size());
    for (std::size_t i : picked) {
        out.push_back(records[i].id);
    }
    return out;
}

}  // namespace steerkit
