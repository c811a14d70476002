#pragma once

// Portable seeded randomness. std::mt19937_64 output is fully specified by
// the standard; the distribution adaptors are not, so the transforms used
// for weights and sampling live here.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace steerkit {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Uniform in (0, 1], safe for logarithms.
    double uniform_open();
    /// Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound);
    /// Standard normal (Box-Muller).
    double normal();
    /// Student-t with `dof` degrees of freedom.
    double student_t(double dof);

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[below(i)]);
        }
    }

    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Derive an independent stream seed from a base seed and a tag (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

/// k distinct indices in [0, weights.size()) drawn without replacement with
/// probability proportional to weight (Efraimidis-Spirakis keys). Returned in
/// draw order. Zero-weight items are only drawn once positive weights run out.
std::vector<std::size_t> weighted_sample_without_replacement(std::span<const double> weights, std::size_t k,
                                                             Rng& rng);

}  // namespace steerkit
