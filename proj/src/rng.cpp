#include "steerkit/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <numbers>
#include <stdexcept>

namespace steerkit {

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform_open() {
    return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t bound) {
    if (bound == 0) {
        throw std::invalid_argument("Rng::below: bound must be positive");
    }
    // Rejection keeps the draw unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x = engine_();
    while (x >= limit) {
        x = engine_();
    }
    return x % bound;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

double Rng::student_t(double dof) {
    // t = Z / sqrt(chi2_k / k); chi2 built from normals, so dof is rounded up.
    const int k = static_cast<int>(std::ceil(dof));
    double chi2 = 0.0;
    for (int i = 0; i < k; ++i) {
        const double z = normal();
        chi2 += z * z;
    }
    return normal() / std::sqrt(chi2 / k);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::vector<std::size_t> weighted_sample_without_replacement(std::span<const double> weights, std::size_t k,
                                                             Rng& rng) {
    if (k > weights.size()) {
        throw std::invalid_argument("cannot draw " + std::to_string(k) + " items from a population of " +
                                    std::to_string(weights.size()));
    }
    struct Keyed {
        double key;
        std::size_t index;
    };
    std::vector<Keyed> keyed;
    keyed.reserve(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double w = weights[i];
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw std::invalid_argument("sampling weights must be finite and nonnegative");
        }
        // log(u)/w is a monotone transform of u^(1/w); -inf for w == 0.
        const double u = rng.uniform_open();
        const double key = w > 0.0 ? std::log(u) / w : -std::numeric_limits<double>::infinity();
        keyed.push_back({key, i});
    }
    std::stable_sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) { return a.key > b.key; });
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        out.push_back(keyed[i].index);
    }
    return out;
}

}  // namespace steerkit
