#pragma once

// Fixtures and brute-force oracles shared by the unit and acceptance tests.
// The oracles are deliberately naive and do not call library math.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "steerkit/traces.hpp"

namespace testsupport {

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
    static std::uint64_t counter = 0;
    const auto dir = std::filesystem::temp_directory_path() /
                     ("steerkit_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline int sgn(double x) {
    if (x > 0) return 1;
    if (x < 0) return -1;
    return 0;
}

inline double oracle_rmse(const std::vector<double>& comp, const std::vector<double>& s) {
    double acc = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (sgn(comp[i]) != sgn(s[i])) acc += s[i] * s[i];
    }
    return std::sqrt(acc / s.size());
}

/// Pearson r from all ordered pairs: sum (xi-xj)(yi-yj) / sqrt(sum (xi-xj)^2 sum (yi-yj)^2).
inline double oracle_pearson(const std::vector<double>& x, const std::vector<double>& y) {
    long double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = 0; j < x.size(); ++j) {
            const long double dx = (long double)x[i] - x[j];
            const long double dy = (long double)y[i] - y[j];
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
    }
    return (double)(sxy / std::sqrt(sxx * syy));
}

inline double oracle_dot(std::span<const double> a, std::span<const double> b) {
    long double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (long double)a[i] * b[i];
    return (double)acc;
}

inline double oracle_norm(std::span<const double> a) {
    return std::sqrt(oracle_dot(a, a));
}

inline double abs_cosine(std::span<const double> a, std::span<const double> b) {
    return std::abs(oracle_dot(a, b)) / (oracle_norm(a) * oracle_norm(b));
}

/// Random valid trace: scores spread over [-1, 1], Gaussian activations.
inline steerkit::Trace random_trace(std::size_t n, std::size_t d, std::size_t layers, std::uint64_t seed,
                                    double act_offset = 0.0) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<steerkit::PromptRecord> recs;
    for (std::size_t i = 0; i < n; ++i) {
        steerkit::PromptRecord r;
        r.id = static_cast<steerkit::PromptId>(i * 3 + 1);
        const double s = unif(gen);
        r.p_a = 0.9 * (1 + s) / 2;
        r.p_b = 0.9 * (1 - s) / 2;
        r.disparity = r.p_a - r.p_b;
        r.token_count = 5;
        r.split = (i % 2 == 0) ? steerkit::Split::train : steerkit::Split::validation;
        recs.push_back(r);
    }
    std::vector<steerkit::LayerBlock> blocks;
    for (std::size_t l = 0; l < layers; ++l) {
        steerkit::LayerBlock b{l, n, d, std::vector<float>(n * d)};
        for (auto& v : b.values) v = static_cast<float>(normal(gen) + act_offset);
        blocks.push_back(std::move(b));
    }
    steerkit::TraceManifest m;
    m.model_id = "random";
    m.d_model = d;
    m.n_layers = layers;
    m.concept_spec.tokens_a = {1, 2};
    m.concept_spec.tokens_b = {3, 4};
    m.n_prompts = n;
    return steerkit::Trace(std::move(m), std::move(recs), std::move(blocks));
}

inline std::vector<double> row_of(const steerkit::Trace& t, steerkit::PromptId id, std::size_t layer) {
    const auto r = t.activation(id, layer);
    return std::vector<double>(r.begin(), r.end());
}

/// Copy of `t` with every probability (hence disparity) multiplied by c and
/// every activation shifted by `shift` (skipped when empty).
inline steerkit::Trace transformed(const steerkit::Trace& t, double c, const std::vector<double>& shift) {
    auto recs = t.records();
    for (auto& r : recs) {
        r.p_a *= c;
        r.p_b *= c;
        r.disparity = r.p_a - r.p_b;
    }
    auto layers = t.layers();
    if (!shift.empty()) {
        for (auto& b : layers) {
            for (std::size_t i = 0; i < b.rows; ++i) {
                for (std::size_t k = 0; k < b.cols; ++k) {
                    b.values[i * b.cols + k] = static_cast<float>(b.values[i * b.cols + k] + shift[k]);
                }
            }
        }
    }
    return steerkit::Trace(t.manifest(), recs, layers);
}

}  // namespace testsupport
