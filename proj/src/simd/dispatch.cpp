#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "kernels_internal.hpp"

namespace steerkit::simd {
namespace {

bool cpu_has_avx2() {
#if defined(STEERKIT_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable& pick() {
    if (const char* forced = std::getenv("STEERKIT_SIMD"); forced != nullptr && *forced != '\0') {
        const std::string name(forced);
        for (Isa isa : {Isa::scalar, Isa::avx2, Isa::neon}) {
            if (name == isa_name(isa)) {
                if (const KernelTable* table = kernels_for(isa)) {
                    return *table;
                }
                throw std::runtime_error("STEERKIT_SIMD=" + name + " is not available on this machine");
            }
        }
        throw std::runtime_error("STEERKIT_SIMD: unknown instruction set '" + name + "'");
    }
    const auto isas = available_isas();
    return *kernels_for(isas.back());
}

void check_sizes(std::size_t a, std::size_t b) {
    if (a != b) {
        throw std::invalid_argument("dimension mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
    }
}

}  // namespace

std::string_view isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar:
            return "scalar";
        case Isa::avx2:
            return "avx2";
        case Isa::neon:
            return "neon";
    }
    return "unknown";
}

const KernelTable* kernels_for(Isa isa) {
    switch (isa) {
        case Isa::scalar:
            return &scalar_kernels();
        case Isa::avx2:
#if defined(STEERKIT_HAVE_AVX2)
            if (cpu_has_avx2()) {
                return &avx2_kernels();
            }
#endif
            return nullptr;
        case Isa::neon:
#if defined(STEERKIT_HAVE_NEON)
            return &neon_kernels();
#else
            return nullptr;
#endif
    }
    return nullptr;
}

std::vector<Isa> available_isas() {
    std::vector<Isa> out{Isa::scalar};
    for (Isa isa : {Isa::avx2, Isa::neon}) {
        if (kernels_for(isa) != nullptr) {
            out.push_back(isa);
        }
    }
    return out;
}

const KernelTable& active() {
    static const KernelTable& table = pick();
    return table;
}

double dot(std::span<const double> a, std::span<const double> b) {
    check_sizes(a.size(), b.size());
    return active().dot(a.data(), b.data(), a.size());
}

double dot(std::span<const float> a, std::span<const double> b) {
    check_sizes(a.size(), b.size());
    return active().dot_f32(a.data(), b.data(), a.size());
}

double norm(std::span<const double> x) {
    return std::sqrt(active().sum_sq(x.data(), x.size()));
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    check_sizes(x.size(), y.size());
    active().axpy(alpha, x.data(), y.data(), x.size());
}

void axpy(double alpha, std::span<const float> x, std::span<double> y) {
    check_sizes(x.size(), y.size());
    active().axpy_f32(alpha, x.data(), y.data(), x.size());
}

void scale(double alpha, std::span<double> x) {
    active().scale(alpha, x.data(), x.size());
}

}  // namespace steerkit::simd
