#pragma once

// Data-parallel inner loops used by the toy transformer, extraction and
// intervention code. Every kernel has a scalar reference implementation;
// vectorised variants (AVX2+FMA on x86-64, NEON on aarch64) are selected once
// at runtime and must agree with the reference to rounding.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace steerkit::simd {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);

/// Function table for one instruction set. All lengths are element counts and
/// the caller guarantees matching sizes (checked by the span wrappers below).
struct KernelTable {
    Isa isa;
    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*dot_f32)(const float* a, const double* b, std::size_t n);
    double (*sum_sq)(const double* x, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // y += alpha * double(x)
    void (*axpy_f32)(double alpha, const float* x, double* y, std::size_t n);
    // x *= alpha
    void (*scale)(double alpha, double* x, std::size_t n);
    // y[r] = dot(w[r*cols .. ], x) for r in [0, rows)
    void (*matvec)(const double* w, const double* x, double* y, std::size_t rows, std::size_t cols);
    // h <- h - (h.v) v + lambda v, with v unit-norm
    void (*project_edit)(double* h, const double* v, double lambda, std::size_t n);
};

const KernelTable& scalar_kernels();

/// Table for a specific ISA; nullptr when the ISA is not compiled in or the
/// running CPU lacks it.
const KernelTable* kernels_for(Isa isa);

/// ISAs usable on this machine, scalar first.
std::vector<Isa> available_isas();

/// Active table. Picks the widest available ISA on first use; the environment
/// variable STEERKIT_SIMD=scalar|avx2|neon forces a choice.
const KernelTable& active();

// span conveniences over the active table

double dot(std::span<const double> a, std::span<const double> b);
double dot(std::span<const float> a, std::span<const double> b);
double norm(std::span<const double> x);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void axpy(double alpha, std::span<const float> x, std::span<double> y);
void scale(double alpha, std::span<double> x);

}  // namespace steerkit::simd
