// aarch64 always has Advanced SIMD with float64x2_t, so no runtime probe.

#include <arm_neon.h>

#include "kernels_internal.hpp"

namespace steerkit::simd {
namespace {

double dot_neon(const double* a, const double* b, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
        acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
    }
    double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
    for (; i < n; ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

double dot_f32_neon(const float* a, const double* b, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        acc = vfmaq_f64(acc, vcvt_f64_f32(vld1_f32(a + i)), vld1q_f64(b + i));
    }
    double out = vaddvq_f64(acc);
    for (; i < n; ++i) {
        out += static_cast<double>(a[i]) * b[i];
    }
    return out;
}

double sum_sq_neon(const double* x, std::size_t n) {
    return dot_neon(x, x, n);
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
    const float64x2_t a = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), a, vld1q_f64(x + i)));
    }
    for (; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

void axpy_f32_neon(double alpha, const float* x, double* y, std::size_t n) {
    const float64x2_t a = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), a, vcvt_f64_f32(vld1_f32(x + i))));
    }
    for (; i < n; ++i) {
        y[i] += alpha * static_cast<double>(x[i]);
    }
}

void scale_neon(double alpha, double* x, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(x + i, vmulq_n_f64(vld1q_f64(x + i), alpha));
    }
    for (; i < n; ++i) {
        x[i] *= alpha;
    }
}

void matvec_neon(const double* w, const double* x, double* y, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        y[r] = dot_neon(w + r * cols, x, cols);
    }
}

void project_edit_neon(double* h, const double* v, double lambda, std::size_t n) {
    const double shift = lambda - dot_neon(h, v, n);
    axpy_neon(shift, v, h, n);
}

}  // namespace

const KernelTable& neon_kernels() {
    static const KernelTable table{
        Isa::neon,     dot_neon,   dot_f32_neon, sum_sq_neon,       axpy_neon,
        axpy_f32_neon, scale_neon, matvec_neon,  project_edit_neon,
    };
    return table;
}

}  // namespace steerkit::simd
