// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.

#include <immintrin.h>

#include "kernels_internal.hpp"

namespace steerkit::simd {
namespace {

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d pair = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(pair, _mm_unpackhi_pd(pair, pair)));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    if (i + 4 <= n) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        i += 4;
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

double dot_f32_avx2(const float* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 af = _mm256_loadu_ps(a + i);
        const __m256d a0 = _mm256_cvtps_pd(_mm256_castps256_ps128(af));
        const __m256d a1 = _mm256_cvtps_pd(_mm256_extractf128_ps(af, 1));
        acc0 = _mm256_fmadd_pd(a0, _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(a1, _mm256_loadu_pd(b + i + 4), acc1);
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) {
        acc += static_cast<double>(a[i]) * b[i];
    }
    return acc;
}

double sum_sq_avx2(const double* x, std::size_t n) {
    return dot_avx2(x, x, n);
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d a = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

void axpy_f32_avx2(double alpha, const float* x, double* y, std::size_t n) {
    const __m256d a = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d xv = _mm256_cvtps_pd(_mm_loadu_ps(x + i));
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(a, xv, _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) {
        y[i] += alpha * static_cast<double>(x[i]);
    }
}

void scale_avx2(double alpha, double* x, std::size_t n) {
    const __m256d a = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(x + i, _mm256_mul_pd(a, _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) {
        x[i] *= alpha;
    }
}

void matvec_avx2(const double* w, const double* x, double* y, std::size_t rows, std::size_t cols) {
    std::size_t r = 0;
    // Four rows at a time share the loads of x.
    for (; r + 4 <= rows; r += 4) {
        const double* w0 = w + r * cols;
        const double* w1 = w0 + cols;
        const double* w2 = w1 + cols;
        const double* w3 = w2 + cols;
        __m256d a0 = _mm256_setzero_pd();
        __m256d a1 = _mm256_setzero_pd();
        __m256d a2 = _mm256_setzero_pd();
        __m256d a3 = _mm256_setzero_pd();
        std::size_t c = 0;
        for (; c + 4 <= cols; c += 4) {
            const __m256d xv = _mm256_loadu_pd(x + c);
            a0 = _mm256_fmadd_pd(_mm256_loadu_pd(w0 + c), xv, a0);
            a1 = _mm256_fmadd_pd(_mm256_loadu_pd(w1 + c), xv, a1);
            a2 = _mm256_fmadd_pd(_mm256_loadu_pd(w2 + c), xv, a2);
            a3 = _mm256_fmadd_pd(_mm256_loadu_pd(w3 + c), xv, a3);
        }
        double s0 = hsum(a0);
        double s1 = hsum(a1);
        double s2 = hsum(a2);
        double s3 = hsum(a3);
        for (; c < cols; ++c) {
            s0 += w0[c] * x[c];
            s1 += w1[c] * x[c];
            s2 += w2[c] * x[c];
            s3 += w3[c] * x[c];
        }
        y[r] = s0;
        y[r + 1] = s1;
        y[r + 2] = s2;
        y[r + 3] = s3;
    }
    for (; r < rows; ++r) {
        y[r] = dot_avx2(w + r * cols, x, cols);
    }
}

void project_edit_avx2(double* h, const double* v, double lambda, std::size_t n) {
    const double shift = lambda - dot_avx2(h, v, n);
    axpy_avx2(shift, v, h, n);
}

}  // namespace

const KernelTable& avx2_kernels() {
    static const KernelTable table{
        Isa::avx2,     dot_avx2,   dot_f32_avx2, sum_sq_avx2,       axpy_avx2,
        axpy_f32_avx2, scale_avx2, matvec_avx2,  project_edit_avx2,
    };
    return table;
}

}  // namespace steerkit::simd
