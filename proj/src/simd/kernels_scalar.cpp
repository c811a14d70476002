#include "steerkit/simd/kernels.hpp"

namespace steerkit::simd {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

double dot_f32_scalar(const float* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += static_cast<double>(a[i]) * b[i];
    }
    return acc;
}

double sum_sq_scalar(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += x[i] * x[i];
    }
    return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

void axpy_f32_scalar(double alpha, const float* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        y[i] += alpha * static_cast<double>(x[i]);
    }
}

void scale_scalar(double alpha, double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        x[i] *= alpha;
    }
}

void matvec_scalar(const double* w, const double* x, double* y, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        y[r] = dot_scalar(w + r * cols, x, cols);
    }
}

void project_edit_scalar(double* h, const double* v, double lambda, std::size_t n) {
    const double shift = lambda - dot_scalar(h, v, n);
    axpy_scalar(shift, v, h, n);
}

}  // namespace

const KernelTable& scalar_kernels() {
    static const KernelTable table{
        Isa::scalar,   dot_scalar,   dot_f32_scalar, sum_sq_scalar,      axpy_scalar,
        axpy_f32_scalar, scale_scalar, matvec_scalar, project_edit_scalar,
    };
    return table;
}

}  // namespace steerkit::simd
