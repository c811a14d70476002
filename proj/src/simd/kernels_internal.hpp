#pragma once

#include "steerkit/simd/kernels.hpp"

namespace steerkit::simd {

#if defined(STEERKIT_HAVE_AVX2)
const KernelTable& avx2_kernels();
#endif
#if defined(STEERKIT_HAVE_NEON)
const KernelTable& neon_kernels();
#endif

}  // namespace steerkit::simd
