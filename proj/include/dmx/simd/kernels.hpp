// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>
#include <string_view>

// Dense float kernels used by every convolution, LSTM and GEMM in the
// library. Each kernel has a scalar reference and an AVX2+FMA variant; the
// variant is chosen once at startup from CPUID and can be forced to scalar
// by setting DMX_SIMD=scalar in the environment.
//
// All kernels have a fixed reduction order for a given ISA, so results are
// reproducible run to run on the same machine.

namespace dmx::simd {

enum class Isa { Scalar, Avx2 };

/// ISA selected by the runtime dispatcher.
Isa active_isa();
std::string_view isa_name(Isa isa);

/// Forces the dispatcher (tests and benchmarks only).
void set_isa(Isa isa);
bool isa_available(Isa isa);

float dot(const float* a, const float* b, std::size_t n);
/// y += alpha * x
void axpy(float alpha, const float* x, float* y, std::size_t n);

/// C[M,N] += A[M,K] * B[K,N]; all row-major, contiguous.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c);
/// C[M,N] += A[M,K] * B[N,K]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c);
/// C[M,N] += A[K,M]^T * B[K,N]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c);

namespace scalar {
float dot(const float* a, const float* b, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define DMX_HAVE_AVX2_KERNELS 1
namespace avx2 {
float dot(const float* a, const float* b, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
}  // namespace avx2
#endif

}  // namespace dmx::simd
