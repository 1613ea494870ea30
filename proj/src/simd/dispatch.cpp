// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cstdlib>
#include <cstring>

#include "dmx/simd/kernels.hpp"

namespace dmx::simd {
namespace {

using DotFn = float (*)(const float*, const float*, std::size_t);
using AxpyFn = void (*)(float, const float*, float*, std::size_t);

struct Table {
  Isa isa;
  DotFn dot;
  AxpyFn axpy;
};

Table table_for(Isa isa) {
#ifdef DMX_HAVE_AVX2_KERNELS
  if (isa == Isa::Avx2) return {Isa::Avx2, &avx2::dot, &avx2::axpy};
#endif
  return {Isa::Scalar, &scalar::dot, &scalar::axpy};
}

Isa detect() {
  const char* env = std::getenv("DMX_SIMD");
  if (env != nullptr && std::strcmp(env, "scalar") == 0) return Isa::Scalar;
  return isa_available(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

Table& active() {
  static Table t = table_for(detect());
  return t;
}

}  // namespace

bool isa_available(Isa isa) {
  if (isa == Isa::Scalar) return true;
#ifdef DMX_HAVE_AVX2_KERNELS
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa active_isa() { return active().isa; }

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

void set_isa(Isa isa) { active() = table_for(isa_available(isa) ? isa : Isa::Scalar); }

float dot(const float* a, const float* b, std::size_t n) { return active().dot(a, b, n); }

void axpy(float alpha, const float* x, float* y, std::size_t n) { active().axpy(alpha, x, y, n); }

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  const AxpyFn ax = active().axpy;
  for (std::size_t i = 0; i < m; ++i) {
    float* ci = c + i * n;
    const float* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p)
      if (ai[p] != 0.0f) ax(ai[p], b + p * n, ci, n);
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  const DotFn d = active().dot;
  for (std::size_t i = 0; i < m; ++i) {
    const float* ai = a + i * k;
    float* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += d(ai, b + j * k, k);
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  const AxpyFn ax = active().axpy;
  for (std::size_t p = 0; p < k; ++p) {
    const float* ap = a + p * m;
    const float* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i)
      if (ap[i] != 0.0f) ax(ap[i], bp, c + i * n, n);
  }
}

}  // namespace dmx::simd
