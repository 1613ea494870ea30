// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dmx/audio/resample.hpp"

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "dmx/error.hpp"
#include "dmx/simd/kernels.hpp"

namespace dmx::audio {
namespace {

constexpr int kTaps = 64;
constexpr int kHalf = kTaps / 2;
constexpr double kBeta = 8.0;
constexpr std::int64_t kMaxTablePhases = 4096;

double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double q = 0.25 * x * x;
  for (int k = 1; k < 64; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return sum;
}

// Taps for fractional offset frac in [0, 1): tap j (0..63) weights input
// sample base + j - 31.
void phase_taps(double frac, double cutoff, float* out) {
  static const double i0_beta = bessel_i0(kBeta);
  double acc[kTaps];
  double sum = 0.0;
  for (int j = 0; j < kTaps; ++j) {
    const double t = frac - static_cast<double>(j - (kHalf - 1));
    const double u = t / kHalf;
    double w = 0.0;
    if (std::abs(u) < 1.0) w = bessel_i0(kBeta * std::sqrt(1.0 - u * u)) / i0_beta;
    const double x = M_PI * cutoff * t;
    const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(x) / x;
    acc[j] = cutoff * sinc * w;
    sum += acc[j];
  }
  for (int j = 0; j < kTaps; ++j) out[j] = static_cast<float>(acc[j] / sum);
}

}  // namespace

Waveform resample(const Waveform& wave, int target_rate) {
  if (target_rate <= 0) throw ContractError("resample: target rate must be positive");
  const int src = wave.sample_rate();
  if (src == target_rate) return wave;

  const std::int64_t g = std::gcd(static_cast<std::int64_t>(src), static_cast<std::int64_t>(target_rate));
  const std::int64_t up = target_rate / g;
  const std::int64_t down = src / g;
  const double cutoff = std::min(1.0, static_cast<double>(target_rate) / src);
  const auto in_frames = static_cast<std::int64_t>(wave.frames());
  const auto out_frames = static_cast<std::int64_t>(
      std::llround(static_cast<double>(in_frames) * target_rate / static_cast<double>(src)));

  std::vector<float> table;
  const bool tabulated = up <= kMaxTablePhases;
  if (tabulated) {
    table.resize(static_cast<std::size_t>(up * kTaps));
    for (std::int64_t p = 0; p < up; ++p)
      phase_taps(static_cast<double>(p) / up, cutoff, table.data() + p * kTaps);
  }

  Waveform out(wave.channels(), static_cast<std::size_t>(out_frames), target_rate);
  std::vector<float> scratch(kTaps);
  std::vector<float> window(kTaps);
  for (std::size_t c = 0; c < wave.channels(); ++c) {
    const float* x = wave.channel(c).data();
    float* y = out.channel(c).data();
    for (std::int64_t n = 0; n < out_frames; ++n) {
      const std::int64_t pos = n * down;
      const std::int64_t base = pos / up;
      const std::int64_t phase = pos % up;
      const float* taps;
      if (tabulated) {
        taps = table.data() + phase * kTaps;
      } else {
        phase_taps(static_cast<double>(phase) / up, cutoff, scratch.data());
        taps = scratch.data();
      }
      const std::int64_t first = base - (kHalf - 1);
      if (first >= 0 && first + kTaps <= in_frames) {
        y[n] = simd::dot(x + first, taps, kTaps);
      } else {
        for (int j = 0; j < kTaps; ++j) {
          const std::int64_t i = first + j;
          window[j] = (i >= 0 && i < in_frames) ? x[i] : 0.0f;
        }
        y[n] = simd::dot(window.data(), taps, kTaps);
      }
    }
  }
  return out;
}

Waveform to_mono_rate(const Waveform& wave, int target_rate) {
  return resample(downmix_mono(wave), target_rate);
}

}  // namespace dmx::audio
