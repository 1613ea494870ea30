// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>
#include <filesystem>
#include <utility>
#include <vector>

#include "dmx/audio/waveform.hpp"
#include "dmx/autodiff/tensor.hpp"

namespace dmx::detector {

inline constexpr int kScatterRate = 16000;
inline constexpr std::size_t kWindowSamples = 10240;  // 0.64 s at 16 kHz
inline constexpr std::size_t kHopSamples = 1024;      // 64 ms at 16 kHz

/// Filters are Gaussians in frequency (Hz): exp(-(f - center)^2 / (2 sigma^2)),
/// zero for f <= 0. Adjacent filters cross at half maximum.
struct FilterPlan {
  std::vector<double> first_centers, first_sigmas;    // order 1, high to low
  std::vector<double> second_centers, second_sigmas;  // order 2, low to high
  double lowpass_seconds = 0.16;                      // time std of the averaging window

  std::size_t frequencies() const { return first_centers.size(); }
  /// 1 order-1 channel + one channel per order-2 frequency.
  std::size_t channels() const { return 1 + second_centers.size(); }
};

/// 8 filters per octave over 6 octaves starting at 0.35 fs; order 2 at one
/// filter per octave, 4 Hz to 128 Hz.
FilterPlan default_plan();

/// Window grid shared by features and labels: 0.64 s windows every 64 ms.
std::size_t window_count(std::size_t frames, int sample_rate);
/// [begin, end) sample range of window w at the given rate, clipped to frames.
std::pair<std::size_t, std::size_t> window_span(std::size_t w, std::size_t frames, int sample_rate);

/// Order-2 scattering of a mono 16 kHz wave: tensor [C, F, T_w] with
/// channel 0 = order-1 coefficients and channel 1 + m = order-2 coefficients
/// at second-order frequency m (zero where that frequency is not below f1).
/// All values are non-negative. Raises ContractError on a wrong layout.
ad::Tensor scatter2(const audio::Waveform& wave, const FilterPlan& plan = default_plan());

/// Same, memoized on disk under cache_dir keyed by a hash of the samples.
ad::Tensor scatter2_cached(const audio::Waveform& wave, const std::filesystem::path& cache_dir,
                           const FilterPlan& plan = default_plan());

/// Mono 16 kHz view of any waveform (downmix then resample).
audio::Waveform scatter_input(const audio::Waveform& wave);

}  // namespace dmx::detector
