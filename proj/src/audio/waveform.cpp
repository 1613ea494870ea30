// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dmx/audio/waveform.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dmx/error.hpp"

namespace dmx::audio {

Waveform::Waveform(std::size_t channels, std::size_t frames, int sample_rate)
    : channels_(channels), frames_(frames), sample_rate_(sample_rate), data_(channels * frames, 0.0f) {}

Waveform::Waveform(std::size_t channels, std::size_t frames, int sample_rate, std::vector<float> data)
    : channels_(channels), frames_(frames), sample_rate_(sample_rate), data_(std::move(data)) {
  if (data_.size() != channels * frames)
    throw ShapeError("waveform data size " + std::to_string(data_.size()) + " != " +
                     std::to_string(channels) + "x" + std::to_string(frames));
}

Waveform Waveform::slice(std::size_t start, std::size_t length) const {
  if (start + length > frames_) throw ShapeError("waveform slice out of range");
  Waveform out(channels_, length, sample_rate_);
  for (std::size_t c = 0; c < channels_; ++c)
    std::copy_n(data_.data() + c * frames_ + start, length, out.data_.data() + c * length);
  return out;
}

void Waveform::validate() const {
  if (channels_ < 1 || channels_ > 2)
    throw ContractError("waveform must have 1 or 2 channels, got " + std::to_string(channels_));
  if (sample_rate_ <= 0) throw ContractError("sample rate must be positive");
  for (float v : data_)
    if (!std::isfinite(v)) throw ContractError("waveform contains non-finite samples");
}

int source_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumSources; ++i)
    if (kSourceNames[i] == name) return static_cast<int>(i);
  return -1;
}

Waveform SourceSet::mixture() const {
  const Waveform& first = sources[0];
  Waveform mix(first.channels(), first.frames(), first.sample_rate());
  auto out = mix.samples();
  for (const auto& s : sources) {
    if (!s.same_layout(first)) throw ShapeError("sources in a SourceSet must share layout");
    auto in = s.samples();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += in[i];
  }
  return mix;
}

SourceSet SourceSet::slice(std::size_t start, std::size_t length) const {
  SourceSet out;
  for (std::size_t i = 0; i < kNumSources; ++i) out.sources[i] = sources[i].slice(start, length);
  return out;
}

Waveform downmix_mono(const Waveform& wave) {
  if (wave.channels() == 1) return wave;
  if (wave.channels() != 2) throw ContractError("downmix expects 1 or 2 channels");
  Waveform out(1, wave.frames(), wave.sample_rate());
  auto l = wave.channel(0);
  auto r = wave.channel(1);
  auto m = out.channel(0);
  for (std::size_t t = 0; t < wave.frames(); ++t) m[t] = 0.5f * (l[t] + r[t]);
  return out;
}

double peak_abs_diff(const Waveform& a, const Waveform& b) {
  if (a.channels() != b.channels() || a.frames() != b.frames())
    throw ShapeError("peak_abs_diff: layout mismatch");
  double peak = 0.0;
  auto x = a.samples();
  auto y = b.samples();
  for (std::size_t i = 0; i < x.size(); ++i)
    peak = std::max(peak, std::abs(static_cast<double>(x[i]) - static_cast<double>(y[i])));
  return peak;
}

}  // namespace dmx::audio
