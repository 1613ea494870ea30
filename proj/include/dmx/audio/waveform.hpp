// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace dmx::audio {

/// Planar multichannel buffer: sample (c, t) lives at data[c * frames + t].
class Waveform {
 public:
  Waveform() = default;
  Waveform(std::size_t channels, std::size_t frames, int sample_rate);
  Waveform(std::size_t channels, std::size_t frames, int sample_rate, std::vector<float> data);

  std::size_t channels() const noexcept { return channels_; }
  std::size_t frames() const noexcept { return frames_; }
  int sample_rate() const noexcept { return sample_rate_; }
  double duration() const noexcept { return static_cast<double>(frames_) / sample_rate_; }

  float& at(std::size_t c, std::size_t t) { return data_[c * frames_ + t]; }
  float at(std::size_t c, std::size_t t) const { return data_[c * frames_ + t]; }

  std::span<float> channel(std::size_t c) { return {data_.data() + c * frames_, frames_}; }
  std::span<const float> channel(std::size_t c) const { return {data_.data() + c * frames_, frames_}; }

  std::span<float> samples() { return data_; }
  std::span<const float> samples() const { return data_; }
  const std::vector<float>& data() const noexcept { return data_; }

  /// Frames [start, start + length) of every channel.
  Waveform slice(std::size_t start, std::size_t length) const;

  /// Throws ContractError if any invariant (1-2 channels, positive rate,
  /// finite samples) is violated.
  void validate() const;

  bool same_layout(const Waveform& other) const noexcept {
    return channels_ == other.channels_ && frames_ == other.frames_ &&
           sample_rate_ == other.sample_rate_;
  }

 private:
  std::size_t channels_ = 0;
  std::size_t frames_ = 0;
  int sample_rate_ = 1;
  std::vector<float> data_;
};

/// Fixed source ordering used everywhere in the toolkit.
enum class Source : int { Drums = 0, Bass = 1, Other = 2, Vocals = 3 };
inline constexpr std::size_t kNumSources = 4;
inline constexpr std::array<std::string_view, kNumSources> kSourceNames = {"drums", "bass", "other",
                                                                           "vocals"};

/// Index of a source name, or -1.
int source_index(std::string_view name);

struct SourceSet {
  std::array<Waveform, kNumSources> sources;

  Waveform& operator[](std::size_t i) { return sources[i]; }
  const Waveform& operator[](std::size_t i) const { return sources[i]; }

  std::size_t channels() const { return sources[0].channels(); }
  std::size_t frames() const { return sources[0].frames(); }
  int sample_rate() const { return sources[0].sample_rate(); }

  /// Element-wise sum of the four sources.
  Waveform mixture() const;
  SourceSet slice(std::size_t start, std::size_t length) const;
};

Waveform downmix_mono(const Waveform& wave);

/// Peak absolute difference; layouts must match.
double peak_abs_diff(const Waveform& a, const Waveform& b);

}  // namespace dmx::audio
