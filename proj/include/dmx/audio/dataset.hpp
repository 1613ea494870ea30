// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "dmx/audio/wav.hpp"
#include "dmx/audio/waveform.hpp"

namespace dmx::audio {

/// Peak absolute error tolerated between a stored mixture and the sum of
/// its stems.
inline constexpr double kMixtureTolerance = 1e-4;

/// Loads `<dir>/{mixture,drums,bass,other,vocals}.wav` and checks the
/// stored mixture against the stem sum.
SourceSet load_track_dir(const std::filesystem::path& dir);

/// Writes the four stems and their exact sum as mixture.wav.
void write_track_dir(const std::filesystem::path& dir, const SourceSet& set,
                     WavEncoding encoding = WavEncoding::Float32);

/// Sorted list of immediate subdirectories of root.
std::vector<std::filesystem::path> list_track_dirs(const std::filesystem::path& root);

struct Segment {
  std::size_t track = 0;
  std::size_t offset = 0;
};

struct DatasetOptions {
  int sample_rate = 0;        // 0 keeps the stored rate
  std::size_t channels = 0;   // 0 keeps the stored channel count; 1 downmixes
  double segment_seconds = 5.0;
  double stride_seconds = 0.5;
};

/// A directory of tracks held in memory at a common rate and channel count,
/// plus the segment grid that defines one epoch.
struct TrackDataset {
  std::filesystem::path root;
  std::vector<std::string> track_names;
  std::vector<SourceSet> tracks;
  int sample_rate = 0;
  std::size_t channels = 0;
  std::size_t segment_length = 0;
  std::size_t segment_stride = 0;

  /// Every segment of segment_length frames at segment_stride hop, in
  /// track order.
  std::vector<Segment> segments() const;
  SourceSet segment(const Segment& s) const;
};

TrackDataset load_dataset(const std::filesystem::path& root, const DatasetOptions& options);

/// Resamples and/or downmixes every stem of a set.
SourceSet convert(const SourceSet& set, int sample_rate, std::size_t channels);

}  // namespace dmx::audio
