// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dmx/audio/dataset.hpp"

namespace dmx::audio {

/// Interval during which one source of one track is exact digital zero.
struct SilenceInterval {
  std::size_t track = 0;
  std::size_t source = 0;
  double start_s = 0.0;
  double end_s = 0.0;
};

using SilencePlan = std::vector<SilenceInterval>;

struct SynthOptions {
  std::uint64_t seed = 0;
  std::size_t n_tracks = 4;
  double duration_s = 30.0;
  int sample_rate = 44100;
  std::size_t channels = 2;
  SilencePlan silence_plan;
};

/// One synthetic track: drums are filtered noise bursts on a periodic grid,
/// bass a 40-120 Hz harmonic line, vocals a frequency-modulated mid-band
/// tone, other a harmonic chord pad. Planned intervals are zeroed exactly.
SourceSet synth_track(const SynthOptions& options, std::size_t track);

/// Writes `<root>/track_NNN/*.wav` for every track (float32) and returns
/// the corpus loaded back with the default 5 s / 0.5 s segment grid.
TrackDataset synth_corpus(const std::filesystem::path& root, const SynthOptions& options);

struct SilencePlanOptions {
  double intervals_per_track = 1.0;   // expected count, Poisson-like
  double min_seconds = 6.0;
  double max_seconds = 10.0;
  std::vector<std::size_t> sources = {0, 1, 2, 3};
};

/// Random, non-overlapping (per source) silence intervals inside
/// [0.5 s, duration - 0.5 s].
SilencePlan random_silence_plan(std::uint64_t seed, std::size_t n_tracks, double duration_s,
                                const SilencePlanOptions& options = {});

}  // namespace dmx::audio
