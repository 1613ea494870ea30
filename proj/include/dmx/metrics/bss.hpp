// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dmx/audio/waveform.hpp"

namespace dmx::metrics {

/// Metrics are clamped to [-kMetricCap, kMetricCap] dB so medians stay finite.
inline constexpr double kMetricCap = 300.0;

/// 10 log10(|s_i|^2 / |s|^2); -infinity when s_i is all zeros.
/// Raises NumericError when the mixture is all zeros.
double relative_volume(std::span<const float> source, std::span<const float> mixture);
double relative_volume(const audio::Waveform& source, const audio::Waveform& mixture);

/// Inclusive: a volume exactly at the threshold counts as silent.
inline bool is_silent(double volume_db, double threshold_db) { return volume_db <= threshold_db; }

struct BssMetrics {
  double sdr = 0.0, sir = 0.0, sar = 0.0;
};

struct BssDecomposition {
  std::vector<double> s_target, e_interf, e_artif;
  BssMetrics metrics;
};

/// Projection-based decomposition of est against refs[target] and the span
/// of all refs. Every signal is one flattened vector of equal length.
BssDecomposition bss_eval(std::span<const double> est, const std::vector<std::vector<double>>& refs,
                          std::size_t target);

/// Metric from energies; a denominator at or below eps gives +cap.
double ratio_db(double numerator, double denominator, double eps);

struct FrameMetrics {
  bool skipped = false;  // reference source all zeros in this frame
  BssMetrics metrics;
};

struct TrackMetrics {
  std::string name;
  std::array<std::vector<FrameMetrics>, audio::kNumSources> frames;
};

/// Non-overlapping frames of frame_seconds; a trailing partial frame is dropped.
TrackMetrics evaluate_track(const audio::SourceSet& estimate, const audio::SourceSet& reference,
                            double frame_seconds = 1.0, const std::string& name = "");

/// Mean of the two middle values for even counts. Requires a non-empty input.
double median(std::vector<double> values);

struct MetricMedians {
  std::optional<double> sdr, sir, sar;
};

struct EvalReport {
  std::vector<TrackMetrics> tracks;
  /// Per track, per source: median over the non-skipped frames.
  std::vector<std::array<MetricMedians, audio::kNumSources>> track_medians;
  /// Per source: median over tracks of the track medians.
  std::array<MetricMedians, audio::kNumSources> source_medians;
  /// Median of all per-track medians of all sources, concatenated.
  MetricMedians all;
};

EvalReport aggregate(std::vector<TrackMetrics> tracks);

/// Versioned JSON with stable key order; `config` key/value pairs are echoed
/// under "config".
std::string report_json(const EvalReport& report,
                        const std::vector<std::pair<std::string, std::string>>& config = {});

}  // namespace dmx::metrics
