// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dmx/audio/waveform.hpp"
#include "dmx/detector/detector.hpp"

namespace dmx::extract {

inline constexpr double kQualityThresholdDb = -20.0;
inline constexpr double kTargetPrecision = 0.95;
inline constexpr std::size_t kMinQualifying = 50;
inline constexpr double kMinExcerptSeconds = 5.0;

struct CalibrationOptions {
  double quality_db = kQualityThresholdDb;
  double precision = kTargetPrecision;
  std::size_t min_windows = kMinQualifying;
};

struct SourceThreshold {
  std::optional<double> threshold;  // absent: source not extractable
  double precision = 0.0;           // over windows with P >= threshold
  std::size_t selected = 0;         // windows with P >= threshold
  std::size_t windows = 0;          // calibration windows seen
};

struct ThresholdCalibration {
  std::array<SourceThreshold, audio::kNumSources> sources;
};

/// One detector output and the matching true volumes, window by window.
struct CalibrationTrack {
  detector::SourceSeries probabilities;
  detector::SourceSeries volumes;
};

/// Per source, the smallest observed probability p such that at least
/// min_windows windows have P >= p and a fraction >= precision of them
/// have V <= quality_db. ContractError on an empty set.
ThresholdCalibration calibrate_thresholds(const std::vector<CalibrationTrack>& tracks,
                                          const CalibrationOptions& options = {});
ThresholdCalibration calibrate_thresholds(detector::DetectorModel& model,
                                          const std::vector<detector::DetectorExample>& calib_set,
                                          const CalibrationOptions& options = {});

/// Threshold file: one line per source, "name<TAB>threshold|none<TAB>precision<TAB>selected<TAB>windows",
/// preceded by "# key=value" comment lines.
void save_thresholds(const std::filesystem::path& path, const ThresholdCalibration& cal,
                     const std::vector<std::pair<std::string, std::string>>& config = {});
ThresholdCalibration load_thresholds(const std::filesystem::path& path);

struct SilentExcerpt {
  std::size_t source = 0;
  std::string origin;
  std::size_t start = 0;  // samples at the track's own rate
  std::size_t end = 0;
  int sample_rate = 0;
  double mean_probability = 0.0;
  audio::Waveform audio;

  double seconds() const { return static_cast<double>(end - start) / sample_rate; }
};

/// Maximal runs of windows with P >= threshold, as [first, last] window
/// indices, for one source.
std::vector<std::pair<std::size_t, std::size_t>> qualifying_runs(const std::vector<double>& probabilities,
                                                                 double threshold);

/// Every run lasting at least min_seconds, cut from the track at its own
/// rate and channel count. The excerpt spans the union of its windows.
/// Sources without a threshold are skipped with a log entry.
std::vector<SilentExcerpt> extract_silent_segments(const detector::SourceSeries& probabilities,
                                                   const ThresholdCalibration& thresholds,
                                                   const audio::Waveform& track, const std::string& origin,
                                                   double min_seconds = kMinExcerptSeconds);

struct ManifestRow {
  std::string source;
  std::string origin;
  std::size_t start = 0;
  std::size_t end = 0;
  double mean_probability = 0.0;
  std::string path;  // relative to the set's root
};

struct UnlabeledSets {
  std::array<std::vector<ManifestRow>, audio::kNumSources> rows;
  std::size_t tracks = 0;
  std::size_t failures = 0;
};

struct BuildOptions {
  std::size_t workers = 1;
  double min_seconds = kMinExcerptSeconds;
  std::filesystem::path feature_cache;  // empty: no cache
  std::vector<std::pair<std::string, std::string>> config;  // echoed into manifests
};

/// For every track directory under corpus_root holding mixture.wav, detects
/// silent sources and writes out_root/D_<source>/<track>_<start>_<end>.wav
/// plus out_root/D_<source>/manifest.tsv. All four manifests are always
/// written. A failing track is logged and counted; the rest proceed.
UnlabeledSets build_unlabeled_sets(detector::DetectorModel& model, const ThresholdCalibration& thresholds,
                                   const std::filesystem::path& corpus_root, const std::filesystem::path& out_root,
                                   const BuildOptions& options = {});

std::filesystem::path manifest_path(const std::filesystem::path& out_root, std::size_t source);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

/// Audio of every excerpt listed in D_<source>'s manifest, in manifest order.
std::vector<audio::Waveform> load_unlabeled_set(const std::filesystem::path& out_root, std::size_t source);

}  // namespace dmx::extract
