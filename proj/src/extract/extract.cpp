// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dmx/extract/extract.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dmx/audio/dataset.hpp"
#include "dmx/audio/wav.hpp"
#include "dmx/error.hpp"
#include "dmx/log.hpp"
#include "dmx/parallel.hpp"

namespace dmx::extract {
namespace {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, '\t')) out.push_back(field);
  return out;
}

std::size_t parse_size(const std::string& s, const fs::path& where) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw FormatError(where.string() + ": bad integer '" + s + "'");
  }
}

double parse_double(const std::string& s, const fs::path& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(where.string() + ": bad number '" + s + "'");
  }
}

void write_config_comments(std::ostream& out, const std::vector<std::pair<std::string, std::string>>& config) {
  for (const auto& [k, v] : config) out << "# " << k << '=' << v << '\n';
}

std::string source_dir(std::size_t s) { return "D_" + std::string(audio::kSourceNames[s]); }

}  // namespace

ThresholdCalibration calibrate_thresholds(const std::vector<CalibrationTrack>& tracks,
                                          const CalibrationOptions& options) {
  if (tracks.empty()) throw ContractError("calibration set is empty");
  ThresholdCalibration cal;
  for (std::size_t s = 0; s < audio::kNumSources; ++s) {
    std::vector<std::pair<double, bool>> points;
    for (const auto& t : tracks) {
      if (t.probabilities[s].size() != t.volumes[s].size())
        throw ShapeError("calibration: probabilities and volumes differ in length");
      for (std::size_t w = 0; w < t.volumes[s].size(); ++w)
        points.emplace_back(t.probabilities[s][w], t.volumes[s][w] <= options.quality_db);
    }
    SourceThreshold& out = cal.sources[s];
    out.windows = points.size();
    std::sort(points.begin(), points.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::size_t selected = 0, good = 0;
    for (std::size_t i = 0; i < points.size();) {
      const double p = points[i].first;
      for (; i < points.size() && points[i].first == p; ++i) {
        ++selected;
        good += points[i].second ? 1 : 0;
      }
      const double precision = static_cast<double>(good) / static_cast<double>(selected);
      if (selected >= options.min_windows && precision >= options.precision) {
        out.threshold = p;
        out.precision = precision;
        out.selected = selected;
      }
    }
  }
  return cal;
}

ThresholdCalibration calibrate_thresholds(detector::DetectorModel& model,
                                          const std::vector<detector::DetectorExample>& calib_set,
                                          const CalibrationOptions& options) {
  std::vector<CalibrationTrack> tracks;
  for (const auto& e : calib_set) tracks.push_back({detector::window_probabilities(model, e.features), e.volumes});
  return calibrate_thresholds(tracks, options);
}

void save_thresholds(const fs::path& path, const ThresholdCalibration& cal,
                     const std::vector<std::pair<std::string, std::string>>& config) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_config_comments(out, config);
  for (std::size_t s = 0; s < audio::kNumSources; ++s) {
    const SourceThreshold& t = cal.sources[s];
    out << audio::kSourceNames[s] << '\t' << (t.threshold ? format_double(*t.threshold) : "none") << '\t'
        << format_double(t.precision) << '\t' << t.selected << '\t' << t.windows << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

ThresholdCalibration load_thresholds(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  ThresholdCalibration cal;
  std::array<bool, audio::kNumSources> seen{};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_tabs(line);
    if (f.size() != 5) throw FormatError(path.string() + ": expected 5 fields per threshold line");
    const int s = audio::source_index(f[0]);
    if (s < 0) throw FormatError(path.string() + ": unknown source '" + f[0] + "'");
    SourceThreshold& t = cal.sources[static_cast<std::size_t>(s)];
    if (f[1] != "none") t.threshold = parse_double(f[1], path);
    t.precision = parse_double(f[2], path);
    t.selected = parse_size(f[3], path);
    t.windows = parse_size(f[4], path);
    seen[static_cast<std::size_t>(s)] = true;
  }
  for (std::size_t s = 0; s < audio::kNumSources; ++s)
    if (!seen[s]) throw FormatError(path.string() + ": no line for " + std::string(audio::kSourceNames[s]));
  return cal;
}

std::vector<std::pair<std::size_t, std::size_t>> qualifying_runs(const std::vector<double>& probabilities,
                                                                 double threshold) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  for (std::size_t w = 0; w < probabilities.size();) {
    if (probabilities[w] < threshold) {
      ++w;
      continue;
    }
    const std::size_t first = w;
    while (w < probabilities.size() && probabilities[w] >= threshold) ++w;
    runs.emplace_back(first, w - 1);
  }
  return runs;
}

std::vector<SilentExcerpt> extract_silent_segments(const detector::SourceSeries& probabilities,
                                                   const ThresholdCalibration& thresholds,
                                                   const audio::Waveform& track, const std::string& origin,
                                                   double min_seconds) {
  const std::size_t frames = track.frames();
  const int rate = track.sample_rate();
  const std::size_t windows = detector::window_count(frames, rate);
  std::vector<SilentExcerpt> out;
  for (std::size_t s = 0; s < audio::kNumSources; ++s) {
    const auto& threshold = thresholds.sources[s].threshold;
    if (!threshold) {
      log_info("extract: no threshold for " + std::string(audio::kSourceNames[s]) + ", skipping " + origin);
      continue;
    }
    if (probabilities[s].size() != windows)
      throw ShapeError("extract: " + std::to_string(probabilities[s].size()) + " probabilities for " +
                       std::to_string(windows) + " windows");
    for (const auto& [first, last] : qualifying_runs(probabilities[s], *threshold)) {
      const std::size_t start = detector::window_span(first, frames, rate).first;
      const std::size_t end = detector::window_span(last, frames, rate).second;
      if (static_cast<double>(end - start) < min_seconds * rate) continue;
      double mean = 0.0;
      for (std::size_t w = first; w <= last; ++w) mean += probabilities[s][w];
      mean /= static_cast<double>(last - first + 1);
      out.push_back({s, origin, start, end, rate, mean, track.slice(start, end - start)});
    }
  }
  return out;
}

fs::path manifest_path(const fs::path& out_root, std::size_t source) {
  return out_root / source_dir(source) / "manifest.tsv";
}

UnlabeledSets build_unlabeled_sets(detector::DetectorModel& model, const ThresholdCalibration& thresholds,
                                   const fs::path& corpus_root, const fs::path& out_root,
                                   const BuildOptions& options) {
  std::vector<fs::path> dirs;
  for (const auto& d : audio::list_track_dirs(corpus_root))
    if (fs::exists(d / "mixture.wav")) dirs.push_back(d);
  for (std::size_t s = 0; s < audio::kNumSources; ++s) fs::create_directories(out_root / source_dir(s));

  UnlabeledSets result;
  result.tracks = dirs.size();
  std::vector<std::array<std::vector<ManifestRow>, audio::kNumSources>> per_track(dirs.size());
  std::vector<char> failed(dirs.size(), 0);
  parallel_for(dirs.size(), options.workers, [&](std::size_t i) {
    const std::string name = dirs[i].filename().string();
    try {
      const audio::Waveform mix = audio::read_wav(dirs[i] / "mixture.wav");
      const audio::Waveform input = detector::scatter_input(mix);
      const ad::Tensor feats = options.feature_cache.empty() ? detector::scatter2(input)
                                                             : detector::scatter2_cached(input, options.feature_cache);
      const auto probs = detector::window_probabilities(model, feats);
      for (const SilentExcerpt& e : extract_silent_segments(probs, thresholds, mix, name + "/mixture.wav",
                                                            options.min_seconds)) {
        const std::string file = name + "_" + std::to_string(e.start) + "_" + std::to_string(e.end) + ".wav";
        const fs::path rel = fs::path(source_dir(e.source)) / file;
        audio::write_wav(out_root / rel, e.audio);
        per_track[i][e.source].push_back(
            {std::string(audio::kSourceNames[e.source]), e.origin, e.start, e.end, e.mean_probability, rel.string()});
      }
    } catch (const Error& err) {
      log_warn("extract: " + name + " failed: " + err.what());
      per_track[i] = {};
      failed[i] = 1;
    }
  });

  for (std::size_t i = 0; i < dirs.size(); ++i) {
    result.failures += failed[i] ? 1 : 0;
    for (std::size_t s = 0; s < audio::kNumSources; ++s)
      result.rows[s].insert(result.rows[s].end(), per_track[i][s].begin(), per_track[i][s].end());
  }
  for (std::size_t s = 0; s < audio::kNumSources; ++s) {
    const fs::path path = manifest_path(out_root, s);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    write_config_comments(out, options.config);
    for (const ManifestRow& r : result.rows[s])
      out << r.source << '\t' << r.origin << '\t' << r.start << '\t' << r.end << '\t'
          << format_double(r.mean_probability) << '\t' << r.path << '\n';
    if (!out) throw IoError("failed writing " + path.string());
  }
  return result;
}

std::vector<ManifestRow> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<ManifestRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_tabs(line);
    if (f.size() != 6) throw FormatError(path.string() + ": expected 6 fields per manifest row");
    rows.push_back({f[0], f[1], parse_size(f[2], path), parse_size(f[3], path), parse_double(f[4], path), f[5]});
  }
  return rows;
}

std::vector<audio::Waveform> load_unlabeled_set(const fs::path& out_root, std::size_t source) {
  std::vector<audio::Waveform> out;
  const fs::path path = manifest_path(out_root, source);
  if (!fs::exists(path)) return out;
  for (const ManifestRow& r : read_manifest(path)) out.push_back(audio::read_wav(out_root / r.path));
  return out;
}

}  // namespace dmx::extract
