// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dmx/audio/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dmx/audio/resample.hpp"
#include "dmx/error.hpp"

namespace dmx::audio {
namespace fs = std::filesystem;

SourceSet load_track_dir(const fs::path& dir) {
  auto load = [&](std::string_view stem) {
    const fs::path p = dir / (std::string(stem) + ".wav");
    if (!fs::exists(p)) throw DatasetError("missing file " + p.string());
    return read_wav(p);
  };
  const Waveform mixture = load("mixture");
  SourceSet set;
  for (std::size_t i = 0; i < kNumSources; ++i) {
    set.sources[i] = load(kSourceNames[i]);
    if (!set.sources[i].same_layout(mixture))
      throw DatasetError(dir.string() + ": " + std::string(kSourceNames[i]) +
                         ".wav differs from mixture.wav in length, channels or rate");
  }
  const double dev = peak_abs_diff(set.mixture(), mixture);
  if (dev > kMixtureTolerance) {
    std::ostringstream msg;
    msg << dir.string() << ": mixture differs from the sum of stems by " << dev
        << " (peak absolute, tolerance " << kMixtureTolerance << ")";
    throw ConsistencyError(msg.str(), dev);
  }
  return set;
}

void write_track_dir(const fs::path& dir, const SourceSet& set, WavEncoding encoding) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_wav(dir / "mixture.wav", set.mixture(), encoding);
  for (std::size_t i = 0; i < kNumSources; ++i)
    write_wav(dir / (std::string(kSourceNames[i]) + ".wav"), set.sources[i], encoding);
}

std::vector<fs::path> list_track_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) throw DatasetError("not a directory: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

SourceSet convert(const SourceSet& set, int sample_rate, std::size_t channels) {
  SourceSet out;
  for (std::size_t i = 0; i < kNumSources; ++i) {
    Waveform w = set.sources[i];
    if (channels == 1 && w.channels() == 2) w = downmix_mono(w);
    if (channels == 2 && w.channels() == 1) {
      Waveform st(2, w.frames(), w.sample_rate());
      std::copy(w.channel(0).begin(), w.channel(0).end(), st.channel(0).begin());
      std::copy(w.channel(0).begin(), w.channel(0).end(), st.channel(1).begin());
      w = std::move(st);
    }
    if (sample_rate > 0 && sample_rate != w.sample_rate()) w = resample(w, sample_rate);
    out.sources[i] = std::move(w);
  }
  return out;
}

std::vector<Segment> TrackDataset::segments() const {
  std::vector<Segment> out;
  if (segment_length == 0 || segment_stride == 0) return out;
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    const std::size_t frames = tracks[t].frames();
    for (std::size_t off = 0; off + segment_length <= frames; off += segment_stride)
      out.push_back({t, off});
  }
  return out;
}

SourceSet TrackDataset::segment(const Segment& s) const {
  return tracks.at(s.track).slice(s.offset, segment_length);
}

TrackDataset load_dataset(const fs::path& root, const DatasetOptions& options) {
  TrackDataset ds;
  ds.root = root;
  for (const auto& dir : list_track_dirs(root)) {
    SourceSet set = load_track_dir(dir);
    if (options.sample_rate > 0 || options.channels > 0)
      set = convert(set, options.sample_rate, options.channels);
    if (ds.tracks.empty()) {
      ds.sample_rate = set.sample_rate();
      ds.channels = set.channels();
    } else if (set.sample_rate() != ds.sample_rate || set.channels() != ds.channels) {
      throw DatasetError(dir.string() + ": rate/channels differ from the first track");
    }
    ds.track_names.push_back(dir.filename().string());
    ds.tracks.push_back(std::move(set));
  }
  const int rate = ds.tracks.empty() ? std::max(options.sample_rate, 1) : ds.sample_rate;
  ds.segment_length = static_cast<std::size_t>(std::llround(options.segment_seconds * rate));
  ds.segment_stride = static_cast<std::size_t>(std::llround(options.stride_seconds * rate));
  return ds;
}

}  // namespace dmx::audio
