// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <vector>

#include "doctest.h"
#include "dmx/audio/dataset.hpp"
#include "dmx/audio/synth.hpp"
#include "dmx/audio/wav.hpp"
#include "dmx/error.hpp"
#include "dmx/extract/extract.hpp"
#include "test_util.hpp"

using namespace dmx;
using namespace dmx::extract;
using detector::SourceSeries;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Brute-force precision of {P >= p} against V <= -20 on one source.
std::pair<double, std::size_t> precision_at(const std::vector<CalibrationTrack>& tracks, std::size_t s, double p) {
  std::size_t sel = 0, good = 0;
  for (const auto& t : tracks)
    for (std::size_t w = 0; w < t.volumes[s].size(); ++w)
      if (t.probabilities[s][w] >= p) {
        ++sel;
        good += t.volumes[s][w] <= -20.0 ? 1 : 0;
      }
  return {sel ? static_cast<double>(good) / static_cast<double>(sel) : 0.0, sel};
}

CalibrationTrack oracle_track(const SourceSeries& volumes) {
  CalibrationTrack t{{}, volumes};
  for (std::size_t s = 0; s < 4; ++s)
    for (double v : volumes[s]) t.probabilities[s].push_back(v <= -20.0 ? 1.0 : 0.0);
  return t;
}

SourceSeries random_volumes(Rng& rng, std::size_t windows) {
  SourceSeries v;
  for (auto& series : v)
    for (std::size_t w = 0; w < windows; ++w) series.push_back(rng.bernoulli(0.3) ? kNegInf : rng.uniform(-40.0, 0.0));
  return v;
}

ThresholdCalibration all_thresholds(double p) {
  ThresholdCalibration c;
  for (auto& s : c.sources) s.threshold = p;
  return c;
}

}  // namespace

TEST_CASE("calibration with an oracle and an uninformative detector") {
  Rng rng(1);
  std::vector<CalibrationTrack> oracle, flat;
  for (int i = 0; i < 3; ++i) {
    auto v = random_volumes(rng, 100);
    oracle.push_back(oracle_track(v));
    CalibrationTrack f{{}, v};
    for (auto& p : f.probabilities) p.assign(100, 0.5);
    flat.push_back(f);
  }
  auto cal = calibrate_thresholds(oracle);
  auto none = calibrate_thresholds(flat);
  for (std::size_t s = 0; s < 4; ++s) {
    REQUIRE(cal.sources[s].threshold.has_value());
    CHECK(*cal.sources[s].threshold == 1.0);
    CHECK(cal.sources[s].precision == 1.0);
    CHECK(cal.sources[s].windows == 300);
    CHECK_FALSE(none.sources[s].threshold.has_value());
  }
  CHECK_THROWS_AS(calibrate_thresholds(std::vector<CalibrationTrack>{}), ContractError);

  // Too few qualifying windows.
  std::vector<CalibrationTrack> small{oracle_track(random_volumes(rng, 40))};
  for (auto& s : calibrate_thresholds(small).sources) CHECK_FALSE(s.threshold.has_value());
}

TEST_CASE("calibrated threshold is the smallest meeting the precision rule") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<CalibrationTrack> tracks;
    for (int i = 0; i < 4; ++i) {
      CalibrationTrack t{{}, random_volumes(rng, 150)};
      for (std::size_t s = 0; s < 4; ++s)
        for (double v : t.volumes[s]) {
          // Noisy score that rises as the volume drops; quantized to force ties.
          const double base = v == kNegInf ? 0.9 : (v <= -20.0 ? 0.6 : 0.3);
          t.probabilities[s].push_back(std::round((base + rng.uniform(-0.3, 0.3)) * 50.0) / 50.0);
        }
      tracks.push_back(t);
    }
    auto cal = calibrate_thresholds(tracks);
    for (std::size_t s = 0; s < 4; ++s) {
      std::set<double> candidates;
      for (const auto& t : tracks) candidates.insert(t.probabilities[s].begin(), t.probabilities[s].end());
      std::optional<double> smallest;
      for (double p : candidates) {
        auto [prec, sel] = precision_at(tracks, s, p);
        if (sel >= 50 && prec >= 0.95) {
          smallest = p;
          break;
        }
      }
      REQUIRE(cal.sources[s].threshold.has_value() == smallest.has_value());
      if (!smallest) continue;
      CHECK(*cal.sources[s].threshold == *smallest);
      auto [prec, sel] = precision_at(tracks, s, *smallest);
      CHECK(prec >= 0.95);
      CHECK(cal.sources[s].precision == prec);
      CHECK(cal.sources[s].selected == sel);
    }
  }
}

TEST_CASE("precision is monotone in the threshold when scores are monotone in volume") {
  Rng rng(3);
  std::vector<CalibrationTrack> tracks;
  for (int i = 0; i < 3; ++i) {
    CalibrationTrack t{{}, random_volumes(rng, 120)};
    for (std::size_t s = 0; s < 4; ++s)
      for (double v : t.volumes[s]) t.probabilities[s].push_back(v == kNegInf ? 1.0 : 1.0 / (1.0 + std::exp(v / 5.0 + 4.0)));
    tracks.push_back(t);
  }
  for (std::size_t s = 0; s < 4; ++s) {
    std::set<double> sweep;
    for (const auto& t : tracks) sweep.insert(t.probabilities[s].begin(), t.probabilities[s].end());
    double previous = -1.0;
    for (double p : sweep) {
      const double prec = precision_at(tracks, s, p).first;
      CHECK(prec >= previous);
      previous = prec;
    }
  }
}

TEST_CASE("threshold file round trip") {
  testing::TempDir dir("thresholds");
  ThresholdCalibration c;
  c.sources[0] = {0.8125, 0.97, 120, 900};
  c.sources[1] = {std::nullopt, 0.0, 0, 900};
  c.sources[2] = {1.0 / 3.0, 1.0, 55, 900};
  c.sources[3] = {0.5, 0.951, 300, 900};
  save_thresholds(dir / "t.tsv", c, {{"seed", "3"}});
  auto r = load_thresholds(dir / "t.tsv");
  for (std::size_t s = 0; s < 4; ++s) {
    CHECK(r.sources[s].threshold == c.sources[s].threshold);
    CHECK(r.sources[s].precision == c.sources[s].precision);
    CHECK(r.sources[s].selected == c.sources[s].selected);
    CHECK(r.sources[s].windows == c.sources[s].windows);
  }
  std::ofstream(dir / "bad.tsv") << "drums\t0.5\n";
  CHECK_THROWS_AS(load_thresholds(dir / "bad.tsv"), FormatError);
}

TEST_CASE("runs shorter than five seconds are dropped, longer runs kept whole") {
  const int rate = 16000;
  audio::Waveform track(1, 40 * rate, rate);
  const std::size_t windows = detector::window_count(track.frames(), rate);
  for (std::size_t run : {67u, 69u, 70u, 178u}) {
    SourceSeries p;
    for (auto& s : p) s.assign(windows, 0.0);
    for (std::size_t w = 10; w < 10 + run; ++w) p[1][w] = 0.9;
    auto ex = extract_silent_segments(p, all_thresholds(0.5), track, "t");
    const double span = (0.64 + 0.064 * static_cast<double>(run - 1));
    if (span < 5.0) {
      CHECK(ex.empty());
      continue;
    }
    REQUIRE(ex.size() == 1);
    CHECK(ex[0].source == 1);
    CHECK(ex[0].start == 10 * 1024);
    CHECK(ex[0].end - ex[0].start == (run - 1) * 1024 + 10240);
    CHECK(ex[0].seconds() == doctest::Approx(span));
    CHECK(ex[0].audio.frames() == ex[0].end - ex[0].start);
    CHECK(ex[0].mean_probability == doctest::Approx(0.9));
  }
  CHECK(qualifying_runs({0.1, 0.6, 0.7, 0.2, 0.9}, 0.5) ==
        std::vector<std::pair<std::size_t, std::size_t>>{{1, 2}, {4, 4}});

  // A source without a threshold yields nothing.
  SourceSeries p;
  for (auto& s : p) s.assign(windows, 1.0);
  ThresholdCalibration partial = all_thresholds(0.5);
  partial.sources[2].threshold.reset();
  for (const auto& e : extract_silent_segments(p, partial, track, "t")) CHECK(e.source != 2);
  p[0].pop_back();
  CHECK_THROWS_AS(extract_silent_segments(p, partial, track, "t"), ShapeError);
}

TEST_CASE("planted silence is recovered within one hop by an oracle detector") {
  audio::SynthOptions o;
  o.seed = 5;
  o.n_tracks = 1;
  o.duration_s = 20.0;
  o.sample_rate = 44100;
  o.silence_plan = {{0, 1, 6.0, 14.0}};
  const auto set = audio::synth_track(o, 0);
  const auto v = detector::window_volumes(set);
  SourceSeries p;
  for (std::size_t s = 0; s < 4; ++s)
    for (double x : v[s]) p[s].push_back(x <= -20.0 ? 1.0 : 0.0);
  auto ex = extract_silent_segments(p, all_thresholds(0.5), set.mixture(), "t");
  std::size_t bass = 0;
  for (const auto& e : ex) {
    if (e.source != 1) continue;
    ++bass;
    const double hop = 0.064 * o.sample_rate;
    CHECK(std::abs(static_cast<double>(e.start) - 6.0 * o.sample_rate) <= hop);
    CHECK(std::abs(static_cast<double>(e.end) - 14.0 * o.sample_rate) <= hop);
    CHECK(e.audio.channels() == 2);
  }
  CHECK(bass == 1);
}

TEST_CASE("unlabeled sets: manifests, files and failures") {
  testing::TempDir corpus("corpus"), out("sets"), empty("empty");
  detector::DetectorModel model = detector::new_detector(detector::DetectorConfig::desk(), 1);

  auto none = build_unlabeled_sets(model, all_thresholds(0.0), empty.path(), out / "e");
  CHECK(none.tracks == 0);
  for (std::size_t s = 0; s < 4; ++s) {
    CHECK(std::filesystem::exists(manifest_path(out / "e", s)));
    CHECK(read_manifest(manifest_path(out / "e", s)).empty());
  }

  audio::SynthOptions o;
  o.seed = 6;
  o.n_tracks = 2;
  o.duration_s = 8.0;
  o.sample_rate = 22050;
  audio::synth_corpus(corpus.path(), o);
  std::filesystem::create_directories(corpus / "zz_broken");
  std::ofstream(corpus / "zz_broken" / "mixture.wav") << "not a wav";

  ThresholdCalibration th = all_thresholds(0.0);
  th.sources[2].threshold.reset();
  BuildOptions bo;
  bo.workers = 2;
  bo.config = {{"seed", "6"}};
  auto sets = build_unlabeled_sets(model, th, corpus.path(), out / "d", bo);
  CHECK(sets.tracks == 3);
  CHECK(sets.failures == 1);
  for (std::size_t s = 0; s < 4; ++s) {
    const auto rows = read_manifest(manifest_path(out / "d", s));
    std::size_t files = 0;
    for (const auto& e : std::filesystem::directory_iterator(out / "d" / ("D_" + std::string(audio::kSourceNames[s]))))
      files += e.path().extension() == ".wav" ? 1 : 0;
    CHECK(rows.size() == files);
    CHECK(rows.size() == (s == 2 ? 0u : 2u));
    for (const auto& r : rows) {
      const auto w = audio::read_wav(out / "d" / r.path);
      CHECK(w.frames() == r.end - r.start);
      CHECK(static_cast<double>(r.end - r.start) >= 5.0 * o.sample_rate);
      CHECK(r.mean_probability >= 0.0);
    }
    CHECK(load_unlabeled_set(out / "d", s).size() == rows.size());
  }

  // Same inputs, same bytes, regardless of worker count.
  bo.workers = 1;
  build_unlabeled_sets(model, th, corpus.path(), out / "d1", bo);
  for (std::size_t s = 0; s < 4; ++s)
    CHECK(testing::file_bytes(manifest_path(out / "d", s)) == testing::file_bytes(manifest_path(out / "d1", s)));
}
