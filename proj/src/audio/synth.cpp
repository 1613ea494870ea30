// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dmx/audio/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "dmx/error.hpp"
#include "dmx/rng.hpp"

namespace dmx::audio {
namespace {

constexpr double kTwoPi = 2.0 * M_PI;
constexpr double kTargetRms = 0.08;

using Signal = std::vector<double>;

Signal make_drums(Rng& rng, std::size_t n, double sr) {
  Signal out(n, 0.0);
  const double period = rng.uniform(0.2, 0.32);
  double t_hit = rng.uniform(0.0, period);
  const double bright_hz = std::min(3000.0, 0.35 * sr);
  // Two-pole resonator coefficients for the bright hits.
  const double r = 0.97;
  const double theta = kTwoPi * bright_hz / sr;
  const double a1 = 2.0 * r * std::cos(theta), a2 = -r * r;
  int k = 0;
  while (t_hit < n / sr) {
    const bool kick = (k % 2) == 0;
    const double tau = kick ? 0.06 : 0.035;
    const double gain = kick ? 1.0 : 0.8;
    const auto start = static_cast<std::size_t>(t_hit * sr);
    const auto len = static_cast<std::size_t>(5.0 * tau * sr);
    double y1 = 0.0, y2 = 0.0, lp = 0.0;
    for (std::size_t i = 0; i < len && start + i < n; ++i) {
      const double noise = rng.uniform(-1.0, 1.0);
      double v;
      if (kick) {
        lp = 0.85 * lp + 0.15 * noise;
        v = 3.0 * lp;
      } else {
        v = noise + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = v;
        v *= 0.1;
      }
      out[start + i] += gain * v * std::exp(-static_cast<double>(i) / (tau * sr));
    }
    t_hit += period;
    ++k;
  }
  return out;
}

// Sum of harmonics of a piecewise-constant pitch track, phase continuous.
template <typename PitchFn, typename AmpFn>
Signal harmonic_line(std::size_t n, double sr, int harmonics, PitchFn pitch, AmpFn harmonic_amp) {
  Signal out(n, 0.0);
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = i / sr;
    const double f = pitch(t);
    double v = 0.0;
    for (int h = 1; h <= harmonics; ++h) {
      if (h * f >= 0.45 * sr) break;
      v += harmonic_amp(h) * std::sin(h * phase);
    }
    out[i] = v;
    phase = std::fmod(phase + kTwoPi * f / sr, kTwoPi * 64.0);
  }
  return out;
}

Signal make_bass(Rng& rng, std::size_t n, double sr) {
  const double note_len = rng.uniform(0.5, 1.0);
  const std::size_t notes = static_cast<std::size_t>(n / sr / note_len) + 2;
  std::vector<double> pitches(notes);
  for (auto& p : pitches) p = rng.uniform(40.0, 120.0);
  return harmonic_line(
      n, sr, 4, [&](double t) { return pitches[static_cast<std::size_t>(t / note_len)]; },
      [](int h) { return 1.0 / h; });
}

Signal make_vocals(Rng& rng, std::size_t n, double sr) {
  const double note_len = rng.uniform(0.6, 0.9);
  const double vib_rate = rng.uniform(4.5, 6.5);
  const double vib_depth = rng.uniform(0.015, 0.03);
  const std::size_t notes = static_cast<std::size_t>(n / sr / note_len) + 2;
  std::vector<double> pitches(notes);
  for (auto& p : pitches) p = rng.uniform(300.0, 700.0);
  Signal s = harmonic_line(
      n, sr, 3,
      [&](double t) {
        return pitches[static_cast<std::size_t>(t / note_len)] *
               (1.0 + vib_depth * std::sin(kTwoPi * vib_rate * t));
      },
      [](int h) { return h == 1 ? 1.0 : (h == 2 ? 0.4 : 0.2); });
  // Slow phrasing envelope that never drops below 0.6.
  const double env_rate = rng.uniform(0.2, 0.5);
  for (std::size_t i = 0; i < n; ++i) s[i] *= 0.8 + 0.2 * std::sin(kTwoPi * env_rate * i / sr);
  return s;
}

Signal make_other(Rng& rng, std::size_t n, double sr) {
  const double chord_len = 2.0;
  const std::size_t chords = static_cast<std::size_t>(n / sr / chord_len) + 2;
  std::vector<double> roots(chords);
  for (auto& r : roots) r = rng.uniform(150.0, 300.0);
  Signal out(n, 0.0);
  for (double ratio : {1.0, 1.25, 1.5}) {
    Signal voice = harmonic_line(
        n, sr, 3, [&](double t) { return ratio * roots[static_cast<std::size_t>(t / chord_len)]; },
        [](int h) { return h == 1 ? 1.0 : (h == 2 ? 0.5 : 0.3); });
    for (std::size_t i = 0; i < n; ++i) out[i] += voice[i];
  }
  return out;
}

void normalize_rms(Signal& s, double target) {
  double e = 0.0;
  for (double v : s) e += v * v;
  const double rms = std::sqrt(e / std::max<std::size_t>(s.size(), 1));
  if (rms <= 0.0) return;
  for (double& v : s) v *= target / rms;
}

}  // namespace

SourceSet synth_track(const SynthOptions& options, std::size_t track) {
  if (options.duration_s < 6.0) throw ContractError("synth: duration must be at least 6 s");
  if (options.sample_rate <= 0) throw ContractError("synth: sample rate must be positive");
  if (options.channels < 1 || options.channels > 2) throw ContractError("synth: 1 or 2 channels");

  const double sr = options.sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(options.duration_s * sr));
  Rng rng = Rng::derive(options.seed, track);

  std::array<Signal, kNumSources> raw;
  raw[0] = make_drums(rng, n, sr);
  raw[1] = make_bass(rng, n, sr);
  raw[2] = make_other(rng, n, sr);
  raw[3] = make_vocals(rng, n, sr);

  std::array<double, kNumSources> pan{};
  for (std::size_t i = 0; i < kNumSources; ++i) {
    normalize_rms(raw[i], kTargetRms * std::pow(10.0, rng.uniform(-2.0, 2.0) / 20.0));
    pan[i] = rng.uniform(0.25, 0.75);
  }

  for (const auto& iv : options.silence_plan) {
    if (iv.track != track) continue;
    if (iv.source >= kNumSources) throw ContractError("silence plan: bad source index");
    const auto a = static_cast<std::size_t>(std::clamp(std::llround(iv.start_s * sr), 0LL, static_cast<long long>(n)));
    const auto b = static_cast<std::size_t>(std::clamp(std::llround(iv.end_s * sr), 0LL, static_cast<long long>(n)));
    for (std::size_t i = a; i < b; ++i) raw[iv.source][i] = 0.0;
  }

  // Keep the mixture peak below 0.95.
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0.0;
    for (std::size_t s = 0; s < kNumSources; ++s) m += std::abs(raw[s][i]);
    peak = std::max(peak, m);
  }
  const double headroom = peak > 0.95 ? 0.95 / peak : 1.0;

  SourceSet set;
  for (std::size_t s = 0; s < kNumSources; ++s) {
    Waveform w(options.channels, n, options.sample_rate);
    for (std::size_t c = 0; c < options.channels; ++c) {
      double g = headroom;
      if (options.channels == 2)
        g *= std::sqrt(2.0) * (c == 0 ? std::cos(pan[s] * M_PI / 2) : std::sin(pan[s] * M_PI / 2)) *
             std::sqrt(0.5);
      auto ch = w.channel(c);
      for (std::size_t i = 0; i < n; ++i) ch[i] = static_cast<float>(g * raw[s][i]);
    }
    set.sources[s] = std::move(w);
  }
  return set;
}

TrackDataset synth_corpus(const std::filesystem::path& root, const SynthOptions& options) {
  for (std::size_t t = 0; t < options.n_tracks; ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "track_%03zu", t);
    write_track_dir(root / name, synth_track(options, t));
  }
  return load_dataset(root, {});
}

SilencePlan random_silence_plan(std::uint64_t seed, std::size_t n_tracks, double duration_s,
                                const SilencePlanOptions& options) {
  SilencePlan plan;
  if (options.sources.empty()) return plan;
  Rng rng = Rng::derive(seed, 0x5113ull);
  const double lo = 0.5, hi = duration_s - 0.5;
  for (std::size_t t = 0; t < n_tracks; ++t) {
    const double whole = std::floor(options.intervals_per_track);
    const auto count =
        static_cast<std::size_t>(whole) + (rng.bernoulli(options.intervals_per_track - whole) ? 1 : 0);
    std::size_t placed = 0;
    for (int attempt = 0; attempt < 50 && placed < count; ++attempt) {
      const std::size_t src = options.sources[rng.below(options.sources.size())];
      const double len = std::min(rng.uniform(options.min_seconds, options.max_seconds), hi - lo);
      if (len <= 0.0) break;
      const double start = rng.uniform(lo, hi - len);
      SilenceInterval iv{t, src, start, start + len};
      const bool clash = std::any_of(plan.begin(), plan.end(), [&](const SilenceInterval& o) {
        return o.track == t && o.source == src && o.start_s < iv.end_s && iv.start_s < o.end_s;
      });
      if (clash) continue;
      plan.push_back(iv);
      ++placed;
    }
  }
  return plan;
}

}  // namespace dmx::audio
