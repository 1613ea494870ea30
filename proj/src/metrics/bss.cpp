// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dmx/metrics/bss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"

#include "dmx/error.hpp"

namespace dmx::metrics {
namespace {

double energy(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Solves G c = b for symmetric positive definite G (n x n, row-major).
std::vector<double> cholesky_solve(std::vector<double> g, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t j = 0; j < n; ++j) {
    double d = g[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= g[j * n + k] * g[j * n + k];
    if (!(d > 0.0)) throw NumericError("reference Gram matrix is not positive definite");
    const double l = std::sqrt(d);
    g[j * n + j] = l;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = g[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= g[i * n + k] * g[j * n + k];
      g[i * n + j] = s / l;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= g[i * n + k] * b[k];
    b[i] = s / g[i * n + i];
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= g[k * n + i] * b[k];
    b[i] = s / g[i * n + i];
  }
  return b;
}

double sum_squares(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return s;
}

}  // namespace

double relative_volume(std::span<const float> source, std::span<const float> mixture) {
  if (source.size() != mixture.size()) throw ShapeError("relative_volume: length mismatch");
  const double m = sum_squares(mixture);
  if (m == 0.0) throw NumericError("relative_volume: mixture is all zeros");
  const double s = sum_squares(source);
  if (s == 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(s / m);
}

double relative_volume(const audio::Waveform& source, const audio::Waveform& mixture) {
  if (!source.same_layout(mixture)) throw ShapeError("relative_volume: layout mismatch");
  return relative_volume(source.samples(), mixture.samples());
}

double ratio_db(double numerator, double denominator, double eps) {
  if (denominator <= eps) return kMetricCap;
  if (numerator <= 0.0) return -kMetricCap;
  return std::clamp(10.0 * std::log10(numerator / denominator), -kMetricCap, kMetricCap);
}

BssDecomposition bss_eval(std::span<const double> est, const std::vector<std::vector<double>>& refs,
                          std::size_t target) {
  const std::size_t n = refs.size(), len = est.size();
  if (target >= n) throw ContractError("bss_eval: target index out of range");
  for (const auto& r : refs)
    if (r.size() != len) throw ShapeError("bss_eval: estimate and references differ in length");
  const double target_energy = energy(refs[target]);
  if (target_energy == 0.0) throw NumericError("bss_eval: target reference is all zeros");

  std::vector<double> gram(n * n), rhs(n);
  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) gram[i * n + j] = gram[j * n + i] = dot(refs[i], refs[j]);
    rhs[i] = dot(refs[i], est);
    trace += gram[i * n + i];
  }
  for (std::size_t i = 0; i < n; ++i) gram[i * n + i] += 1e-10 * trace;
  const std::vector<double> coef = cholesky_solve(gram, rhs);

  BssDecomposition d;
  d.s_target.resize(len);
  d.e_interf.resize(len);
  d.e_artif.resize(len);
  const double a = rhs[target] / target_energy;
  for (std::size_t t = 0; t < len; ++t) {
    double proj = 0.0;
    for (std::size_t i = 0; i < n; ++i) proj += coef[i] * refs[i][t];
    d.s_target[t] = a * refs[target][t];
    d.e_interf[t] = proj - d.s_target[t];
    d.e_artif[t] = est[t] - proj;
  }

  const double eps = 1e-12 * energy(est);
  const double et = energy(d.s_target), ei = energy(d.e_interf), ea = energy(d.e_artif);
  double noise = 0.0, sig = 0.0;
  for (std::size_t t = 0; t < len; ++t) {
    noise += (d.e_interf[t] + d.e_artif[t]) * (d.e_interf[t] + d.e_artif[t]);
    sig += (d.s_target[t] + d.e_interf[t]) * (d.s_target[t] + d.e_interf[t]);
  }
  d.metrics.sdr = ratio_db(et, noise, eps);
  d.metrics.sir = ratio_db(et, ei, eps);
  d.metrics.sar = ratio_db(sig, ea, eps);
  return d;
}

TrackMetrics evaluate_track(const audio::SourceSet& estimate, const audio::SourceSet& reference, double frame_seconds,
                            const std::string& name) {
  for (std::size_t s = 0; s < audio::kNumSources; ++s)
    if (!estimate[s].same_layout(reference[s]) || !reference[s].same_layout(reference[0]))
      throw ShapeError("evaluate_track: estimate and reference layouts differ for " +
                       std::string(audio::kSourceNames[s]));
  if (!(frame_seconds > 0.0)) throw ContractError("evaluate_track: frame length must be positive");
  const std::size_t chans = reference.channels(), frames = reference.frames();
  const auto frame = static_cast<std::size_t>(std::llround(frame_seconds * reference.sample_rate()));
  if (frame == 0) throw ContractError("evaluate_track: frame shorter than one sample");
  const std::size_t count = frames / frame;

  TrackMetrics tm;
  tm.name = name;
  std::vector<std::vector<double>> refs(audio::kNumSources, std::vector<double>(chans * frame));
  std::vector<double> est(chans * frame);
  for (std::size_t f = 0; f < count; ++f) {
    for (std::size_t s = 0; s < audio::kNumSources; ++s)
      for (std::size_t c = 0; c < chans; ++c)
        for (std::size_t t = 0; t < frame; ++t) refs[s][c * frame + t] = reference[s].at(c, f * frame + t);
    for (std::size_t s = 0; s < audio::kNumSources; ++s) {
      FrameMetrics fm;
      if (energy(refs[s]) == 0.0) {
        fm.skipped = true;
      } else {
        for (std::size_t c = 0; c < chans; ++c)
          for (std::size_t t = 0; t < frame; ++t) est[c * frame + t] = estimate[s].at(c, f * frame + t);
        fm.metrics = bss_eval(est, refs, s).metrics;
      }
      tm.frames[s].push_back(fm);
    }
  }
  return tm;
}

double median(std::vector<double> v) {
  if (v.empty()) throw ContractError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

EvalReport aggregate(std::vector<TrackMetrics> tracks) {
  if (tracks.empty()) throw ContractError("aggregate needs at least one track");
  EvalReport r;
  r.tracks = std::move(tracks);
  using Getter = double BssMetrics::*;
  const std::array<Getter, 3> getters{&BssMetrics::sdr, &BssMetrics::sir, &BssMetrics::sar};
  const std::array<std::optional<double> MetricMedians::*, 3> slots{&MetricMedians::sdr, &MetricMedians::sir,
                                                                     &MetricMedians::sar};

  r.track_medians.resize(r.tracks.size());
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> all;
    for (std::size_t s = 0; s < audio::kNumSources; ++s) {
      std::vector<double> per_track;
      for (std::size_t t = 0; t < r.tracks.size(); ++t) {
        std::vector<double> vals;
        for (const auto& f : r.tracks[t].frames[s])
          if (!f.skipped) vals.push_back(f.metrics.*getters[k]);
        if (vals.empty()) continue;
        const double m = median(vals);
        r.track_medians[t][s].*slots[k] = m;
        per_track.push_back(m);
        all.push_back(m);
      }
      if (!per_track.empty()) r.source_medians[s].*slots[k] = median(per_track);
    }
    if (!all.empty()) r.all.*slots[k] = median(all);
  }
  return r;
}

std::string report_json(const EvalReport& report, const std::vector<std::pair<std::string, std::string>>& config) {
  using nlohmann::ordered_json;
  auto medians = [](const MetricMedians& m) {
    ordered_json j;
    j["sdr"] = m.sdr ? ordered_json(*m.sdr) : ordered_json(nullptr);
    j["sir"] = m.sir ? ordered_json(*m.sir) : ordered_json(nullptr);
    j["sar"] = m.sar ? ordered_json(*m.sar) : ordered_json(nullptr);
    return j;
  };
  ordered_json doc;
  doc["format"] = "dmx-eval";
  doc["version"] = 1;
  ordered_json cfg = ordered_json::object();
  for (const auto& [k, v] : config) cfg[k] = v;
  doc["config"] = cfg;
  doc["skip_rule"] = "frames whose reference source is all zeros are skipped";
  doc["metric_cap_db"] = kMetricCap;
  ordered_json tracks = ordered_json::array();
  for (std::size_t t = 0; t < report.tracks.size(); ++t) {
    ordered_json tj;
    tj["name"] = report.tracks[t].name;
    ordered_json sources;
    for (std::size_t s = 0; s < audio::kNumSources; ++s) {
      ordered_json sj;
      ordered_json sdr = ordered_json::array(), sir = ordered_json::array(), sar = ordered_json::array();
      std::size_t skipped = 0;
      for (const auto& f : report.tracks[t].frames[s]) {
        if (f.skipped) {
          ++skipped;
          sdr.push_back(nullptr);
          sir.push_back(nullptr);
          sar.push_back(nullptr);
        } else {
          sdr.push_back(f.metrics.sdr);
          sir.push_back(f.metrics.sir);
          sar.push_back(f.metrics.sar);
        }
      }
      sj["skipped_frames"] = skipped;
      sj["median"] = medians(report.track_medians[t][s]);
      sj["sdr"] = std::move(sdr);
      sj["sir"] = std::move(sir);
      sj["sar"] = std::move(sar);
      sources[std::string(audio::kSourceNames[s])] = std::move(sj);
    }
    tj["sources"] = std::move(sources);
    tracks.push_back(std::move(tj));
  }
  doc["tracks"] = std::move(tracks);
  ordered_json agg;
  for (std::size_t s = 0; s < audio::kNumSources; ++s)
    agg[std::string(audio::kSourceNames[s])] = medians(report.source_medians[s]);
  agg["all"] = medians(report.all);
  doc["aggregate"] = std::move(agg);
  return doc.dump(2) + "\n";
}

}  // namespace dmx::metrics
