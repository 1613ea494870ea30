// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Acceptance run: one PASS/FAIL line per criterion. Exit status is 0 when
// every criterion was evaluated (red or green) and 2 when one could not be
// evaluated; with --strict any red criterion also exits 1.
//
//   dmx_acceptance [--only 1,5,7] [--strict] [--dmx path/to/dmx]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dmx/audio/synth.hpp"
#include "dmx/autodiff/adam.hpp"
#include "dmx/detector/detector.hpp"
#include "dmx/error.hpp"
#include "dmx/extract/extract.hpp"
#include "dmx/log.hpp"
#include "dmx/metrics/bss.hpp"
#include "dmx/train/trainer.hpp"
#include "grad_check.hpp"
#include "metrics_oracle.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace dmx;
using ad::Tensor;
using testing::grad_check;
using testing::rand_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Clock {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ------------------------------------------------------------ shared setups

constexpr int kOverfitRate = 8000;

audio::TrackDataset overfit_data(double stride_s) {
  audio::SynthOptions o;
  o.seed = 1;
  o.n_tracks = 2;
  o.duration_s = 30.0;
  o.sample_rate = kOverfitRate;
  o.channels = 1;
  audio::TrackDataset ds;
  for (std::size_t t = 0; t < o.n_tracks; ++t) {
    ds.tracks.push_back(audio::synth_track(o, t));
    ds.track_names.push_back("overfit_" + std::to_string(t));
  }
  ds.sample_rate = kOverfitRate;
  ds.channels = 1;
  ds.segment_length = 5 * kOverfitRate;
  ds.segment_stride = static_cast<std::size_t>(std::llround(stride_s * kOverfitRate));
  return ds;
}

model::ModelConfig overfit_model() {
  model::ModelConfig c;
  c.depth = 2;
  c.initial_channels = 4;
  c.input_channels = 1;
  c.sample_rate = kOverfitRate;
  return c;
}

train::TrainConfig overfit_train(int epochs, std::uint64_t seed) {
  train::TrainConfig t;
  t.epochs = epochs;
  t.batch = 1;
  t.lr = 3e-3;
  t.augment = false;
  t.seed = seed;
  return t;
}

// Summed per-source L1 over whole training tracks, averaged over tracks.
double train_set_l1(const model::Model& m, const audio::TrackDataset& ds) {
  ad::NoGradGuard ng;
  double total = 0.0;
  for (const auto& track : ds.tracks) {
    const auto batch = train::make_batch({track}, m.config);
    total += train::separation_loss(train::estimate(m, batch), batch.sources).values()[0];
  }
  return total / static_cast<double>(ds.tracks.size());
}

// Short directional protocol: same data and optimizer as the overfit oracle,
// fewer epochs on a coarser segment grid.
constexpr int kShortEpochs = 10;
constexpr double kShortStride = 2.5;

double short_run(const model::ModelConfig& c, std::uint64_t seed, const audio::TrackDataset& ds) {
  model::Model m = model::new_model(c, seed);
  train::run_training(m, ds, overfit_train(kShortEpochs, seed));
  return train_set_l1(m, ds);
}

// ------------------------------------------------------------ criteria

Outcome gradient_suite() {
  Clock clock;
  Rng rng(101);
  // Central-difference step cbrt(float32 epsilon): balances truncation and rounding error.
  const float h = std::cbrt(std::numeric_limits<float>::epsilon());
  std::vector<std::pair<std::string, double>> errs;
  auto run = [&](const std::string& name, const testing::Fn& f, std::vector<Tensor> in) {
    errs.emplace_back(name, grad_check(f, std::move(in), 7, h));
  };
  run("conv1d", [](auto& in) { return ad::conv1d(in[0], in[1], in[2], 4); },
      {rand_tensor(rng, {2, 3, 29}), rand_tensor(rng, {4, 3, 8}), rand_tensor(rng, {4})});
  run("conv1d_same", [](auto& in) { return ad::conv1d(in[0], in[1], in[2], 1, 1); },
      {rand_tensor(rng, {2, 4, 16}), rand_tensor(rng, {4, 4, 3}), rand_tensor(rng, {4})});
  run("conv_transpose1d", [](auto& in) { return ad::conv_transpose1d(in[0], in[1], in[2], 4); },
      {rand_tensor(rng, {2, 3, 6}), rand_tensor(rng, {3, 2, 8}), rand_tensor(rng, {2})});
  run("glu", [](auto& in) { return ad::glu(in[0], 1); }, {rand_tensor(rng, {2, 6, 5}, -2, 2)});
  run("relu", [](auto& in) { return ad::relu(in[0]); }, {testing::rand_away_from_zero(rng, {5, 6})});
  run("sigmoid", [](auto& in) { return ad::sigmoid(in[0]); }, {rand_tensor(rng, {5, 6}, -3, 3)});
  run("tanh", [](auto& in) { return ad::tanh(in[0]); }, {rand_tensor(rng, {5, 6}, -2, 2)});
  const std::size_t hid = 3, inp = 2;
  run("bilstm",
      [](auto& in) {
        return ad::bilstm(in[0], {{{in[1], in[2], in[3]}, {in[4], in[5], in[6]}},
                                  {{in[7], in[8], in[9]}, {in[10], in[11], in[12]}}});
      },
      {rand_tensor(rng, {4, 2, inp}), rand_tensor(rng, {4 * hid, inp}), rand_tensor(rng, {4 * hid, hid}),
       rand_tensor(rng, {4 * hid}), rand_tensor(rng, {4 * hid, inp}), rand_tensor(rng, {4 * hid, hid}),
       rand_tensor(rng, {4 * hid}), rand_tensor(rng, {4 * hid, 2 * hid}), rand_tensor(rng, {4 * hid, hid}),
       rand_tensor(rng, {4 * hid}), rand_tensor(rng, {4 * hid, 2 * hid}), rand_tensor(rng, {4 * hid, hid}),
       rand_tensor(rng, {4 * hid})});
  run("l1_loss", [](auto& in) { return ad::l1_loss(in[0], in[1]); },
      {rand_tensor(rng, {3, 4}, 0.5, 1.0), rand_tensor(rng, {3, 4}, -1.0, 0.2)});
  run("mse_loss", [](auto& in) { return ad::mse_loss(in[0], in[1]); },
      {rand_tensor(rng, {3, 4}), rand_tensor(rng, {3, 4})});
  run("bce_with_logits", [](auto& in) { return ad::bce_with_logits(in[0], in[1]); },
      {rand_tensor(rng, {3, 4}, -4, 4), rand_tensor(rng, {3, 4}, 0, 1)});

  for (bool glu : {true, false})
    for (bool lstm : {true, false}) {
      model::ModelConfig c;
      c.depth = 2;
      c.input_channels = 1;
      c.initial_channels = 2;
      c.lstm_layers = 1;
      c.use_glu = glu;
      c.use_bilstm = lstm;
      c.sample_rate = 8000;
      model::Model m = model::new_model(c, 21);
      const Tensor x = rand_tensor(rng, {2, 1, model::valid_length(30, c)}, -0.5, 0.5);
      std::vector<Tensor> inputs;
      for (ad::Param* p : m.params()) inputs.push_back(p->tensor);
      run(std::string("tiny_model") + (glu ? "" : "_noglu") + (lstm ? "" : "_nolstm"),
          [&](const std::vector<Tensor>&) { return model::forward(m, x); }, inputs);
    }

  double worst = 0.0;
  std::string worst_name;
  for (const auto& [n, e] : errs)
    if (e > worst) {
      worst = e;
      worst_name = n;
    }
  const double secs = clock.seconds();
  return {worst < 1e-3 && secs < 60.0, std::to_string(errs.size()) + " checks; worst " + worst_name + " " +
                                           fmt("%.2e", worst) + " (< 1e-3); " + fmt("%.1f", secs) + " s (< 60)"};
}

Outcome metric_oracle() {
  Rng rng(202);
  double worst_metric = 0.0, worst_identity = 0.0, worst_orth = 0.0, worst_scale = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t len = 16 + rng.below(241);
    std::vector<std::vector<double>> refs(4, std::vector<double>(len));
    for (auto& r : refs)
      for (auto& v : r) v = rng.normal();
    const std::size_t j = rng.below(4);
    std::vector<double> est(len);
    const double a = rng.uniform(0.2, 1.5), b = rng.uniform(-0.5, 0.5), n = rng.uniform(0.01, 0.8);
    for (std::size_t t = 0; t < len; ++t) est[t] = a * refs[j][t] + b * refs[(j + 1) % 4][t] + n * rng.normal();

    const auto d = metrics::bss_eval(est, refs, j);
    const auto o = testing::bss_oracle(est, refs, j);
    worst_metric = std::max({worst_metric, std::abs(d.metrics.sdr - o.sdr), std::abs(d.metrics.sir - o.sir),
                             std::abs(d.metrics.sar - o.sar)});

    double dev = 0.0, ne = 0.0, ti = 0.0, pa = 0.0, nt = 0.0, ni = 0.0, na = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
      const double sum = d.s_target[t] + d.e_interf[t] + d.e_artif[t];
      dev += (sum - est[t]) * (sum - est[t]);
      ne += est[t] * est[t];
      ti += d.s_target[t] * d.e_interf[t];
      pa += (d.s_target[t] + d.e_interf[t]) * d.e_artif[t];
      nt += d.s_target[t] * d.s_target[t];
      ni += d.e_interf[t] * d.e_interf[t];
      na += d.e_artif[t] * d.e_artif[t];
    }
    worst_identity = std::max(worst_identity, std::sqrt(dev / ne));
    worst_orth = std::max({worst_orth, std::abs(ti) / std::sqrt(nt * ni), std::abs(pa) / std::sqrt((nt + ni) * na)});

    std::vector<double> scaled(est);
    const double alpha = std::exp(rng.uniform(-5.0, 5.0));
    for (auto& v : scaled) v *= alpha;
    const auto s = metrics::bss_eval(scaled, refs, j).metrics;
    worst_scale = std::max({worst_scale, std::abs(s.sdr - d.metrics.sdr), std::abs(s.sir - d.metrics.sir),
                            std::abs(s.sar - d.metrics.sar)});
  }
  const bool pass = worst_metric < 1e-6 && worst_identity < 1e-5 && worst_orth < 1e-5 && worst_scale < 1e-6;
  return {pass, "1000 instances; oracle gap " + fmt("%.2e", worst_metric) + " dB; identity " +
                    fmt("%.2e", worst_identity) + "; orthogonality " + fmt("%.2e", worst_orth) + "; scale " +
                    fmt("%.2e", worst_scale) + " dB"};
}

model::Model& full_model() {
  static model::Model m = model::new_model(model::ModelConfig{}, 303);
  return m;
}

Outcome architecture_algebra() {
  const model::ModelConfig c;
  std::vector<int> ladder;
  for (int i = 0; i <= c.depth; ++i) ladder.push_back(c.channels(i));
  const bool ladder_ok = ladder == std::vector<int>{2, 48, 96, 192, 384, 768, 1536};

  bool lengths_ok = true;
  for (std::size_t t = 1; t <= 10000; ++t) {
    const std::size_t v = model::valid_length(t, c);
    lengths_ok = lengths_ok && v >= t && model::valid_length(v, c) == v;
  }

  const model::Model& m = full_model();
  Rng rng(304);
  std::size_t shapes_ok = 0;
  ad::NoGradGuard ng;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + rng.below(2);
    const std::size_t t = model::valid_length(1 + rng.below(10000), c);
    const Tensor y = model::forward(m, rand_tensor(rng, {b, 2, t}, -0.5, 0.5));
    shapes_ok += y.shape() == ad::Shape{b, 4, 2, t} ? 1 : 0;
  }
  std::ostringstream d;
  d << "ladder";
  for (int x : ladder) d << ' ' << x;
  d << "; valid_length " << (lengths_ok ? "idempotent and >= T" : "VIOLATED") << " on 1..10000; " << shapes_ok
    << "/100 forward shapes (B,4,2,T)";
  return {ladder_ok && lengths_ok && shapes_ok == 100, d.str()};
}

Outcome weight_rescaling() {
  // (a) stored convolution weight spread with the default config.
  double worst_std = 0.0;
  std::size_t convs = 0;
  for (ad::Param* p : full_model().params()) {
    if (!p->rescalable || p->tensor.shape().size() != 3) continue;
    ++convs;
    worst_std = std::max(worst_std, std::abs(ad::tensor_std(p->tensor) - 0.1));
  }
  const bool std_ok = worst_std <= 1e-3;

  // (b) outputs with and without rescaling.
  model::ModelConfig c = overfit_model();
  c.initial_channels = 8;
  model::ModelConfig plain = c;
  plain.rescale_reference = 0.0;
  const model::Model a = model::new_model(c, 42), p = model::new_model(plain, 42);
  Rng rng(401);
  const Tensor x = rand_tensor(rng, {2, 1, model::valid_length(4000, c)}, -0.5, 0.5);
  double rel;
  {
    ad::NoGradGuard ng;
    const Tensor ya = model::forward(a, x), yp = model::forward(p, x);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ya.numel(); ++i) {
      num += std::pow(static_cast<double>(ya.values()[i]) - yp.values()[i], 2);
      den += std::pow(static_cast<double>(yp.values()[i]), 2);
    }
    rel = std::sqrt(num / den);
  }
  const bool forward_ok = rel < 1e-5;

  // (c) training loss with and without rescaling, five seeds.
  const auto ds = overfit_data(kShortStride);
  model::ModelConfig off = overfit_model();
  off.rescale_reference = 0.0;
  int wins = 0;
  std::ostringstream runs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const double lr = short_run(overfit_model(), seed, ds), lu = short_run(off, seed, ds);
    wins += lr < lu ? 1 : 0;
    runs << (seed > 1 ? " " : "") << fmt("%.4f", lr) << '/' << fmt("%.4f", lu);
  }
  const bool training_ok = wins >= 4;
  return {std_ok && forward_ok && training_ok,
          "stored conv std max |std-0.1| " + fmt("%.4f", worst_std) + " over " + std::to_string(convs) +
              " tensors (<= 1e-3: " + (std_ok ? "ok" : "no") + "); forward rel diff " + fmt("%.2e", rel) +
              "; rescaled lower loss in " + std::to_string(wins) + "/5 seeds (rescaled/plain " + runs.str() + ")"};
}

Outcome overfit_oracle() {
  Clock clock;
  const auto ds = overfit_data(1.0);
  model::Model m = model::new_model(overfit_model(), 1);
  const double initial = train_set_l1(m, ds);
  train::run_training(m, ds, overfit_train(200, 1));
  const double final_l1 = train_set_l1(m, ds);
  std::vector<metrics::TrackMetrics> tracks;
  for (std::size_t t = 0; t < ds.tracks.size(); ++t)
    tracks.push_back(metrics::evaluate_track(model::separate(m, ds.tracks[t].mixture()), ds.tracks[t], 1.0,
                                             ds.track_names[t]));
  const auto report = metrics::aggregate(tracks);
  bool sdr_ok = true;
  std::ostringstream d;
  d << "SDR";
  for (std::size_t s = 0; s < audio::kNumSources; ++s) {
    const double v = report.source_medians[s].sdr.value_or(-metrics::kMetricCap);
    sdr_ok = sdr_ok && v > 10.0;
    d << ' ' << audio::kSourceNames[s] << ' ' << fmt("%.2f", v);
  }
  const double secs = clock.seconds();
  const bool l1_ok = final_l1 < 0.1 * initial;
  d << " (> 10 dB each); L1 " << fmt("%.4f", final_l1) << " vs initial " << fmt("%.4f", initial) << " ("
    << fmt("%.1f", 100.0 * final_l1 / initial) << "%, < 10%); " << fmt("%.0f", secs) << " s (< 600)";
  return {sdr_ok && l1_ok && secs < 600.0, d.str()};
}

Outcome ablation_direction() {
  const auto ds = overfit_data(kShortStride);
  model::ModelConfig no_glu = overfit_model(), no_lstm = overfit_model();
  no_glu.use_glu = false;
  no_lstm.use_bilstm = false;
  int glu_better = 0, lstm_better = 0;
  std::ostringstream runs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const double full = short_run(overfit_model(), seed, ds);
    const double g = short_run(no_glu, seed, ds), l = short_run(no_lstm, seed, ds);
    glu_better += g < full ? 1 : 0;
    lstm_better += l < full ? 1 : 0;
    runs << (seed > 1 ? " " : "") << fmt("%.4f", full) << '/' << fmt("%.4f", g) << '/' << fmt("%.4f", l);
  }
  // One-sided sign test of "the ablation improves": p = P(X >= k), X ~ Bin(5, 1/2).
  auto p_value = [](int k) {
    double p = 0.0;
    for (int i = k; i <= 5; ++i) p += std::tgamma(6.0) / (std::tgamma(i + 1.0) * std::tgamma(6.0 - i)) / 32.0;
    return p;
  };
  const double pg = p_value(glu_better), pl = p_value(lstm_better);
  return {pg >= 0.05 && pl >= 0.05, "ablation better in " + std::to_string(glu_better) + "/5 (no GLU, p=" +
                                        fmt("%.3f", pg) + ") and " + std::to_string(lstm_better) +
                                        "/5 (no BiLSTM, p=" + fmt("%.3f", pl) + "); full/noGLU/noLSTM " + runs.str()};
}

Outcome detector_extraction() {
  audio::SynthOptions o;
  o.seed = 7;
  o.n_tracks = 20;
  o.duration_s = 30.0;
  o.sample_rate = 22050;
  o.channels = 1;
  audio::SilencePlanOptions po;
  po.intervals_per_track = 2.0;
  o.silence_plan = audio::random_silence_plan(o.seed, o.n_tracks, o.duration_s, po);

  // Tracks 0-11 train, 12-15 calibrate, 16-19 evaluate extraction; AUC on 12-19.
  std::vector<audio::SourceSet> tracks;
  std::vector<detector::DetectorExample> train_set, calib_set, held_out;
  for (std::size_t t = 0; t < o.n_tracks; ++t) {
    tracks.push_back(audio::synth_track(o, t));
    auto ex = detector::make_example(tracks.back(), "track_" + std::to_string(t));
    if (t >= 12) held_out.push_back(ex);
    (t < 12 ? train_set : calib_set).push_back(std::move(ex));
  }
  calib_set.resize(4);

  detector::DetectorTrainOptions opts;
  opts.epochs = 80;
  opts.batch = 16;
  opts.lr = 2e-3;
  opts.seed = 1;
  detector::DetectorModel det = detector::train_detector(train_set, detector::DetectorConfig::desk(), opts);

  std::ostringstream d;
  bool auc_ok = true;
  d << "AUC";
  for (std::size_t s = 0; s < audio::kNumSources; ++s) {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    for (const auto& ex : held_out) {
      const auto p = detector::window_probabilities(det, ex.features);
      scores.insert(scores.end(), p[s].begin(), p[s].end());
      labels.insert(labels.end(), ex.labels[s].begin(), ex.labels[s].end());
    }
    const double a = detector::auc(scores, labels);
    auc_ok = auc_ok && a > 0.95;
    d << ' ' << audio::kSourceNames[s] << ' ' << fmt("%.4f", a);
  }

  // Calibration, then an independent recount of every returned threshold.
  const auto cal = extract::calibrate_thresholds(det, calib_set);
  std::vector<std::array<std::vector<double>, 4>> calib_probs;
  for (const auto& ex : calib_set) calib_probs.push_back(detector::window_probabilities(det, ex.features));
  std::size_t returned = 0;
  bool precision_ok = true;
  d << "; calibrated";
  for (std::size_t s = 0; s < audio::kNumSources; ++s) {
    if (!cal.sources[s].threshold) {
      d << ' ' << audio::kSourceNames[s] << " none";
      continue;
    }
    ++returned;
    const double p = *cal.sources[s].threshold;
    std::size_t sel = 0, good = 0;
    for (std::size_t i = 0; i < calib_set.size(); ++i)
      for (std::size_t w = 0; w < calib_probs[i][s].size(); ++w)
        if (calib_probs[i][s][w] >= p) {
          ++sel;
          good += calib_set[i].volumes[s][w] <= -20.0 ? 1 : 0;
        }
    const double prec = sel ? static_cast<double>(good) / static_cast<double>(sel) : 0.0;
    precision_ok = precision_ok && prec >= 0.95 && sel >= extract::kMinQualifying;
    d << ' ' << audio::kSourceNames[s] << ' ' << fmt("%.3f", prec) << '@' << fmt("%.3f", p);
  }
  precision_ok = precision_ok && returned > 0;

  // Extraction on tracks 16-19 with the trained detector. Precision counts
  // the windows inside emitted excerpts whose stem volume is at or below the
  // quality volume; whole-excerpt volumes are reported alongside.
  const int rate = o.sample_rate;
  std::size_t excerpts = 0, correct = 0, in_windows = 0, silent_windows = 0;
  std::vector<double> trained_errors;
  auto boundary_error = [&](const std::vector<extract::SilentExcerpt>& ex, const audio::SilenceInterval& iv) {
    double best = INFINITY;
    for (const auto& e : ex) {
      if (e.source != iv.source) continue;
      const double s = static_cast<double>(e.start) / rate, t = static_cast<double>(e.end) / rate;
      if (t <= iv.start_s || s >= iv.end_s) continue;
      best = std::min(best, std::max(std::abs(s - iv.start_s), std::abs(t - iv.end_s)));
    }
    return best;
  };
  double worst_cut = 0.0;
  std::size_t planted = 0;
  for (std::size_t t = 16; t < 20; ++t) {
    const auto mix = tracks[t].mixture();
    const auto& ex = held_out[t - 12];
    const auto found =
        extract::extract_silent_segments(detector::window_probabilities(det, ex.features), cal, mix, "t");
    for (const auto& e : found) {
      ++excerpts;
      const auto part = tracks[t].slice(e.start, e.end - e.start);
      correct += metrics::relative_volume(part[e.source], part.mixture()) <= extract::kQualityThresholdDb ? 1 : 0;
      for (std::size_t w = 0; w < ex.volumes[e.source].size(); ++w) {
        const auto [a, b] = detector::window_span(w, mix.frames(), rate);
        if (a < e.start || b > e.end) continue;
        ++in_windows;
        silent_windows += ex.volumes[e.source][w] <= extract::kQualityThresholdDb ? 1 : 0;
      }
    }
    // Cutting stage alone: windows marked from the plan (span inside a
    // planted interval of that source).
    detector::SourceSeries marks;
    for (std::size_t s = 0; s < 4; ++s) marks[s].assign(ex.volumes[s].size(), 0.0);
    for (const auto& iv : o.silence_plan) {
      if (iv.track != t) continue;
      for (std::size_t w = 0; w < marks[iv.source].size(); ++w) {
        const auto [a, b] = detector::window_span(w, mix.frames(), rate);
        if (a >= iv.start_s * rate && b <= iv.end_s * rate) marks[iv.source][w] = 1.0;
      }
    }
    extract::ThresholdCalibration half;
    for (auto& s : half.sources) s.threshold = 0.5;
    const auto cut = extract::extract_silent_segments(marks, half, mix, "t");
    for (const auto& iv : o.silence_plan) {
      if (iv.track != t || iv.end_s - iv.start_s < extract::kMinExcerptSeconds) continue;
      ++planted;
      worst_cut = std::max(worst_cut, boundary_error(cut, iv));
      trained_errors.push_back(boundary_error(found, iv));
    }
  }
  const double excerpt_precision = excerpts ? static_cast<double>(correct) / static_cast<double>(excerpts) : 0.0;
  const double window_precision =
      in_windows ? static_cast<double>(silent_windows) / static_cast<double>(in_windows) : 0.0;
  const bool excerpt_ok = excerpts > 0 && window_precision >= 0.95;
  const bool boundary_ok = planted > 0 && worst_cut <= 0.064 + 1e-9;
  std::size_t recovered = 0;
  for (double e : trained_errors) recovered += std::isfinite(e) ? 1 : 0;
  std::sort(trained_errors.begin(), trained_errors.end());
  d << "; boundary worst " << fmt("%.1f", worst_cut * 1000.0) << " ms over " << planted
    << " planted intervals (<= 64; trained detector overlaps " << recovered << ", median error "
    << fmt("%.0f", recovered ? trained_errors[recovered / 2] * 1000.0 : NAN) << " ms); excerpt precision "
    << fmt("%.3f", window_precision) << " over " << in_windows << " windows in " << excerpts
    << " excerpts (>= 0.95; whole-excerpt volume <= -20 dB in " << fmt("%.3f", excerpt_precision) << ")";
  return {auc_ok && precision_ok && boundary_ok && excerpt_ok, d.str()};
}

Outcome remix_semantics() {
  // (a) lambda = 0 reduces to the plain L1 on the remixed source.
  Rng rng(801);
  const Tensor est = rand_tensor(rng, {1, 4, 1, 300}), iso = rand_tensor(rng, {1, 1, 300}),
               exc = rand_tensor(rng, {1, 1, 300});
  bool lambda_ok = true;
  for (std::size_t i : {0, 1, 3}) {
    const float a = train::remix_loss(est, iso, exc, i, 0.0).values()[0];
    const float b = ad::l1_loss(ad::reshape(ad::slice(est, 1, i, 1), {1, 1, 300}), iso).values()[0];
    lambda_ok = lambda_ok && std::memcmp(&a, &b, sizeof a) == 0;
  }

  // Unlabeled sets: planted silences of drums, bass and vocals cut from two
  // extra synthetic mixtures.
  audio::SynthOptions o;
  o.seed = 2;
  o.n_tracks = 2;
  o.duration_s = 30.0;
  o.sample_rate = kOverfitRate;
  o.channels = 1;
  audio::SilencePlanOptions po;
  po.intervals_per_track = 3.0;
  po.sources = {0, 1, 3};
  o.silence_plan = audio::random_silence_plan(o.seed, o.n_tracks, o.duration_s, po);
  train::UnlabeledSets sets;
  for (std::size_t t = 0; t < o.n_tracks; ++t) {
    const auto mix = audio::synth_track(o, t).mixture();
    for (const auto& iv : o.silence_plan)
      if (iv.track == t) {
        const auto a = static_cast<std::size_t>(std::ceil(iv.start_s * kOverfitRate));
        const auto b = static_cast<std::size_t>(std::floor(iv.end_s * kOverfitRate));
        sets[iv.source].push_back(mix.slice(a, b - a));
      }
  }

  // (b) main-optimizer state across remix steps.
  const auto ds = overfit_data(kShortStride);
  train::TrainConfig tc = overfit_train(1, 3);
  tc.remix_enabled = true;
  model::Model m = model::new_model(overfit_model(), 3);
  ad::Adam main(m.params(), ad::AdamOptions{tc.lr});
  ad::Adam remix(m.params(), ad::AdamOptions{tc.lr * tc.remix_lr_ratio});
  train::train_epoch(m, ds, tc, main, 0);
  const auto m1 = main.first_moments(), m2 = main.second_moments();
  const auto steps = main.step_count();
  Rng r(802);
  for (int k = 0; k < 3; ++k) train::remix_step(m, sets, ds, tc, remix, r);
  bool state_ok = steps == main.step_count() && m1.size() == main.first_moments().size();
  for (std::size_t i = 0; state_ok && i < m1.size(); ++i)
    state_ok = m1[i].size() == main.first_moments()[i].size() &&
               std::memcmp(m1[i].data(), main.first_moments()[i].data(), m1[i].size() * sizeof(float)) == 0 &&
               std::memcmp(m2[i].data(), main.second_moments()[i].data(), m2[i].size() * sizeof(float)) == 0;

  // (c) remix frequency over at least 1000 batches of the overfit protocol.
  const std::size_t per_epoch = ds.segments().size();
  train::TrainConfig run = overfit_train(static_cast<int>((1000 + per_epoch - 1) / per_epoch), 4);
  run.remix_enabled = true;
  model::Model mr = model::new_model(overfit_model(), 4);
  std::size_t batches = 0, remixes = 0;
  bool finite = true;
  for (const auto& e : train::run_training(mr, ds, run, &sets)) {
    batches += e.batches;
    remixes += e.remix_steps;
    finite = finite && std::isfinite(e.loss) && std::isfinite(e.remix_loss);
  }
  const double rate = static_cast<double>(remixes) / static_cast<double>(batches);
  const bool rate_ok = batches >= 1000 && finite && rate >= 0.20 && rate <= 0.30;
  return {lambda_ok && state_ok && rate_ok, std::string("lambda=0 ") + (lambda_ok ? "bit-exact" : "MISMATCH") +
                                                "; main optimizer " + (state_ok ? "bit-exact" : "CHANGED") +
                                                " across remix steps; " + std::to_string(remixes) + " remix steps / " +
                                                std::to_string(batches) + " batches = " + fmt("%.3f", rate) +
                                                " (0.25 +- 0.05)"};
}

Outcome aggregation_fixture() {
  // Per frame: each reference owns 20 private samples, the last 20 belong to
  // none, and the estimate error sits there, so SDR = SAR = 10 log10(|s|^2/|e|^2)
  // and SIR is capped.
  constexpr int kRate = 100;
  const std::vector<std::vector<std::vector<double>>> planned = {
      {{1, 2, 9}, {0, 1, 2}, {4, 4, 4}, {7, 3, 5}},
      {{5, 5}, {3, 3, 4}, {6, 2}, {-1, 0, 1}},
      {{8}, {10, 10}, {2, 12}, {3}},
  };
  Rng rng(901);
  std::vector<metrics::TrackMetrics> tracks;
  for (std::size_t k = 0; k < planned.size(); ++k) {
    std::size_t frames = 0;
    for (const auto& f : planned[k]) frames = std::max(frames, f.size());
    audio::SourceSet ref, est;
    for (std::size_t s = 0; s < 4; ++s) {
      ref[s] = audio::Waveform(1, frames * kRate, kRate);
      est[s] = audio::Waveform(1, frames * kRate, kRate);
    }
    for (std::size_t f = 0; f < frames; ++f)
      for (std::size_t s = 0; s < 4; ++s) {
        double es = 0.0;
        for (std::size_t i = 0; i < 20; ++i) {
          const float v = static_cast<float>(rng.uniform(0.2, 1.0) * (rng.bernoulli(0.5) ? 1 : -1));
          ref[s].at(0, f * kRate + s * 20 + i) = v;
          es += static_cast<double>(v) * v;
        }
        std::vector<double> e(20);
        double ee = 0.0;
        for (auto& x : e) {
          x = rng.normal();
          ee += x * x;
        }
        // Frames beyond a source's planned list repeat its last value.
        const auto& plan = planned[k][s];
        const double target = plan[std::min(f, plan.size() - 1)];
        const double g = std::sqrt(es / ee / std::pow(10.0, target / 10.0));
        for (std::size_t i = 0; i < 20; ++i) {
          est[s].at(0, f * kRate + s * 20 + i) = ref[s].at(0, f * kRate + s * 20 + i);
          est[s].at(0, f * kRate + 80 + i) = static_cast<float>(g * e[i]);
        }
      }
    tracks.push_back(metrics::evaluate_track(est, ref, 1.0, "fixture_" + std::to_string(k)));
  }
  const auto r = metrics::aggregate(tracks);

  // Hand-computed: track medians (with repeated last values filling the
  // longest source's frame count), source medians and the All median.
  //   track a (3 frames): drums {1,2,9}->2 bass {0,1,2}->1 other {4,4,4}->4 vocals {7,3,5}->5
  //   track b (3 frames): drums {5,5,5}->5 bass {3,3,4}->3 other {6,2,2}->2 vocals {-1,0,1}->0
  //   track c (2 frames): drums {8,8}->8 bass {10,10}->10 other {2,12}->7 vocals {3,3}->3
  const double hand_sources[4] = {5, 3, 4, 3};
  const double hand_all = 3.5;  // median{2,1,4,5, 5,3,2,0, 8,10,7,3}
  double worst = 0.0;
  for (std::size_t s = 0; s < 4; ++s)
    worst = std::max({worst, std::abs(r.source_medians[s].sdr.value_or(NAN) - hand_sources[s]),
                      std::abs(r.source_medians[s].sar.value_or(NAN) - hand_sources[s]),
                      std::abs(r.source_medians[s].sir.value_or(NAN) - metrics::kMetricCap)});
  worst = std::max({worst, std::abs(r.all.sdr.value_or(NAN) - hand_all), std::abs(r.all.sar.value_or(NAN) - hand_all)});
  return {worst < 1e-3, "median-of-medians vs hand values: max gap " + fmt("%.2e", worst) + " dB (< 1e-3); All SDR " +
                            fmt("%.4f", r.all.sdr.value_or(NAN)) + " (hand 3.5)"};
}

std::map<std::string, std::vector<char>> tree_bytes(const fs::path& root) {
  std::map<std::string, std::vector<char>> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = testing::file_bytes(e.path());
  return out;
}

Outcome round_trip(const std::string& dmx) {
  testing::TempDir dir("acceptance_rt");
  // Checkpoints: separator and detector, load then save again.
  model::ModelConfig c = overfit_model();
  c.use_glu = false;
  c.rescale_lstm = true;
  model::Model m = model::new_model(c, 11);
  model::save_model(dir / "m.dmx", m);
  model::Model back = model::load_model(dir / "m.dmx");
  model::save_model(dir / "m2.dmx", back);
  bool ckpt_ok = testing::file_bytes(dir / "m.dmx") == testing::file_bytes(dir / "m2.dmx");
  auto pa = m.params(), pb = back.params();
  ckpt_ok = ckpt_ok && pa.size() == pb.size();
  for (std::size_t i = 0; ckpt_ok && i < pa.size(); ++i)
    ckpt_ok = pa[i]->scale == pb[i]->scale &&
              std::memcmp(pa[i]->tensor.values().data(), pb[i]->tensor.values().data(), pa[i]->tensor.numel() * 4) == 0;
  detector::DetectorModel det = detector::new_detector(detector::DetectorConfig::desk(), 12);
  detector::save_detector(dir / "d.dmx", det);
  detector::DetectorModel det_back = detector::load_detector(dir / "d.dmx");
  detector::save_detector(dir / "d2.dmx", det_back);
  ckpt_ok = ckpt_ok && testing::file_bytes(dir / "d.dmx") == testing::file_bytes(dir / "d2.dmx");

  // Every subcommand twice in fresh directories with the same seed.
  const std::vector<std::string> commands = {
      "--seed 5 synth corpus --tracks 3 --duration 12 --rate 22050 --channels 1 --silence_min 5.5 --silence_max 7",
      "--seed 5 train corpus run --epochs 2 --batch 4 --stride 2 --mono true --checkpoint_every 1",
      "separate run/final.dmx corpus/track_000/mixture.wav sep",
      "evaluate corpus corpus --out eval.json",
      "--seed 5 train-detector corpus det.dmx --det_epochs 3 --det_batch 8 --feature_cache cache",
      "detect det.dmx corpus/track_001/mixture.wav --out detect.tsv",
      "calibrate det.dmx corpus thresholds.tsv --feature_cache cache",
      "--workers 2 extract det.dmx thresholds.tsv corpus sets",
      "--seed 5 remix-train corpus remix --epochs 2 --batch 4 --stride 2 --mono true --unlabeled sets",
  };
  std::string failed;
  std::array<std::map<std::string, std::vector<char>>, 2> trees;
  for (int rep = 0; rep < 2 && failed.empty(); ++rep) {
    const fs::path work = dir / ("run" + std::to_string(rep));
    fs::create_directories(work);
    for (std::size_t k = 0; k < commands.size() && failed.empty(); ++k) {
      const std::string cmd = "cd '" + work.string() + "' && '" + dmx + "' --log-level error " + commands[k] +
                              " > stdout_" + std::to_string(k) + ".txt";
      if (std::system(cmd.c_str()) != 0) failed = commands[k];
    }
    if (failed.empty()) trees[rep] = tree_bytes(work);
  }
  if (!failed.empty()) return {false, "command failed: dmx " + failed};
  std::size_t differing = 0;
  std::string first_diff;
  for (const auto& [name, bytes] : trees[0]) {
    auto it = trees[1].find(name);
    if (it == trees[1].end() || it->second != bytes) {
      if (differing++ == 0) first_diff = name;
    }
  }
  const bool same_set = trees[0].size() == trees[1].size();
  const bool cli_ok = differing == 0 && same_set;
  return {ckpt_ok && cli_ok, std::string("checkpoints ") + (ckpt_ok ? "bit-exact" : "DIFFER") + "; " +
                                 std::to_string(commands.size()) + " subcommands re-run: " +
                                 std::to_string(trees[0].size()) + " artifacts, " + std::to_string(differing) +
                                 " differ" + (first_diff.empty() ? "" : " (first " + first_diff + ")")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  bool strict = false;
  std::string dmx;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--strict") {
      strict = true;
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else if (a == "--dmx" && i + 1 < argc) {
      dmx = fs::absolute(argv[++i]).string();
    } else {
      std::fprintf(stderr, "usage: %s [--only N,M] [--strict] [--dmx path]\n", argv[0]);
      return 1;
    }
  }
  set_log_level(LogLevel::Warn);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"metric oracle", metric_oracle},
      {"architecture algebra", architecture_algebra},
      {"weight rescaling", weight_rescaling},
      {"overfit oracle", overfit_oracle},
      {"ablation direction", ablation_direction},
      {"detector and extraction", detector_extraction},
      {"remix step semantics", remix_semantics},
      {"aggregation", aggregation_fixture},
      {"round trip and determinism",
       [&] { return dmx.empty() ? Outcome{false, "no --dmx binary given"} : round_trip(dmx); }},
  };
  int red = 0, broken = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Clock clock;
    Outcome out;
    try {
      out = criteria[k].second();
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
      ++broken;
    }
    red += out.pass ? 0 : 1;
    std::printf("criterion %2d %s: %s [%s] (%.0f s)\n", id, out.pass ? "PASS" : "FAIL", criteria[k].first.c_str(),
                out.detail.c_str(), clock.seconds());
    std::fflush(stdout);
  }
  std::printf("acceptance: %d red\n", red);
  if (broken > 0) return 2;
  return strict && red > 0 ? 1 : 0;
}
