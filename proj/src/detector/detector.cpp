// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dmx/detector/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dmx/autodiff/adam.hpp"
#include "dmx/autodiff/ops.hpp"
#include "dmx/error.hpp"
#include "dmx/log.hpp"
#include "dmx/metrics/bss.hpp"

namespace dmx::detector {
namespace {

using ad::Param;
using ad::Shape;
using ad::Tensor;

constexpr std::size_t kPool = 5;
constexpr std::size_t kPoolStride = 2;

Param make_param(std::string name, const Shape& shape, std::size_t fan_in, Rng& rng) {
  Param p;
  p.name = std::move(name);
  p.tensor = ad::he_init(shape, fan_in, rng);
  return p;
}

Param constant(std::string name, std::size_t n, float value, bool trainable) {
  Param p;
  p.name = std::move(name);
  p.tensor = Tensor({n}, value);
  p.trainable = trainable;
  return p;
}

Conv make_conv2d(const std::string& name, std::size_t cin, std::size_t cout, std::size_t kh, std::size_t kw, Rng& rng) {
  return {make_param(name + ".weight", {cout, cin, kh, kw}, cin * kh * kw, rng),
          make_param(name + ".bias", {cout}, cin * kh * kw, rng)};
}

Conv make_conv1x1(const std::string& name, std::size_t cin, std::size_t cout, Rng& rng) {
  return {make_param(name + ".weight", {cout, cin, 1}, cin, rng), make_param(name + ".bias", {cout}, cin, rng)};
}

Norm make_norm(const std::string& name, std::size_t c) {
  return {constant(name + ".gamma", c, 1.0f, true), constant(name + ".beta", c, 0.0f, true),
          constant(name + ".running_mean", c, 0.0f, false), constant(name + ".running_var", c, 1.0f, false)};
}

Tensor apply_norm(Norm& n, const Tensor& x, bool training) {
  // The state shares nodes with the params, so running updates persist.
  ad::BatchNormState state{n.running_mean.tensor, n.running_var.tensor};
  return ad::batch_norm(x, n.gamma.tensor, n.beta.tensor, state, training);
}

Tensor conv_block(std::array<Conv, 3>& block, Tensor h) {
  for (Conv& c : block) {
    const std::size_t k = c.weight.tensor.dim(2);
    h = ad::relu(ad::conv2d(h, c.weight.tensor, c.bias.tensor, k / 2, k / 2));
  }
  return ad::max_pool2d(h, kPool, kPoolStride);
}

void push_norm(ad::ParamList& out, Norm& n) {
  out.insert(out.end(), {&n.gamma, &n.beta, &n.running_mean, &n.running_var});
}

}  // namespace

DetectorConfig DetectorConfig::desk() {
  DetectorConfig c;
  c.block1_hidden = 8;
  c.block1_out = 16;
  c.block2_hidden = 16;
  c.block2_out = 32;
  c.collapse_channels = 32;
  c.lstm_hidden = 32;
  return c;
}

void DetectorConfig::validate() const {
  for (int v : {input_channels, frequencies, block1_hidden, block1_out, block2_hidden, block2_out, collapse_channels,
                lstm_hidden, lstm_layers})
    if (v <= 0) throw ContractError("detector config sizes must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ContractError("detector dropout must lie in [0, 1)");
  if (compression_floor <= 0.0) throw ContractError("detector compression floor must be positive");
  if (static_cast<std::size_t>(frequencies) < kMinWindows)
    throw ContractError("detector needs at least 13 frequency rows to survive pooling");
}

std::size_t DetectorConfig::collapsed_frequencies() const {
  return pooled_length(pooled_length(static_cast<std::size_t>(frequencies)));
}

std::size_t pooled_length(std::size_t n) { return n < kPool ? 0 : (n - kPool) / kPoolStride + 1; }

std::size_t output_frames(std::size_t windows) {
  if (windows < kMinWindows)
    throw ShapeError("detector needs at least " + std::to_string(kMinWindows) + " windows, got " +
                     std::to_string(windows));
  return pooled_length(pooled_length(windows));
}

std::size_t nearest_frame(std::size_t window, std::size_t frames) {
  if (frames == 0) throw ContractError("nearest_frame: no frames");
  if (window <= 6) return 0;
  const std::size_t j = (window - 6 + 2) / 4;  // ties go to the later frame
  return std::min(j, frames - 1);
}

ad::ParamList DetectorModel::params() {
  ad::ParamList out;
  push_norm(out, input_norm);
  for (Conv& c : block1) out.insert(out.end(), {&c.weight, &c.bias});
  push_norm(out, norm1);
  for (Conv& c : block2) out.insert(out.end(), {&c.weight, &c.bias});
  push_norm(out, norm2);
  out.insert(out.end(), {&collapse.weight, &collapse.bias});
  for (auto& [f, b] : lstm) out.insert(out.end(), {&f.w_ih, &f.w_hh, &f.bias, &b.w_ih, &b.w_hh, &b.bias});
  out.insert(out.end(), {&head.weight, &head.bias});
  push_norm(out, head_norm);
  out.insert(out.end(), {&this->out.weight, &this->out.bias});
  return out;
}

std::size_t DetectorModel::num_parameters() { return ad::count_elements(params()); }

DetectorModel new_detector(const DetectorConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  DetectorModel m;
  m.config = config;
  const auto z = [](int v) { return static_cast<std::size_t>(v); };
  const std::size_t cin = z(config.input_channels);
  m.input_norm = make_norm("input_norm", cin);
  m.block1 = {make_conv2d("block1.0", cin, z(config.block1_hidden), 5, 5, rng),
              make_conv2d("block1.1", z(config.block1_hidden), z(config.block1_hidden), 5, 5, rng),
              make_conv2d("block1.2", z(config.block1_hidden), z(config.block1_out), 1, 1, rng)};
  m.norm1 = make_norm("norm1", z(config.block1_out));
  m.block2 = {make_conv2d("block2.0", z(config.block1_out), z(config.block2_hidden), 5, 5, rng),
              make_conv2d("block2.1", z(config.block2_hidden), z(config.block2_hidden), 5, 5, rng),
              make_conv2d("block2.2", z(config.block2_hidden), z(config.block2_out), 1, 1, rng)};
  m.norm2 = make_norm("norm2", z(config.block2_out));
  m.collapse = make_conv2d("collapse", z(config.block2_out), z(config.collapse_channels),
                           config.collapsed_frequencies(), 1, rng);
  const std::size_t h = z(config.lstm_hidden);
  for (int l = 0; l < config.lstm_layers; ++l) {
    const std::size_t in = l == 0 ? z(config.collapse_channels) : 2 * h;
    std::pair<Recurrent, Recurrent> layer;
    for (Recurrent* d : {&layer.first, &layer.second}) {
      const std::string n =
          "lstm." + std::to_string(l) + (d == &layer.first ? ".forward." : ".backward.");
      d->w_ih = make_param(n + "w_ih", {4 * h, in}, in, rng);
      d->w_hh = make_param(n + "w_hh", {4 * h, h}, h, rng);
      d->bias = constant(n + "bias", 4 * h, 0.0f, true);
      std::fill_n(d->bias.tensor.values().begin() + static_cast<std::ptrdiff_t>(h), h, 1.0f);
    }
    m.lstm.push_back(std::move(layer));
  }
  m.head = make_conv1x1("head", 2 * h, h, rng);
  m.head_norm = make_norm("head_norm", h);
  m.out = make_conv1x1("out", h, audio::kNumSources, rng);
  for (Param* p : m.params())
    if (p->trainable) p->tensor.set_requires_grad(true);
  return m;
}

Tensor detector_logits(DetectorModel& model, const Tensor& feats, bool training, Rng* rng) {
  const DetectorConfig& c = model.config;
  if (feats.rank() != 4 || feats.dim(1) != static_cast<std::size_t>(c.input_channels) ||
      feats.dim(2) != static_cast<std::size_t>(c.frequencies))
    throw ShapeError("detector expects features [B, " + std::to_string(c.input_channels) + ", " +
                     std::to_string(c.frequencies) + ", T], got " + ad::shape_str(feats.shape()));
  const std::size_t batch = feats.dim(0);
  const std::size_t frames = output_frames(feats.dim(3));
  if (training && c.dropout > 0.0 && rng == nullptr) throw ContractError("training mode needs an rng for dropout");

  std::vector<float> compressed(feats.numel());
  const double floor = c.compression_floor;
  for (std::size_t i = 0; i < compressed.size(); ++i)
    compressed[i] = static_cast<float>(std::log1p(static_cast<double>(feats.values()[i]) / floor));

  Tensor h = apply_norm(model.input_norm, Tensor(feats.shape(), std::move(compressed)), training);
  h = apply_norm(model.norm1, conv_block(model.block1, h), training);
  h = apply_norm(model.norm2, conv_block(model.block2, h), training);
  h = ad::conv2d(h, model.collapse.weight.tensor, model.collapse.bias.tensor, 0, 0);
  h = ad::reshape(h, {batch, static_cast<std::size_t>(c.collapse_channels), frames});

  Tensor seq = ad::permute(h, {2, 0, 1});
  for (std::size_t l = 0; l < model.lstm.size(); ++l) {
    auto& [f, b] = model.lstm[l];
    Tensor fw = ad::lstm(seq, f.w_ih.tensor, f.w_hh.tensor, f.bias.tensor, false);
    Tensor bw = ad::lstm(seq, b.w_ih.tensor, b.w_hh.tensor, b.bias.tensor, true);
    seq = ad::concat(fw, bw, 2);
    if (l + 1 < model.lstm.size() && training) seq = ad::dropout(seq, static_cast<float>(c.dropout), *rng, true);
  }
  h = ad::permute(seq, {1, 2, 0});
  h = ad::conv1d(h, model.head.weight.tensor, model.head.bias.tensor, 1);
  h = ad::relu(apply_norm(model.head_norm, h, training));
  return ad::conv1d(h, model.out.weight.tensor, model.out.bias.tensor, 1);
}

Tensor detector_forward(DetectorModel& model, const Tensor& feats) {
  if (feats.rank() != 3) throw ShapeError("detector_forward expects [C, F, T], got " + ad::shape_str(feats.shape()));
  ad::NoGradGuard no_grad;
  Tensor x({1, feats.dim(0), feats.dim(1), feats.dim(2)}, feats.values());
  Tensor p = ad::sigmoid(detector_logits(model, x, false));
  return ad::reshape(p, {audio::kNumSources, p.dim(2)});
}

SourceSeries window_probabilities(DetectorModel& model, const Tensor& feats) {
  const Tensor p = detector_forward(model, feats);
  const std::size_t windows = feats.dim(2), frames = p.dim(1);
  SourceSeries out;
  for (std::size_t s = 0; s < audio::kNumSources; ++s) {
    out[s].resize(windows);
    for (std::size_t w = 0; w < windows; ++w) out[s][w] = p.values()[s * frames + nearest_frame(w, frames)];
  }
  return out;
}

SourceSeries window_volumes(const audio::SourceSet& track) {
  const audio::Waveform mix = track.mixture();
  const std::size_t frames = track.frames();
  const int rate = track.sample_rate();
  const std::size_t windows = window_count(frames, rate);
  constexpr double kSilent = -std::numeric_limits<double>::infinity();
  SourceSeries out;
  for (auto& v : out) v.assign(windows, kSilent);
  for (std::size_t w = 0; w < windows; ++w) {
    const auto [a, b] = window_span(w, frames, rate);
    const audio::Waveform m = mix.slice(a, b - a);
    double energy = 0.0;
    for (float x : m.samples()) energy += static_cast<double>(x) * x;
    if (energy == 0.0) continue;
    for (std::size_t s = 0; s < audio::kNumSources; ++s)
      out[s][w] = metrics::relative_volume(track[s].slice(a, b - a), m);
  }
  return out;
}

SourceLabels label_windows(const audio::SourceSet& track, double threshold_db) {
  const SourceSeries v = window_volumes(track);
  SourceLabels out;
  for (std::size_t s = 0; s < audio::kNumSources; ++s)
    for (double x : v[s]) out[s].push_back(metrics::is_silent(x, threshold_db) ? 1 : 0);
  return out;
}

Tensor detection_loss(const Tensor& logits, const Tensor& targets) {
  return ad::scale(ad::bce_with_logits(logits, targets), static_cast<float>(audio::kNumSources));
}

double auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j + 1);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) {
        positive_rank_sum += rank;
        ++positives;
      }
    i = j;
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) return std::numeric_limits<double>::quiet_NaN();
  const double np = static_cast<double>(positives);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(negatives));
}

DetectorExample make_example(const audio::SourceSet& track, const std::string& name,
                             const std::filesystem::path& cache_dir, double threshold_db) {
  DetectorExample e;
  e.name = name;
  const audio::Waveform input = scatter_input(track.mixture());
  e.features = cache_dir.empty() ? scatter2(input) : scatter2_cached(input, cache_dir);
  e.volumes = window_volumes(track);
  for (std::size_t s = 0; s < audio::kNumSources; ++s)
    for (double x : e.volumes[s]) e.labels[s].push_back(metrics::is_silent(x, threshold_db) ? 1 : 0);
  if (e.labels[0].size() != e.features.dim(2))
    throw ConsistencyError("feature and label window counts differ for " + name, 0.0);
  return e;
}

DetectorModel train_detector(const std::vector<DetectorExample>& examples, const DetectorConfig& config,
                             const DetectorTrainOptions& options, std::vector<DetectorEpoch>* log) {
  if (options.batch == 0 || options.epochs < 0 || options.lr <= 0.0)
    throw ContractError("detector training needs a positive batch size and learning rate");
  const std::size_t crop = options.crop_windows;
  const std::size_t frames = output_frames(crop);
  const std::size_t stride = 4 * frames;
  std::vector<const DetectorExample*> usable;
  for (const auto& e : examples)
    if (e.features.dim(2) >= crop) usable.push_back(&e);
  if (usable.empty()) throw ContractError("no detector example is long enough for one training crop");

  DetectorModel model = new_detector(config, options.seed);
  ad::Adam optim(model.params(), {.lr = options.lr});
  Rng rng = Rng::derive(options.seed, 1);
  const std::size_t c = static_cast<std::size_t>(config.input_channels);
  const std::size_t f = static_cast<std::size_t>(config.frequencies);

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::vector<std::pair<const DetectorExample*, std::size_t>> crops;
    for (const DetectorExample* e : usable) {
      const std::size_t t = e->features.dim(2);
      for (std::size_t s = rng.below(std::min(stride, t - crop + 1)); s + crop <= t; s += stride) crops.emplace_back(e, s);
    }
    rng.shuffle(crops.begin(), crops.end());

    DetectorEpoch stats{epoch, 0.0, 0};
    for (std::size_t first = 0; first < crops.size(); first += options.batch) {
      const std::size_t b = std::min(options.batch, crops.size() - first);
      std::vector<float> x(b * c * f * crop), y(b * audio::kNumSources * frames);
      for (std::size_t i = 0; i < b; ++i) {
        const auto [e, start] = crops[first + i];
        const std::size_t t = e->features.dim(2);
        const float* src = e->features.values().data();
        for (std::size_t row = 0; row < c * f; ++row)
          std::copy_n(src + row * t + start, crop, x.data() + (i * c * f + row) * crop);
        for (std::size_t s = 0; s < audio::kNumSources; ++s)
          for (std::size_t j = 0; j < frames; ++j)
            y[(i * audio::kNumSources + s) * frames + j] = e->labels[s][start + frame_center_window(j)];
      }
      Tensor logits = detector_logits(model, Tensor({b, c, f, crop}, std::move(x)), true, &rng);
      Tensor loss = detection_loss(logits, Tensor({b, audio::kNumSources, frames}, std::move(y)));
      ad::backward(loss);
      optim.step();
      optim.zero_grad();
      stats.loss += loss.item();
      ++stats.batches;
    }
    stats.loss /= static_cast<double>(stats.batches);
    log_info("detector epoch=" + std::to_string(epoch) + " loss=" + std::to_string(stats.loss));
    if (log) log->push_back(stats);
  }
  return model;
}

ad::CheckpointHeader detector_header(const DetectorConfig& c) {
  return {"detector",
          {{"input_channels", c.input_channels},
           {"frequencies", c.frequencies},
           {"block1_hidden", c.block1_hidden},
           {"block1_out", c.block1_out},
           {"block2_hidden", c.block2_hidden},
           {"block2_out", c.block2_out},
           {"collapse_channels", c.collapse_channels},
           {"lstm_hidden", c.lstm_hidden},
           {"lstm_layers", c.lstm_layers},
           {"dropout", c.dropout},
           {"compression_floor", c.compression_floor}}};
}

void save_detector(const std::filesystem::path& path, DetectorModel& model) {
  ad::save_checkpoint(path, detector_header(model.config), model.params());
}

DetectorModel load_detector(const std::filesystem::path& path) {
  const ad::Checkpoint ck = ad::load_checkpoint(path);
  const ad::CheckpointHeader& h = ck.header;
  if (h.kind != "detector") throw FormatError("checkpoint holds a '" + h.kind + "', not a detector");
  DetectorConfig c;
  auto i = [&](const char* k) { return static_cast<int>(h.field(k)); };
  c.input_channels = i("input_channels");
  c.frequencies = i("frequencies");
  c.block1_hidden = i("block1_hidden");
  c.block1_out = i("block1_out");
  c.block2_hidden = i("block2_hidden");
  c.block2_out = i("block2_out");
  c.collapse_channels = i("collapse_channels");
  c.lstm_hidden = i("lstm_hidden");
  c.lstm_layers = i("lstm_layers");
  c.dropout = h.field("dropout");
  c.compression_floor = h.field("compression_floor");
  DetectorModel m = new_detector(c, 0);
  ad::restore_params(ck, m.params());
  return m;
}

}  // namespace dmx::detector
