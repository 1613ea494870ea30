// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dmx/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "dmx/autodiff/ops.hpp"
#include "dmx/error.hpp"
#include "dmx/log.hpp"

namespace dmx::train {
namespace {

using ad::Tensor;

constexpr std::size_t kIsolatedAttempts = 100;
constexpr std::array<std::size_t, 3> kRemixSources = {0, 1, 3};  // never "other"

// [C, T] block of a waveform copied into dst.
void copy_wave(const audio::Waveform& w, std::size_t offset, std::size_t length, float* dst, std::size_t stride) {
  for (std::size_t c = 0; c < w.channels(); ++c) {
    const auto ch = w.channel(c);
    const std::size_t n = offset < ch.size() ? std::min(length, ch.size() - offset) : 0;
    std::copy_n(ch.data() + offset, n, dst + c * stride);
  }
}

Tensor source_slice(const Tensor& est, std::size_t source) {
  Tensor s = ad::slice(est, 1, source, 1);
  return ad::reshape(s, {est.dim(0), est.dim(2), est.dim(3)});
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw ContractError("epochs must be non-negative");
  if (batch == 0) throw ContractError("batch size must be positive");
  if (!(lr > 0.0) || lr_decay_epochs <= 0 || !(lr_decay_factor > 0.0) || !(remix_lr_ratio > 0.0))
    throw ContractError("learning rates and decay settings must be positive");
  if (remix_probability < 0.0 || remix_probability > 1.0) throw ContractError("remix probability must lie in [0, 1]");
  if (remix_lambda < 0.0) throw ContractError("remix lambda must be non-negative");
}

double learning_rate(const TrainConfig& config, int epoch) {
  return config.lr / std::pow(config.lr_decay_factor, std::floor(epoch / config.lr_decay_epochs));
}

Tensor separation_loss(const Tensor& est, const Tensor& ref, LossKind kind) {
  if (est.shape() != ref.shape() || est.rank() != 4)
    throw ShapeError("separation_loss: expected matching [B, N, C, T], got " + ad::shape_str(est.shape()) + " and " +
                     ad::shape_str(ref.shape()));
  const Tensor per_element = kind == LossKind::L1 ? ad::l1_loss(est, ref) : ad::mse_loss(est, ref);
  // Mean over everything times N is the sum over sources of per-source means.
  return ad::scale(per_element, static_cast<float>(est.dim(1)));
}

void augment(std::vector<audio::SourceSet>& batch, Rng& rng) {
  const std::size_t b = batch.size();
  if (b == 0) return;
  for (std::size_t s = 0; s < audio::kNumSources; ++s) {
    std::vector<std::size_t> perm(b);
    for (std::size_t i = 0; i < b; ++i) perm[i] = i;
    rng.shuffle(perm.begin(), perm.end());
    std::vector<audio::Waveform> moved(b);
    for (std::size_t i = 0; i < b; ++i) moved[i] = batch[perm[i]][s];
    for (std::size_t i = 0; i < b; ++i) batch[i][s] = std::move(moved[i]);
  }
  for (auto& item : batch) {
    for (std::size_t s = 0; s < audio::kNumSources; ++s) {
      audio::Waveform& w = item[s];
      const std::size_t t = w.frames();
      const std::size_t shift = static_cast<std::size_t>(rng.below(t));
      for (std::size_t c = 0; c < w.channels(); ++c) {
        auto ch = w.channel(c);
        std::rotate(ch.begin(), ch.begin() + static_cast<std::ptrdiff_t>(shift), ch.end());
      }
      if (w.channels() == 2 && rng.bernoulli(0.5)) std::swap_ranges(w.channel(0).begin(), w.channel(0).end(), w.channel(1).begin());
      for (std::size_t c = 0; c < w.channels(); ++c)
        if (rng.bernoulli(0.5))
          for (float& x : w.channel(c)) x = -x;
    }
  }
}

BatchTensors make_batch(const std::vector<audio::SourceSet>& items, const model::ModelConfig& config) {
  if (items.empty()) throw ContractError("make_batch: empty batch");
  const std::size_t c = items[0].channels(), t = items[0].frames();
  if (c != static_cast<std::size_t>(config.input_channels))
    throw ShapeError("batch has " + std::to_string(c) + " channels, model expects " +
                     std::to_string(config.input_channels));
  const std::size_t tv = model::valid_length(t, config);
  const std::size_t left = (tv - t) / 2;
  const std::size_t b = items.size(), n = audio::kNumSources;
  std::vector<float> mix(b * c * tv, 0.0f), src(b * n * c * t, 0.0f);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t s = 0; s < n; ++s) {
      const audio::Waveform& w = items[i][s];
      if (w.channels() != c || w.frames() != t) throw ShapeError("make_batch: items differ in layout");
      copy_wave(w, 0, t, src.data() + (i * n + s) * c * t, t);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const auto x = w.channel(ch);
        float* dst = mix.data() + (i * c + ch) * tv + left;
        for (std::size_t k = 0; k < t; ++k) dst[k] += x[k];
      }
    }
  }
  return {Tensor({b, c, tv}, std::move(mix)), Tensor({b, n, c, t}, std::move(src)), left};
}

Tensor estimate(const model::Model& model, const BatchTensors& batch) {
  Tensor y = model::forward(model, batch.mix);
  const std::size_t t = batch.sources.dim(3);
  if (y.dim(3) == t) return y;
  return ad::slice(y, 3, batch.left_pad, t);
}

Tensor remix_loss(const Tensor& est, const Tensor& isolated, const Tensor& excerpt, std::size_t source,
                  double lambda) {
  if (est.rank() != 4 || source >= est.dim(1)) throw ShapeError("remix_loss: bad estimate shape");
  Tensor target_term = ad::l1_loss(source_slice(est, source), isolated);
  if (lambda == 0.0) return target_term;
  Tensor rest;
  for (std::size_t j = 0; j < est.dim(1); ++j) {
    if (j == source) continue;
    rest = rest.defined() ? ad::add(rest, source_slice(est, j)) : source_slice(est, j);
  }
  return ad::add(target_term, ad::scale(ad::l1_loss(rest, excerpt), static_cast<float>(lambda)));
}

RemixStats remix_step(model::Model& model, const UnlabeledSets& sets, const audio::TrackDataset& labeled,
                      const TrainConfig& config, ad::Adam& remix_optim, Rng& rng) {
  RemixStats stats;
  std::vector<std::size_t> eligible;
  for (std::size_t s : kRemixSources)
    if (!sets[s].empty()) eligible.push_back(s);
  if (eligible.empty() || labeled.tracks.empty()) return stats;

  const std::size_t i = eligible[rng.below(eligible.size())];
  const std::size_t len = labeled.segment_length;
  const std::size_t c = labeled.channels;
  const audio::Waveform& m = sets[i][rng.below(sets[i].size())];
  if (m.channels() != c) throw ShapeError("remix excerpt has the wrong channel count");
  const std::size_t m_off = m.frames() > len ? rng.below(m.frames() - len + 1) : 0;

  std::vector<float> isolated(c * len, 0.0f);
  bool found = false;
  for (std::size_t attempt = 0; attempt < kIsolatedAttempts && !found; ++attempt) {
    const audio::SourceSet& track = labeled.tracks[rng.below(labeled.tracks.size())];
    if (track.frames() < len) continue;
    const std::size_t off = rng.below(track.frames() - len + 1);
    std::fill(isolated.begin(), isolated.end(), 0.0f);
    copy_wave(track[i], off, len, isolated.data(), len);
    found = std::any_of(isolated.begin(), isolated.end(), [](float x) { return x != 0.0f; });
  }
  if (!found) return stats;

  std::vector<float> excerpt(c * len, 0.0f);
  copy_wave(m, m_off, len, excerpt.data(), len);

  const std::size_t tv = model::valid_length(len, model.config);
  const std::size_t left = (tv - len) / 2;
  std::vector<float> mix(c * tv, 0.0f);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t k = 0; k < len; ++k) mix[ch * tv + left + k] = isolated[ch * len + k] + excerpt[ch * len + k];

  BatchTensors batch{Tensor({1, c, tv}, std::move(mix)), Tensor({1, audio::kNumSources, c, len}), left};
  Tensor est = estimate(model, batch);
  Tensor loss = remix_loss(est, Tensor({1, c, len}, std::move(isolated)), Tensor({1, c, len}, std::move(excerpt)),
                           i, config.remix_lambda);
  ad::backward(loss);
  remix_optim.step();
  remix_optim.zero_grad();
  stats.taken = true;
  stats.source = i;
  stats.loss = loss.item();
  return stats;
}

EpochStats train_epoch(model::Model& model, const audio::TrackDataset& dataset, const TrainConfig& config,
                       ad::Adam& optim, int epoch, const UnlabeledSets* remix_sets, ad::Adam* remix_optim) {
  config.validate();
  EpochStats stats;
  stats.epoch = epoch;
  stats.lr = learning_rate(config, epoch);
  optim.set_lr(stats.lr);
  const bool remix = config.remix_enabled && remix_sets != nullptr && remix_optim != nullptr;
  if (remix) remix_optim->set_lr(stats.lr * config.remix_lr_ratio);

  Rng rng = Rng::derive(config.seed, static_cast<std::uint64_t>(epoch));
  std::vector<audio::Segment> segments = dataset.segments();
  if (segments.empty()) throw DatasetError("training set has no complete segment");
  rng.shuffle(segments.begin(), segments.end());

  for (std::size_t first = 0; first < segments.size(); first += config.batch) {
    const std::size_t b = std::min(config.batch, segments.size() - first);
    std::vector<audio::SourceSet> items;
    for (std::size_t k = 0; k < b; ++k) items.push_back(dataset.segment(segments[first + k]));
    if (config.augment) augment(items, rng);
    const BatchTensors batch = make_batch(items, model.config);
    Tensor loss = separation_loss(estimate(model, batch), batch.sources, config.loss);
    if (!std::isfinite(loss.item())) throw NumericError("training loss is not finite at epoch " + std::to_string(epoch));
    ad::backward(loss);
    optim.step();
    optim.zero_grad();
    stats.loss += loss.item();
    ++stats.batches;

    if (remix && rng.bernoulli(config.remix_probability)) {
      const RemixStats r = remix_step(model, *remix_sets, dataset, config, *remix_optim, rng);
      if (r.taken) {
        ++stats.remix_steps;
        stats.remix_loss += r.loss;
      } else {
        ++stats.remix_skipped;
      }
    }
  }
  stats.loss /= static_cast<double>(stats.batches);
  if (stats.remix_steps > 0) stats.remix_loss /= static_cast<double>(stats.remix_steps);
  return stats;
}

std::string format_epoch(const EpochStats& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "epoch=%d loss=%.9g remix_loss=%.9g batches=%zu remix_steps=%zu remix_skipped=%zu lr=%.9g",
                s.epoch, s.loss, s.remix_loss, s.batches, s.remix_steps, s.remix_skipped, s.lr);
  return buf;
}

std::vector<EpochStats> run_training(model::Model& model, const audio::TrackDataset& dataset, const TrainConfig& config,
                              const UnlabeledSets* remix_sets, const RunOptions& options) {
  config.validate();
  ad::Adam optim(model.params(), {.lr = config.lr});
  ad::Adam remix_optim(model.params(), {.lr = config.lr * config.remix_lr_ratio});
  std::ofstream log_file;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    log_file.open(options.out_dir / "train.log");
    if (!log_file) throw IoError("cannot write " + (options.out_dir / "train.log").string());
    for (const auto& [k, v] : options.config) log_file << "# " << k << '=' << v << '\n';
  }
  std::vector<EpochStats> history;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochStats s = train_epoch(model, dataset, config, optim, epoch, remix_sets, &remix_optim);
    const std::string line = format_epoch(s);
    log_info(line);
    if (log_file.is_open()) log_file << line << '\n' << std::flush;
    if (!options.out_dir.empty() && options.checkpoint_every > 0 && (epoch + 1) % options.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.dmx", epoch + 1);
      model::save_model(options.out_dir / name, model);
    }
    if (options.on_epoch) options.on_epoch(s);
    history.push_back(s);
  }
  if (!options.out_dir.empty()) model::save_model(options.out_dir / "final.dmx", model);
  return history;
}

}  // namespace dmx::train
