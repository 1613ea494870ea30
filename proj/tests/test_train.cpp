// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "dmx/audio/synth.hpp"
#include "dmx/autodiff/ops.hpp"
#include "dmx/error.hpp"
#include "dmx/train/trainer.hpp"
#include "grad_check.hpp"
#include "test_util.hpp"

using namespace dmx;
using namespace dmx::train;
using ad::Tensor;

namespace {

model::ModelConfig tiny_model(std::size_t channels = 1) {
  model::ModelConfig c;
  c.depth = 2;
  c.initial_channels = 4;
  c.input_channels = static_cast<int>(channels);
  c.lstm_layers = 1;
  c.sample_rate = 8000;
  return c;
}

audio::SourceSet random_set(Rng& rng, std::size_t channels, std::size_t frames) {
  audio::SourceSet s;
  for (auto& w : s.sources) w = audio::Waveform(channels, frames, 8000, testing::random_vector(rng, channels * frames, -0.3, 0.3));
  return s;
}

double energy(const audio::Waveform& w) {
  double e = 0.0;
  for (float x : w.samples()) e += static_cast<double>(x) * x;
  return e;
}

audio::TrackDataset small_dataset(std::uint64_t seed, double seconds = 8.0, std::size_t tracks = 2) {
  audio::TrackDataset ds;
  audio::SynthOptions o;
  o.seed = seed;
  o.n_tracks = tracks;
  o.duration_s = seconds;
  o.sample_rate = 8000;
  o.channels = 1;
  for (std::size_t t = 0; t < tracks; ++t) {
    ds.tracks.push_back(audio::synth_track(o, t));
    ds.track_names.push_back("t" + std::to_string(t));
  }
  ds.sample_rate = 8000;
  ds.channels = 1;
  ds.segment_length = 4000;
  ds.segment_stride = 4000;
  return ds;
}

}  // namespace

TEST_CASE("learning-rate schedule is a step function of the epoch") {
  TrainConfig c;
  CHECK(learning_rate(c, 0) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(learning_rate(c, 160) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(learning_rate(c, 320) == doctest::Approx(2e-5).epsilon(1e-12));
  for (int e = 0; e <= 400; ++e) {
    const double expected = 5e-4 / std::pow(5.0, e / 160);
    CHECK(learning_rate(c, e) == doctest::Approx(expected).epsilon(1e-12));
  }
  TrainConfig bad;
  bad.remix_probability = 1.5;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("separation loss conventions and gradient") {
  Rng rng(1);
  Tensor ref = testing::rand_tensor(rng, {2, 4, 2, 16});
  CHECK(separation_loss(ref, ref).item() == 0.0f);
  std::vector<float> shifted(ref.values());
  for (auto& v : shifted) v += 0.1f;
  CHECK(separation_loss(Tensor(ref.shape(), shifted), ref).item() == doctest::Approx(0.4).epsilon(1e-5));
  CHECK(separation_loss(Tensor(ref.shape(), shifted), ref, LossKind::Mse).item() == doctest::Approx(0.04).epsilon(1e-4));
  CHECK_THROWS_AS(separation_loss(ref, Tensor({2, 4, 2, 15})), ShapeError);

  Tensor target = testing::rand_tensor(rng, {1, 4, 2, 8});
  for (LossKind k : {LossKind::L1, LossKind::Mse}) {
    // Residuals kept away from zero where |.| has a kink.
    Tensor est = testing::rand_away_from_zero(rng, {1, 4, 2, 8}, 0.2);
    std::vector<float> e(est.values());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] += target.values()[i];
    Tensor x(est.shape(), e);
    auto f = [&](const std::vector<Tensor>& in) { return separation_loss(in[0], target, k); };
    CHECK(testing::grad_check(f, {x}) < 1e-3);
  }
}

TEST_CASE("augmentation preserves per-source energy and channel structure") {
  Rng rng(2);
  for (std::size_t b : {1u, 5u}) {
    std::vector<audio::SourceSet> batch;
    for (std::size_t i = 0; i < b; ++i) {
      auto s = random_set(rng, 2, 64);
      // Channel 1 is twice channel 0 so shifts shared by both channels are visible.
      for (auto& w : s.sources)
        for (std::size_t t = 0; t < 64; ++t) w.at(1, t) = 2.0f * w.at(0, t);
      batch.push_back(s);
    }
    std::vector<std::array<double, 4>> before(b);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t s = 0; s < 4; ++s) before[i][s] = energy(batch[i][s]);
    auto original = batch;
    Rng a(10);
    augment(batch, a);
    for (std::size_t s = 0; s < 4; ++s) {
      std::vector<double> e0, e1;
      for (std::size_t i = 0; i < b; ++i) {
        e0.push_back(before[i][s]);
        e1.push_back(energy(batch[i][s]));
      }
      std::sort(e0.begin(), e0.end());
      std::sort(e1.begin(), e1.end());
      for (std::size_t i = 0; i < b; ++i) CHECK(e1[i] == doctest::Approx(e0[i]).epsilon(1e-12));
      for (std::size_t i = 0; i < b; ++i) {
        const auto& w = batch[i][s];
        // Either (x, +-2x) or (+-2x, x) up to sign per channel.
        const bool plain = std::abs(std::abs(w.at(1, 3)) - 2.0f * std::abs(w.at(0, 3))) < 1e-6f;
        const bool swapped = std::abs(std::abs(w.at(0, 3)) - 2.0f * std::abs(w.at(1, 3))) < 1e-6f;
        CHECK((plain || swapped));
      }
    }
    if (b == 1)
      for (std::size_t s = 0; s < 4; ++s) CHECK(energy(batch[0][s]) == doctest::Approx(before[0][s]).epsilon(1e-12));
    // Deterministic in the rng.
    auto again = original;
    Rng a2(10);
    augment(again, a2);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t s = 0; s < 4; ++s) CHECK(again[i][s].data() == batch[i][s].data());
    // The mixture is rebuilt from the sources.
    auto bt = make_batch(batch, tiny_model(2));
    const std::size_t tv = bt.mix.dim(2);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t t = 0; t < 64; ++t) {
          float sum = 0.0f;
          for (std::size_t s = 0; s < 4; ++s) sum += batch[i][s].at(c, t);
          CHECK(bt.mix.values()[(i * 2 + c) * tv + bt.left_pad + t] == sum);
        }
  }
}

TEST_CASE("batch padding and cropping") {
  Rng rng(3);
  auto cfg = tiny_model();
  std::vector<audio::SourceSet> items{random_set(rng, 1, 1000), random_set(rng, 1, 1000)};
  auto bt = make_batch(items, cfg);
  CHECK(bt.mix.shape() == ad::Shape{2, 1, model::valid_length(1000, cfg)});
  CHECK(bt.sources.shape() == ad::Shape{2, 4, 1, 1000});
  CHECK(bt.left_pad == (model::valid_length(1000, cfg) - 1000) / 2);
  model::Model m = model::new_model(cfg, 1);
  CHECK(estimate(m, bt).shape() == ad::Shape{2, 4, 1, 1000});
  CHECK_THROWS_AS(make_batch({random_set(rng, 2, 100)}, cfg), ShapeError);
}

TEST_CASE("remix loss degenerate cases") {
  Rng rng(4);
  Tensor est = testing::rand_tensor(rng, {1, 4, 2, 32});
  Tensor iso = testing::rand_tensor(rng, {1, 2, 32});
  Tensor exc = testing::rand_tensor(rng, {1, 2, 32});
  for (std::size_t i : {0u, 1u, 3u}) {
    Tensor est_i = ad::reshape(ad::slice(est, 1, i, 1), {1, 2, 32});
    CHECK(remix_loss(est, iso, exc, i, 0.0).item() == ad::l1_loss(est_i, iso).item());
  }
  // Perfect model: est_i = s_i and the others sum to m_i.
  std::vector<float> perfect(4 * 2 * 32, 0.0f);
  for (std::size_t k = 0; k < 64; ++k) {
    perfect[1 * 64 + k] = iso.values()[k];
    perfect[0 * 64 + k] = exc.values()[k];
  }
  CHECK(remix_loss(Tensor({1, 4, 2, 32}, perfect), iso, exc, 1, 1e-6).item() == 0.0f);
  const float l = remix_loss(est, iso, exc, 3, 0.5).item();
  Tensor rest = ad::add(ad::add(ad::reshape(ad::slice(est, 1, 0, 1), {1, 2, 32}), ad::reshape(ad::slice(est, 1, 1, 1), {1, 2, 32})),
                        ad::reshape(ad::slice(est, 1, 2, 1), {1, 2, 32}));
  CHECK(l == doctest::Approx(ad::l1_loss(ad::reshape(ad::slice(est, 1, 3, 1), {1, 2, 32}), iso).item() +
                             0.5 * ad::l1_loss(rest, exc).item())
                 .epsilon(1e-6));
}

TEST_CASE("remix step leaves the main optimizer untouched") {
  auto ds = small_dataset(5);
  model::Model m = model::new_model(tiny_model(), 6);
  ad::Adam main_opt(m.params()), remix_opt(m.params());
  TrainConfig cfg;
  cfg.batch = 2;
  cfg.remix_enabled = true;
  cfg.remix_probability = 1.0;
  train_epoch(m, ds, cfg, main_opt, 0);
  const auto m1 = main_opt.first_moments(), v1 = main_opt.second_moments();
  const auto steps = main_opt.step_count();

  UnlabeledSets sets;
  Rng rng(7);
  Rng noise(8);
  sets[1].push_back(audio::Waveform(1, 5000, 8000, testing::random_vector(noise, 5000, -0.2, 0.2)));
  auto before = m.params()[0]->tensor.values();
  auto r = remix_step(m, sets, ds, cfg, remix_opt, rng);
  CHECK(r.taken);
  CHECK(r.source == 1);
  CHECK(remix_opt.step_count() == 1);
  CHECK(main_opt.step_count() == steps);
  CHECK(main_opt.first_moments() == m1);
  CHECK(main_opt.second_moments() == v1);
  CHECK(m.params()[0]->tensor.values() != before);
  for (ad::Param* p : m.params()) CHECK((!p->tensor.has_grad() || std::all_of(p->tensor.grad().begin(), p->tensor.grad().end(), [](float g) { return g == 0.0f; })));

  UnlabeledSets only_other;
  only_other[2] = sets[1];
  CHECK_FALSE(remix_step(m, only_other, ds, cfg, remix_opt, rng).taken);
  CHECK_FALSE(remix_step(m, UnlabeledSets{}, ds, cfg, remix_opt, rng).taken);
}

TEST_CASE("training is deterministic and logs every epoch") {
  auto ds = small_dataset(9);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 3;
  cfg.lr = 3e-3;
  cfg.seed = 11;
  cfg.remix_enabled = true;
  UnlabeledSets sets;
  Rng noise(12);
  sets[0].push_back(audio::Waveform(1, 6000, 8000, testing::random_vector(noise, 6000, -0.2, 0.2)));
  testing::TempDir dir("train");
  model::Model a = model::new_model(tiny_model(), 13), b = model::new_model(tiny_model(), 13);
  RunOptions ro;
  ro.out_dir = dir / "a";
  ro.checkpoint_every = 2;
  ro.config = {{"seed", "11"}};
  auto ha = run_training(a, ds, cfg, &sets, ro);
  ro.out_dir = dir / "b";
  auto hb = run_training(b, ds, cfg, &sets, ro);
  REQUIRE(ha.size() == 3);
  auto pa = a.params(), pb = b.params();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->tensor.values() == pb[i]->tensor.values());
  CHECK(testing::file_bytes(dir / "a" / "train.log") == testing::file_bytes(dir / "b" / "train.log"));
  CHECK(testing::file_bytes(dir / "a" / "final.dmx") == testing::file_bytes(dir / "b" / "final.dmx"));
  CHECK(std::filesystem::exists(dir / "a" / "epoch_0002.dmx"));
  std::ifstream log(dir / "a" / "train.log");
  std::string line;
  int epochs = 0;
  while (std::getline(log, line))
    if (line.rfind("epoch=", 0) == 0) ++epochs;
  CHECK(epochs == 3);
  CHECK(ha.back().loss < ha.front().loss);
}
