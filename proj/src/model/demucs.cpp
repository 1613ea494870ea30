// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dmx/model/demucs.hpp"

#include <algorithm>
#include <string>

#include "dmx/error.hpp"
#include "dmx/rng.hpp"

namespace dmx::model {

using ad::Param;
using ad::Shape;
using ad::Tensor;

void ModelConfig::validate() const {
  if (depth < 1) throw ContractError("model depth must be >= 1");
  if (!(kernel > stride && stride >= 1)) throw ContractError("model needs kernel > stride >= 1");
  if (input_channels < 1 || initial_channels < 1 || growth < 1 || sources < 1)
    throw ContractError("model channel counts must be positive");
  if (use_bilstm && lstm_layers < 1) throw ContractError("BiLSTM needs at least one layer");
  if (rescale_reference < 0.0) throw ContractError("rescale reference must be >= 0");
  if (sample_rate < 1) throw ContractError("model sample rate must be positive");
}

int ModelConfig::channels(int i) const {
  if (i == 0) return input_channels;
  int c = initial_channels;
  for (int k = 1; k < i; ++k) c *= growth;
  return c;
}

ad::ParamList Model::params() {
  ad::ParamList out;
  for (auto& e : encoder)
    for (Param* p : {&e.conv_w, &e.conv_b, &e.rewrite_w, &e.rewrite_b}) out.push_back(p);
  for (auto& [f, b] : lstm)
    for (LstmDirection* d : {&f, &b})
      for (Param* p : {&d->w_ih, &d->w_hh, &d->bias}) out.push_back(p);
  if (config.use_bilstm) {
    out.push_back(&post_w);
    out.push_back(&post_b);
  }
  for (auto& d : decoder)
    for (Param* p : {&d.conv_w, &d.conv_b, &d.rewrite_w, &d.rewrite_b, &d.deconv_w, &d.deconv_b}) out.push_back(p);
  return out;
}

std::size_t Model::num_parameters() { return ad::count_elements(params()); }

namespace {

Param make_param(std::string name, const Shape& shape, std::size_t fan_in, Rng& rng, bool rescalable) {
  Param p;
  p.name = std::move(name);
  p.tensor = ad::he_init(shape, fan_in, rng);
  p.rescalable = rescalable;
  return p;
}

}  // namespace

Model new_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  Rng rng(seed);
  const auto L = static_cast<std::size_t>(config.depth);
  const auto K = static_cast<std::size_t>(config.kernel);
  auto ch = [&](std::size_t i) { return static_cast<std::size_t>(config.channels(static_cast<int>(i))); };

  for (std::size_t i = 1; i <= L; ++i) {
    const std::string n = "encoder." + std::to_string(i) + ".";
    const std::size_t cin = ch(i - 1), c = ch(i), cr = config.use_glu ? 2 * c : c;
    EncoderLayer e;
    e.conv_w = make_param(n + "conv.weight", {c, cin, K}, cin * K, rng, true);
    e.conv_b = make_param(n + "conv.bias", {c}, cin * K, rng, false);
    e.rewrite_w = make_param(n + "rewrite.weight", {cr, c, 1}, c, rng, true);
    e.rewrite_b = make_param(n + "rewrite.bias", {cr}, c, rng, false);
    m.encoder.push_back(std::move(e));
  }

  const std::size_t cl = ch(L);
  if (config.use_bilstm) {
    for (int l = 0; l < config.lstm_layers; ++l) {
      const std::size_t in = l == 0 ? cl : 2 * cl;
      std::pair<LstmDirection, LstmDirection> layer;
      int dir = 0;
      for (LstmDirection* d : {&layer.first, &layer.second}) {
        const std::string n = "lstm." + std::to_string(l) + (dir++ == 0 ? ".forward." : ".backward.");
        d->w_ih = make_param(n + "w_ih", {4 * cl, in}, in, rng, config.rescale_lstm);
        d->w_hh = make_param(n + "w_hh", {4 * cl, cl}, cl, rng, false);
        d->bias.name = n + "bias";
        d->bias.tensor = Tensor({4 * cl}, 0.0f);
        std::fill_n(d->bias.tensor.values().begin() + static_cast<std::ptrdiff_t>(cl), cl, 1.0f);
      }
      m.lstm.push_back(std::move(layer));
    }
    m.post_w = make_param("post.weight", {cl, 2 * cl, 1}, 2 * cl, rng, true);
    m.post_b = make_param("post.bias", {cl}, 2 * cl, rng, false);
  }

  for (std::size_t i = L; i >= 1; --i) {
    const std::string n = "decoder." + std::to_string(i) + ".";
    const std::size_t c = ch(i), cr = config.use_glu ? 2 * c : c;
    const std::size_t cout = i == 1 ? static_cast<std::size_t>(config.sources) * ch(0) : ch(i - 1);
    DecoderLayer d;
    d.conv_w = make_param(n + "conv.weight", {c, c, 3}, 3 * c, rng, true);
    d.conv_b = make_param(n + "conv.bias", {c}, 3 * c, rng, false);
    d.rewrite_w = make_param(n + "rewrite.weight", {cr, 2 * c, 1}, 2 * c, rng, true);
    d.rewrite_b = make_param(n + "rewrite.bias", {cr}, 2 * c, rng, false);
    d.deconv_w = make_param(n + "deconv.weight", {c, cout, K}, cout * K, rng, true);
    d.deconv_b = make_param(n + "deconv.bias", {cout}, cout * K, rng, false);
    m.decoder.push_back(std::move(d));
  }

  if (config.rescale_reference > 0.0)
    for (Param* p : m.params())
      if (p->rescalable) ad::rescale_param(*p, config.rescale_reference);
  for (Param* p : m.params()) p->tensor.set_requires_grad(true);
  return m;
}

std::size_t parameter_count(const ModelConfig& config) {
  config.validate();
  const auto L = static_cast<std::size_t>(config.depth), K = static_cast<std::size_t>(config.kernel);
  auto ch = [&](std::size_t i) { return static_cast<std::size_t>(config.channels(static_cast<int>(i))); };
  const std::size_t glu = config.use_glu ? 2 : 1;
  std::size_t n = 0;
  for (std::size_t i = 1; i <= L; ++i) {
    const std::size_t c = ch(i), cout = i == 1 ? static_cast<std::size_t>(config.sources) * ch(0) : ch(i - 1);
    n += c * ch(i - 1) * K + c;             // encoder conv
    n += glu * c * c + glu * c;             // encoder 1x1
    n += c * c * 3 + c;                     // decoder conv
    n += glu * c * 2 * c + glu * c;         // decoder 1x1
    n += c * cout * K + cout;               // decoder transposed conv
  }
  if (config.use_bilstm) {
    const std::size_t cl = ch(L);
    for (int l = 0; l < config.lstm_layers; ++l) {
      const std::size_t in = l == 0 ? cl : 2 * cl;
      n += 2 * (4 * cl * in + 4 * cl * cl + 4 * cl);
    }
    n += cl * 2 * cl + cl;
  }
  return n;
}

std::size_t valid_length(std::size_t length, const ModelConfig& config) {
  const auto K = static_cast<std::size_t>(config.kernel), S = static_cast<std::size_t>(config.stride);
  std::size_t t = std::max<std::size_t>(length, 1);
  for (int i = 0; i < config.depth; ++i) t = t <= K ? 1 : (t - K + S - 1) / S + 1;
  for (int i = 0; i < config.depth; ++i) t = (t - 1) * S + K;
  return t;
}

std::size_t encoded_length(std::size_t length, const ModelConfig& config, int levels) {
  const auto K = static_cast<std::size_t>(config.kernel), S = static_cast<std::size_t>(config.stride);
  std::size_t t = length;
  for (int i = 0; i < levels; ++i) {
    if (t < K || (t - K) % S != 0)
      throw ShapeError("length " + std::to_string(length) + " is not valid for the model (level " +
                       std::to_string(i + 1) + ")");
    t = (t - K) / S + 1;
  }
  return t;
}

Tensor forward(const Model& model, const Tensor& mix, ForwardTrace* trace) {
  const ModelConfig& cfg = model.config;
  if (mix.rank() != 3 || mix.dim(1) != static_cast<std::size_t>(cfg.input_channels))
    throw ShapeError("model input must be [B, " + std::to_string(cfg.input_channels) + ", T], got " +
                     ad::shape_str(mix.shape()));
  const std::size_t batch = mix.dim(0), length = mix.dim(2);
  if (valid_length(length, cfg) != length) throw ShapeError("input length " + std::to_string(length) + " is not valid");
  const auto S = static_cast<std::size_t>(cfg.stride);

  auto rewrite = [&](const Tensor& x, const Param& w, const Param& b) {
    Tensor y = ad::conv1d(x, w.effective(), b.effective(), 1);
    return cfg.use_glu ? ad::glu(y, 1) : ad::relu(y);
  };

  Tensor x = mix;
  std::vector<Tensor> skips;
  for (const auto& e : model.encoder) {
    x = ad::relu(ad::conv1d(x, e.conv_w.effective(), e.conv_b.effective(), S));
    x = rewrite(x, e.rewrite_w, e.rewrite_b);
    skips.push_back(x);
  }

  if (cfg.use_bilstm) {
    std::vector<std::pair<ad::LstmWeights, ad::LstmWeights>> w;
    for (const auto& [f, b] : model.lstm)
      w.push_back({{f.w_ih.effective(), f.w_hh.effective(), f.bias.effective()},
                   {b.w_ih.effective(), b.w_hh.effective(), b.bias.effective()}});
    Tensor seq = ad::bilstm(ad::permute(x, {2, 0, 1}), w);
    // Back to channel-major, then the 1x1 reduction.
    x = ad::relu(ad::conv1d(ad::permute(seq, {1, 2, 0}), model.post_w.effective(), model.post_b.effective(), 1));
  }

  if (trace != nullptr) {
    trace->encoder = skips;
    trace->bottleneck = x;
  }

  for (std::size_t j = 0; j < model.decoder.size(); ++j) {
    const auto& d = model.decoder[j];
    const Tensor& skip = skips[skips.size() - 1 - j];
    x = ad::relu(ad::conv1d(x, d.conv_w.effective(), d.conv_b.effective(), 1, 1));
    x = rewrite(ad::concat(x, skip, 1), d.rewrite_w, d.rewrite_b);
    x = ad::conv_transpose1d(x, d.deconv_w.effective(), d.deconv_b.effective(), S);
    if (j + 1 < model.decoder.size()) x = ad::relu(x);
  }
  return ad::reshape(x, {batch, static_cast<std::size_t>(cfg.sources), static_cast<std::size_t>(cfg.input_channels),
                         length});
}

audio::SourceSet separate(const Model& model, const audio::Waveform& wave) {
  const ModelConfig& cfg = model.config;
  if (wave.channels() != static_cast<std::size_t>(cfg.input_channels))
    throw ShapeError("model expects " + std::to_string(cfg.input_channels) + " channels, input has " +
                     std::to_string(wave.channels()));
  if (cfg.sources != static_cast<int>(audio::kNumSources))
    throw ContractError("separate() needs a model with " + std::to_string(audio::kNumSources) + " sources");
  const std::size_t frames = wave.frames(), chans = wave.channels();
  const std::size_t valid = valid_length(frames, cfg);
  const std::size_t left = (valid - frames) / 2;

  std::vector<float> in(chans * valid, 0.0f);
  for (std::size_t c = 0; c < chans; ++c) std::copy_n(wave.channel(c).data(), frames, in.data() + c * valid + left);

  ad::NoGradGuard no_grad;
  Tensor out = forward(model, Tensor({1, chans, valid}, std::move(in)));
  audio::SourceSet set;
  for (std::size_t s = 0; s < audio::kNumSources; ++s) {
    audio::Waveform w(chans, frames, wave.sample_rate());
    for (std::size_t c = 0; c < chans; ++c)
      std::copy_n(out.values().data() + (s * chans + c) * valid + left, frames, w.channel(c).data());
    set.sources[s] = std::move(w);
  }
  return set;
}

ad::CheckpointHeader checkpoint_header(const ModelConfig& c) {
  return {"demucs",
          {{"depth", c.depth},
           {"input_channels", c.input_channels},
           {"initial_channels", c.initial_channels},
           {"growth", c.growth},
           {"kernel", c.kernel},
           {"stride", c.stride},
           {"lstm_layers", c.lstm_layers},
           {"use_glu", c.use_glu ? 1.0 : 0.0},
           {"use_bilstm", c.use_bilstm ? 1.0 : 0.0},
           {"rescale_reference", c.rescale_reference},
           {"rescale_lstm", c.rescale_lstm ? 1.0 : 0.0},
           {"sources", c.sources},
           {"sample_rate", c.sample_rate}}};
}

ModelConfig config_from_header(const ad::CheckpointHeader& h) {
  if (h.kind != "demucs") throw FormatError("checkpoint holds a '" + h.kind + "', not a separator");
  ModelConfig c;
  auto i = [&](const char* k) { return static_cast<int>(h.field(k)); };
  c.depth = i("depth");
  c.input_channels = i("input_channels");
  c.initial_channels = i("initial_channels");
  c.growth = i("growth");
  c.kernel = i("kernel");
  c.stride = i("stride");
  c.lstm_layers = i("lstm_layers");
  c.use_glu = h.field("use_glu") != 0.0;
  c.use_bilstm = h.field("use_bilstm") != 0.0;
  c.rescale_reference = h.field("rescale_reference");
  c.rescale_lstm = h.field("rescale_lstm") != 0.0;
  c.sources = i("sources");
  c.sample_rate = i("sample_rate");
  c.validate();
  return c;
}

void save_model(const std::filesystem::path& path, Model& model) {
  ad::save_checkpoint(path, checkpoint_header(model.config), model.params());
}

Model load_model(const std::filesystem::path& path) {
  auto ck = ad::load_checkpoint(path);
  ModelConfig cfg = config_from_header(ck.header);
  Model m = new_model(cfg, 0);
  ad::restore_params(ck, m.params());
  return m;
}

}  // namespace dmx::model
