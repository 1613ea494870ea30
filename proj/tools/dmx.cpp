// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Command-line entry point. Every subcommand reads its settings from, in
// increasing precedence: built-in defaults (desk or paper scale), the
// key=value file given with --config, and explicit flags. The effective
// settings are echoed into every artifact the command writes.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <new>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "dmx/audio/dataset.hpp"
#include "dmx/audio/resample.hpp"
#include "dmx/audio/synth.hpp"
#include "dmx/audio/wav.hpp"
#include "dmx/detector/detector.hpp"
#include "dmx/error.hpp"
#include "dmx/extract/extract.hpp"
#include "dmx/log.hpp"
#include "dmx/metrics/bss.hpp"
#include "dmx/parallel.hpp"
#include "dmx/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace dmx;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Config = std::vector<std::pair<std::string, std::string>>;

struct Key {
  std::string name;
  std::string desk;
  std::string paper;
  std::string help;
};

// One subcommand's settings: declared keys, their flag storage, and the
// merged result.
class Settings {
 public:
  Settings(CLI::App* app, std::vector<Key> keys) : keys_(std::move(keys)) {
    for (const Key& k : keys_) {
      std::string desc = k.help + " (default " + k.desk;
      if (k.paper != k.desk) desc += "; paper " + k.paper;
      desc += ")";
      flags_[k.name] = app->add_option("--" + k.name, raw_[k.name], desc);
    }
  }

  void resolve(bool paper, const std::map<std::string, std::string>& file) {
    for (const Key& k : keys_) {
      std::string v = paper ? k.paper : k.desk;
      if (auto it = file.find(k.name); it != file.end()) v = it->second;
      if (flags_[k.name]->count() > 0) v = raw_[k.name];
      values_[k.name] = v;
    }
  }

  const std::string& str(const std::string& k) const { return values_.at(k); }

  double num(const std::string& k) const {
    const std::string& v = str(k);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw UsageError("--" + k + ": expected a number, got '" + v + "'");
  }

  int integer(const std::string& k) const {
    const double d = num(k);
    if (d != static_cast<double>(static_cast<long long>(d))) throw UsageError("--" + k + ": expected an integer");
    return static_cast<int>(d);
  }

  std::size_t count(const std::string& k) const {
    const int v = integer(k);
    if (v < 0) throw UsageError("--" + k + ": must be non-negative");
    return static_cast<std::size_t>(v);
  }

  bool flag(const std::string& k) const {
    const std::string& v = str(k);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw UsageError("--" + k + ": expected true or false, got '" + v + "'");
  }

  Config effective() const {
    Config out;
    for (const Key& k : keys_) out.emplace_back(k.name, values_.at(k.name));
    return out;
  }

 private:
  std::vector<Key> keys_;
  std::map<std::string, std::string> raw_;
  std::map<std::string, CLI::Option*> flags_;
  std::map<std::string, std::string> values_;
};

struct Globals {
  std::uint64_t seed = 0;
  std::string config_file;
  std::size_t workers = 1;
  bool paper = false;
  std::string log_level = "info";
};

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::map<std::string, std::string> out;
  if (path.empty()) return out;
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path);
  std::string line;
  int lineno = 0;
  const auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

Config with_globals(const Globals& g, Config c) {
  c.insert(c.begin(), {{"seed", std::to_string(g.seed)}, {"paper_config", g.paper ? "true" : "false"}});
  return c;
}

void write_config(const fs::path& path, const Config& config) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& [k, v] : config) out << k << '=' << v << '\n';
}

std::string comment_block(const Config& config) {
  std::string s;
  for (const auto& [k, v] : config) s += "# " + k + '=' + v + '\n';
  return s;
}

void emit(const std::string& out_path, const std::string& text) {
  if (out_path.empty() || out_path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw IoError("cannot write " + out_path);
  out << text;
}

audio::Waveform match_layout(const audio::Waveform& w, int rate, std::size_t channels) {
  audio::Waveform out = w;
  if (channels == 1 && out.channels() == 2) out = audio::downmix_mono(out);
  if (out.channels() != channels)
    throw ShapeError("audio has " + std::to_string(out.channels()) + " channels, expected " + std::to_string(channels));
  if (out.sample_rate() != rate) out = audio::resample(out, rate);
  return out;
}

// ---------------------------------------------------------------- keys

std::vector<Key> synth_keys() {
  return {{"tracks", "4", "4", "number of tracks"},
          {"duration", "30", "30", "seconds per track"},
          {"rate", "44100", "44100", "sample rate"},
          {"channels", "2", "2", "1 or 2"},
          {"silences", "1", "1", "expected planted silences per track"},
          {"silence_min", "6", "6", "shortest planted silence, seconds"},
          {"silence_max", "10", "10", "longest planted silence, seconds"}};
}

std::vector<Key> model_keys() {
  return {{"depth", "2", "6", "encoder/decoder levels"},
          {"channels", "4", "48", "channels of the first encoder level"},
          {"lstm_layers", "2", "2", "BiLSTM layers"},
          {"glu", "true", "true", "gated linear units in the rewrite convolutions"},
          {"bilstm", "true", "true", "BiLSTM bottleneck"},
          {"rescale", "0.1", "0.1", "weight rescaling reference, 0 disables"},
          {"rescale_lstm", "false", "false", "also rescale LSTM input weights"}};
}

std::vector<Key> train_keys() {
  std::vector<Key> k = {{"epochs", "20", "400", "training epochs"},
                        {"batch", "4", "128", "batch size"},
                        {"lr", "5e-4", "5e-4", "learning rate"},
                        {"lr_decay_epochs", "160", "160", "epochs between learning-rate drops"},
                        {"loss", "l1", "l1", "l1 or mse"},
                        {"augment", "true", "true", "data augmentation"},
                        {"rate", "22050", "44100", "training sample rate, 0 keeps the stored rate"},
                        {"mono", "false", "false", "downmix to mono"},
                        {"segment", "5", "5", "segment seconds"},
                        {"stride", "0.5", "0.5", "segment hop seconds"},
                        {"checkpoint_every", "0", "10", "epochs between checkpoints, 0 keeps only the final one"},
                        {"remix_probability", "0.25", "0.25", "probability of a remix step after a batch"},
                        {"remix_lr_ratio", "0.1", "0.1", "remix learning rate relative to the main one"},
                        {"remix_lambda", "1e-6", "1e-6", "weight of the remix reconstruction term"},
                        {"unlabeled", "", "", "root of extracted sets (D_<source>/manifest.tsv)"}};
  auto m = model_keys();
  k.insert(k.end(), m.begin(), m.end());
  return k;
}

std::vector<Key> detector_keys() {
  return {{"det_epochs", "40", "40", "detector epochs"},
          {"det_batch", "64", "64", "detector batch size"},
          {"det_lr", "5e-4", "5e-4", "detector learning rate"},
          {"det_crop", "45", "45", "windows per training crop"},
          {"det_scale", "desk", "paper", "layer widths: desk or paper"},
          {"feature_cache", "", "", "directory for cached scattering features"}};
}

// ---------------------------------------------------------------- commands

int cmd_synth(const Globals& g, const Settings& s, const std::string& out) {
  audio::SynthOptions o;
  o.seed = g.seed;
  o.n_tracks = s.count("tracks");
  o.duration_s = s.num("duration");
  o.sample_rate = s.integer("rate");
  o.channels = s.count("channels");
  audio::SilencePlanOptions po;
  po.intervals_per_track = s.num("silences");
  po.min_seconds = s.num("silence_min");
  po.max_seconds = s.num("silence_max");
  o.silence_plan = audio::random_silence_plan(g.seed, o.n_tracks, o.duration_s, po);
  fs::create_directories(out);
  audio::synth_corpus(out, o);
  const Config config = with_globals(g, s.effective());
  write_config(fs::path(out) / "config.txt", config);
  std::ofstream plan(fs::path(out) / "silence_plan.tsv");
  plan << comment_block(config);
  char buf[128];
  for (const auto& iv : o.silence_plan) {
    std::snprintf(buf, sizeof buf, "track_%03zu\t%s\t%.9g\t%.9g\n", iv.track,
                  std::string(audio::kSourceNames[iv.source]).c_str(), iv.start_s, iv.end_s);
    plan << buf;
  }
  std::cout << "wrote " << o.n_tracks << " tracks and " << o.silence_plan.size() << " planted silences to " << out
            << '\n';
  return kOk;
}

model::ModelConfig model_config(const Settings& s, const audio::TrackDataset& ds) {
  model::ModelConfig c;
  c.depth = s.integer("depth");
  c.initial_channels = s.integer("channels");
  c.lstm_layers = s.integer("lstm_layers");
  c.use_glu = s.flag("glu");
  c.use_bilstm = s.flag("bilstm");
  c.rescale_reference = s.num("rescale");
  c.rescale_lstm = s.flag("rescale_lstm");
  c.input_channels = static_cast<int>(ds.channels);
  c.sample_rate = ds.sample_rate;
  c.validate();
  return c;
}

int cmd_train(const Globals& g, const Settings& s, const std::string& data, const std::string& out, bool remix) {
  audio::DatasetOptions d;
  d.sample_rate = s.integer("rate");
  d.channels = s.flag("mono") ? 1 : 0;
  d.segment_seconds = s.num("segment");
  d.stride_seconds = s.num("stride");
  const audio::TrackDataset ds = audio::load_dataset(data, d);
  if (ds.tracks.empty()) throw DatasetError("no tracks under " + data);

  train::TrainConfig tc;
  tc.epochs = s.integer("epochs");
  tc.batch = s.count("batch");
  tc.lr = s.num("lr");
  tc.lr_decay_epochs = s.integer("lr_decay_epochs");
  const std::string loss = s.str("loss");
  if (loss != "l1" && loss != "mse") throw UsageError("--loss: expected l1 or mse");
  tc.loss = loss == "l1" ? train::LossKind::L1 : train::LossKind::Mse;
  tc.augment = s.flag("augment");
  tc.remix_enabled = remix;
  tc.remix_probability = s.num("remix_probability");
  tc.remix_lr_ratio = s.num("remix_lr_ratio");
  tc.remix_lambda = s.num("remix_lambda");
  tc.seed = g.seed;
  tc.validate();

  train::UnlabeledSets sets;
  if (remix) {
    const std::string root = s.str("unlabeled");
    if (root.empty()) throw UsageError("remix-train needs --unlabeled <root of extracted sets>");
    std::size_t total = 0;
    for (std::size_t src = 0; src < audio::kNumSources; ++src) {
      for (const auto& w : extract::load_unlabeled_set(root, src))
        sets[src].push_back(match_layout(w, ds.sample_rate, ds.channels));
      total += sets[src].size();
    }
    log_info("remix: loaded " + std::to_string(total) + " unlabeled excerpts");
  }

  model::Model m = model::new_model(model_config(s, ds), g.seed);
  train::RunOptions ro;
  ro.out_dir = out;
  ro.checkpoint_every = s.integer("checkpoint_every");
  ro.config = with_globals(g, s.effective());
  const auto history = train::run_training(m, ds, tc, remix ? &sets : nullptr, ro);
  write_config(fs::path(out) / "config.txt", ro.config);
  std::cout << "trained " << history.size() << " epochs; final loss "
            << (history.empty() ? 0.0 : history.back().loss) << "; checkpoint " << (fs::path(out) / "final.dmx").string()
            << '\n';
  return kOk;
}

int cmd_separate(const Globals& g, const std::string& ckpt, const std::string& input, const std::string& out) {
  const model::Model m = model::load_model(ckpt);
  const audio::Waveform wave = audio::read_wav(input);
  const std::size_t channels = static_cast<std::size_t>(m.config.input_channels);
  const audio::SourceSet est = model::separate(m, match_layout(wave, m.config.sample_rate, channels));
  fs::create_directories(out);
  for (std::size_t s = 0; s < audio::kNumSources; ++s) {
    audio::Waveform w = est[s].sample_rate() == wave.sample_rate() ? est[s] : audio::resample(est[s], wave.sample_rate());
    if (w.frames() != wave.frames()) {
      audio::Waveform fit(w.channels(), wave.frames(), wave.sample_rate());
      for (std::size_t c = 0; c < w.channels(); ++c)
        for (std::size_t t = 0; t < std::min(w.frames(), wave.frames()); ++t) fit.at(c, t) = w.at(c, t);
      w = std::move(fit);
    }
    audio::write_wav(fs::path(out) / (std::string(audio::kSourceNames[s]) + ".wav"), w);
  }
  write_config(fs::path(out) / "config.txt",
               with_globals(g, {{"checkpoint", ckpt}, {"input", input}, {"model_rate", std::to_string(m.config.sample_rate)}}));
  std::cout << "wrote 4 sources to " << out << '\n';
  return kOk;
}

int cmd_evaluate(const Globals& g, const Settings& s, const std::string& est_root, const std::string& ref_root,
                 const std::string& out) {
  const double frame = s.num("frame");
  const auto dirs = audio::list_track_dirs(ref_root);
  if (dirs.empty()) throw DatasetError("no reference tracks under " + ref_root);
  std::vector<metrics::TrackMetrics> tracks(dirs.size());
  parallel_for(dirs.size(), g.workers, [&](std::size_t i) {
    const std::string name = dirs[i].filename().string();
    audio::SourceSet ref, est;
    for (std::size_t src = 0; src < audio::kNumSources; ++src) {
      const std::string file = std::string(audio::kSourceNames[src]) + ".wav";
      ref[src] = audio::read_wav(dirs[i] / file);
      est[src] = audio::read_wav(fs::path(est_root) / name / file);
    }
    tracks[i] = metrics::evaluate_track(est, ref, frame, name);
  });
  const auto report = metrics::aggregate(tracks);
  emit(out, metrics::report_json(report, with_globals(g, {{"frame", s.str("frame")},
                                                          {"estimates", est_root},
                                                          {"references", ref_root}})));
  return kOk;
}

int cmd_detect(const Globals& g, const std::string& ckpt, const std::string& input, const std::string& out) {
  detector::DetectorModel m = detector::load_detector(ckpt);
  const audio::Waveform wave = audio::read_wav(input);
  const ad::Tensor feats = detector::scatter2(detector::scatter_input(wave));
  const auto probs = detector::window_probabilities(m, feats);
  std::ostringstream text;
  text << comment_block(with_globals(g, {{"checkpoint", ckpt}, {"input", input}}));
  text << "window\tstart_s\tend_s";
  for (auto name : audio::kSourceNames) text << '\t' << name;
  text << '\n';
  char buf[64];
  for (std::size_t w = 0; w < probs[0].size(); ++w) {
    const auto [a, b] = detector::window_span(w, wave.frames(), wave.sample_rate());
    std::snprintf(buf, sizeof buf, "%zu\t%.6f\t%.6f", w, static_cast<double>(a) / wave.sample_rate(),
                  static_cast<double>(b) / wave.sample_rate());
    text << buf;
    for (std::size_t s = 0; s < audio::kNumSources; ++s) {
      std::snprintf(buf, sizeof buf, "\t%.6f", probs[s][w]);
      text << buf;
    }
    text << '\n';
  }
  emit(out, text.str());
  return kOk;
}

std::vector<detector::DetectorExample> load_examples(const Globals& g, const Settings& s, const std::string& data) {
  const auto dirs = audio::list_track_dirs(data);
  if (dirs.empty()) throw DatasetError("no labeled tracks under " + data);
  std::vector<detector::DetectorExample> examples(dirs.size());
  const std::string cache = s.str("feature_cache");
  parallel_for(dirs.size(), g.workers, [&](std::size_t i) {
    examples[i] = detector::make_example(audio::load_track_dir(dirs[i]), dirs[i].filename().string(), cache);
  });
  return examples;
}

int cmd_train_detector(const Globals& g, const Settings& s, const std::string& data, const std::string& out) {
  const auto examples = load_examples(g, s, data);
  const std::string scale = s.str("det_scale");
  if (scale != "desk" && scale != "paper") throw UsageError("--det_scale: expected desk or paper");
  const detector::DetectorConfig dc = scale == "desk" ? detector::DetectorConfig::desk() : detector::DetectorConfig{};
  detector::DetectorTrainOptions o;
  o.epochs = s.integer("det_epochs");
  o.batch = s.count("det_batch");
  o.lr = s.num("det_lr");
  o.crop_windows = s.count("det_crop");
  o.seed = g.seed;
  std::vector<detector::DetectorEpoch> log;
  detector::DetectorModel m = detector::train_detector(examples, dc, o, &log);
  detector::save_detector(out, m);
  std::ofstream lf(out + ".log");
  lf << comment_block(with_globals(g, s.effective()));
  char buf[96];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "epoch=%d loss=%.9g batches=%zu\n", e.epoch, e.loss, e.batches);
    lf << buf;
  }
  std::cout << "trained detector for " << log.size() << " epochs; checkpoint " << out << '\n';
  return kOk;
}

int cmd_calibrate(const Globals& g, const Settings& s, const std::string& ckpt, const std::string& data,
                  const std::string& out) {
  detector::DetectorModel m = detector::load_detector(ckpt);
  const auto examples = load_examples(g, s, data);
  const auto cal = extract::calibrate_thresholds(m, examples);
  Config config = with_globals(g, {{"checkpoint", ckpt}, {"data", data}});
  extract::save_thresholds(out, cal, config);
  for (std::size_t src = 0; src < audio::kNumSources; ++src) {
    const auto& t = cal.sources[src];
    std::cout << audio::kSourceNames[src] << ": "
              << (t.threshold ? "p=" + std::to_string(*t.threshold) : std::string("not extractable"))
              << " precision=" << t.precision << " selected=" << t.selected << " windows=" << t.windows << '\n';
  }
  return kOk;
}

int cmd_extract(const Globals& g, const Settings& s, const std::string& ckpt, const std::string& thresholds,
                const std::string& corpus, const std::string& out) {
  detector::DetectorModel m = detector::load_detector(ckpt);
  const auto cal = extract::load_thresholds(thresholds);
  extract::BuildOptions o;
  o.workers = g.workers;
  o.min_seconds = s.num("min_seconds");
  o.feature_cache = s.str("feature_cache");
  o.config = with_globals(g, {{"checkpoint", ckpt}, {"thresholds", thresholds}, {"corpus", corpus},
                              {"min_seconds", s.str("min_seconds")}});
  const auto sets = extract::build_unlabeled_sets(m, cal, corpus, out, o);
  std::cout << "tracks=" << sets.tracks << " failures=" << sets.failures;
  for (std::size_t src = 0; src < audio::kNumSources; ++src)
    std::cout << ' ' << audio::kSourceNames[src] << '=' << sets.rows[src].size();
  std::cout << '\n';
  return sets.failures > 0 && sets.failures == sets.tracks ? kData : kOk;
}

int exit_code(const Error& e) {
  switch (e.kind()) {
    case Error::Kind::Numeric:
      return kNumeric;
    case Error::Kind::Contract:
      return kUsage;
    default:
      return kData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dmx: waveform source separation with silent-source extraction and remixing"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "random seed for every stochastic step");
  app.add_option("--config", g.config_file, "key=value settings file; flags take precedence");
  app.add_option("--workers", g.workers, "worker threads for per-track work")->check(CLI::PositiveNumber);
  app.add_flag("--paper-config", g.paper, "use paper-scale defaults instead of desk-scale ones");
  app.add_option("--log-level", g.log_level, "debug, info, warn, error or off");

  std::string a, b, c, d;
  auto* synth = app.add_subcommand("synth", "write a synthetic corpus with planted silences");
  synth->add_option("out", a, "output corpus directory")->required();
  Settings synth_s(synth, synth_keys());

  auto* train = app.add_subcommand("train", "train a separator");
  train->add_option("data", a, "corpus root")->required();
  train->add_option("out", b, "output directory for log and checkpoints")->required();
  Settings train_s(train, train_keys());

  auto* remix = app.add_subcommand("remix-train", "train a separator with the remix step on extracted sets");
  remix->add_option("data", a, "labeled corpus root")->required();
  remix->add_option("out", b, "output directory for log and checkpoints")->required();
  Settings remix_s(remix, train_keys());

  auto* separate = app.add_subcommand("separate", "split a mixture into four source WAVs");
  separate->add_option("checkpoint", a, "separator checkpoint")->required();
  separate->add_option("input", b, "mixture WAV")->required();
  separate->add_option("out", c, "output directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "framewise SDR/SIR/SAR with median aggregation");
  evaluate->add_option("estimates", a, "root of <track>/<source>.wav estimates")->required();
  evaluate->add_option("references", b, "root of <track>/<source>.wav references")->required();
  evaluate->add_option("--out", c, "report path (default: standard output)");
  Settings eval_s(evaluate, {{"frame", "1", "1", "frame length in seconds"}});

  auto* detect = app.add_subcommand("detect", "per-window silent-source probabilities");
  detect->add_option("checkpoint", a, "detector checkpoint")->required();
  detect->add_option("input", b, "WAV file")->required();
  detect->add_option("--out", c, "table path (default: standard output)");

  auto* train_det = app.add_subcommand("train-detector", "train the silent-source detector on labeled tracks");
  train_det->add_option("data", a, "labeled corpus root")->required();
  train_det->add_option("out", b, "detector checkpoint path")->required();
  Settings det_s(train_det, detector_keys());

  auto* calibrate = app.add_subcommand("calibrate", "choose per-source probability thresholds");
  calibrate->add_option("checkpoint", a, "detector checkpoint")->required();
  calibrate->add_option("data", b, "labeled calibration corpus root")->required();
  calibrate->add_option("out", c, "threshold file")->required();
  Settings cal_s(calibrate, {{"feature_cache", "", "", "directory for cached scattering features"}});

  auto* extract = app.add_subcommand("extract", "harvest excerpts with a silent source from unlabeled mixtures");
  extract->add_option("checkpoint", a, "detector checkpoint")->required();
  extract->add_option("thresholds", b, "threshold file from calibrate")->required();
  extract->add_option("corpus", c, "root of <track>/mixture.wav")->required();
  extract->add_option("out", d, "output root for D_<source> sets")->required();
  Settings ext_s(extract, {{"min_seconds", "5", "5", "shortest excerpt kept, seconds"},
                           {"feature_cache", "", "", "directory for cached scattering features"}});

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (g.log_level == "debug") set_log_level(LogLevel::Debug);
    else if (g.log_level == "info") set_log_level(LogLevel::Info);
    else if (g.log_level == "warn") set_log_level(LogLevel::Warn);
    else if (g.log_level == "error") set_log_level(LogLevel::Error);
    else if (g.log_level == "off") set_log_level(LogLevel::Off);
    else throw UsageError("--log-level: unknown level '" + g.log_level + "'");

    const auto file = read_config_file(g.config_file);
    if (synth->parsed()) {
      synth_s.resolve(g.paper, file);
      return cmd_synth(g, synth_s, a);
    }
    if (train->parsed()) {
      train_s.resolve(g.paper, file);
      return cmd_train(g, train_s, a, b, false);
    }
    if (remix->parsed()) {
      remix_s.resolve(g.paper, file);
      return cmd_train(g, remix_s, a, b, true);
    }
    if (separate->parsed()) return cmd_separate(g, a, b, c);
    if (evaluate->parsed()) {
      eval_s.resolve(g.paper, file);
      return cmd_evaluate(g, eval_s, a, b, c);
    }
    if (detect->parsed()) return cmd_detect(g, a, b, c);
    if (train_det->parsed()) {
      det_s.resolve(g.paper, file);
      return cmd_train_detector(g, det_s, a, b);
    }
    if (calibrate->parsed()) {
      cal_s.resolve(g.paper, file);
      return cmd_calibrate(g, cal_s, a, b, c);
    }
    if (extract->parsed()) {
      ext_s.resolve(g.paper, file);
      return cmd_extract(g, ext_s, a, b, c, d);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::bad_alloc&) {
    std::cerr << "error: out of memory\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
