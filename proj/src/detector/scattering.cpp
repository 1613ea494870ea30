// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dmx/detector/scattering.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <mutex>

#include "dmx/audio/resample.hpp"
#include "dmx/autodiff/checkpoint.hpp"
#include "dmx/error.hpp"
#include "dmx/log.hpp"

namespace dmx::detector {
namespace {

constexpr double kHalfMaxWidth = 2.3548200450309493;  // 2 sqrt(2 ln 2)
constexpr int kDecimate1 = 4;                         // order 1 runs at 4 kHz
constexpr int kDecimate2 = 16;                        // order 2 runs at 1 kHz
constexpr std::size_t kMinPadding = 32768;
constexpr double kFilterSupport = 8.0;  // in sigmas
constexpr double kLowpassSupport = 4.0;
constexpr int kPlanVersion = 1;

// FFTW planning is not thread-safe; execution is.
std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

template <typename T>
struct FftwBuffer {
  explicit FftwBuffer(std::size_t n) : n(n), ptr(static_cast<T*>(fftw_malloc(sizeof(T) * std::max<std::size_t>(n, 1)))) {
    if (!ptr) throw std::bad_alloc();
    std::memset(static_cast<void*>(ptr), 0, sizeof(T) * n);
  }
  ~FftwBuffer() { fftw_free(ptr); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  void zero() { std::memset(static_cast<void*>(ptr), 0, sizeof(T) * n); }
  std::size_t n;
  T* ptr;
};

class Plan {
 public:
  explicit Plan(fftw_plan p) : p_(p) {
    if (!p_) throw NumericError("FFT planning failed");
  }
  ~Plan() {
    std::lock_guard<std::mutex> lock(plan_mutex());
    fftw_destroy_plan(p_);
  }
  Plan(const Plan&) = delete;
  Plan& operator=(const Plan&) = delete;
  void run() const { fftw_execute(p_); }

 private:
  fftw_plan p_;
};

Plan make_r2c(std::size_t n, double* in, fftw_complex* out) {
  std::lock_guard<std::mutex> lock(plan_mutex());
  return Plan(fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE));
}

Plan make_c2c_inverse(std::size_t n, fftw_complex* in, fftw_complex* out) {
  std::lock_guard<std::mutex> lock(plan_mutex());
  return Plan(fftw_plan_dft_1d(static_cast<int>(n), in, out, FFTW_BACKWARD, FFTW_ESTIMATE));
}

bool five_smooth(std::size_t n) {
  for (std::size_t p : {2u, 3u, 5u})
    while (n % p == 0) n /= p;
  return n == 1;
}

std::size_t padded_length(std::size_t n) {
  std::size_t m = (n + kMinPadding + 15) / 16;
  while (!five_smooth(m)) ++m;
  return 16 * m;
}

// Analytic band-pass applied to a one-sided spectrum of length n_fft (bins
// 0..n_fft/2) and sampled every `decimate` points: folding the spectrum
// modulo n_fft / decimate gives those samples exactly. Writes |y| to out.
void bandpass_modulus(const fftw_complex* spectrum, std::size_t n_fft, double rate, double center, double sigma,
                      std::size_t decimate, FftwBuffer<fftw_complex>& fold, FftwBuffer<fftw_complex>& time,
                      const Plan& inverse, std::vector<double>& out) {
  const std::size_t m = n_fft / decimate;
  fold.zero();
  const double bin_hz = rate / static_cast<double>(n_fft);
  const double lo_hz = std::max(center - kFilterSupport * sigma, 0.0);
  const double hi_hz = center + kFilterSupport * sigma;
  const std::size_t lo = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(lo_hz / bin_hz)));
  const std::size_t hi = std::min<std::size_t>(n_fft / 2, static_cast<std::size_t>(std::ceil(hi_hz / bin_hz)));
  for (std::size_t f = lo; f <= hi; ++f) {
    const double d = (static_cast<double>(f) * bin_hz - center) / sigma;
    const double g = 2.0 * std::exp(-0.5 * d * d);
    const std::size_t j = f % m;
    fold.ptr[j][0] += g * spectrum[f][0];
    fold.ptr[j][1] += g * spectrum[f][1];
  }
  inverse.run();
  const double norm = 1.0 / static_cast<double>(n_fft);
  out.resize(m);
  for (std::size_t i = 0; i < m; ++i) out[i] = std::hypot(time.ptr[i][0], time.ptr[i][1]) * norm;
}

std::vector<double> gaussian_window(double std_samples, std::size_t half) {
  std::vector<double> w(2 * half + 1);
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = (static_cast<double>(i) - static_cast<double>(half)) / std_samples;
    w[i] = std::exp(-0.5 * d * d);
    total += w[i];
  }
  for (auto& v : w) v /= total;
  return w;
}

// Averages u around each window center: center_w = first + w * hop.
void lowpass(const std::vector<double>& u, const std::vector<double>& kernel, std::size_t first, std::size_t hop,
             std::size_t windows, float* out) {
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(u.size());
  for (std::size_t w = 0; w < windows; ++w) {
    const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(first + w * hop);
    const std::ptrdiff_t a = std::max<std::ptrdiff_t>(c - half, 0);
    const std::ptrdiff_t b = std::min<std::ptrdiff_t>(c + half, n - 1);
    double acc = 0.0;
    for (std::ptrdiff_t i = a; i <= b; ++i) acc += kernel[static_cast<std::size_t>(i - c + half)] * u[static_cast<std::size_t>(i)];
    out[w] = static_cast<float>(acc);
  }
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace

FilterPlan default_plan() {
  FilterPlan p;
  const double top = 0.35 * kScatterRate;
  const double first_q = (1.0 - std::pow(2.0, -1.0 / 8.0)) / kHalfMaxWidth;
  for (int k = 0; k < 48; ++k) {
    const double xi = top * std::pow(2.0, -k / 8.0);
    p.first_centers.push_back(xi);
    p.first_sigmas.push_back(xi * first_q);
  }
  for (int m = 0; m < 6; ++m) {
    const double xi = 4.0 * std::pow(2.0, m);
    p.second_centers.push_back(xi);
    p.second_sigmas.push_back(xi * 0.5 / kHalfMaxWidth);
  }
  return p;
}

std::size_t window_count(std::size_t frames, int sample_rate) {
  const std::size_t n = sample_rate == kScatterRate
                            ? frames
                            : static_cast<std::size_t>(std::llround(static_cast<double>(frames) * kScatterRate /
                                                                    static_cast<double>(sample_rate)));
  return n < kWindowSamples ? 0 : (n - kWindowSamples) / kHopSamples + 1;
}

std::pair<std::size_t, std::size_t> window_span(std::size_t w, std::size_t frames, int sample_rate) {
  const double ratio = static_cast<double>(sample_rate) / kScatterRate;
  const auto start = static_cast<std::size_t>(std::llround(static_cast<double>(w * kHopSamples) * ratio));
  const auto length = static_cast<std::size_t>(std::llround(static_cast<double>(kWindowSamples) * ratio));
  return {std::min(start, frames), std::min(start + length, frames)};
}

ad::Tensor scatter2(const audio::Waveform& wave, const FilterPlan& plan) {
  if (wave.channels() != 1 || wave.sample_rate() != kScatterRate)
    throw ContractError("scatter2 expects mono 16 kHz audio, got " + std::to_string(wave.channels()) + " ch at " +
                        std::to_string(wave.sample_rate()) + " Hz");
  const std::size_t n = wave.frames();
  const std::size_t windows = window_count(n, kScatterRate);
  if (windows == 0) throw ShapeError("scatter2 needs at least one 0.64 s window");
  const std::size_t nf = plan.frequencies();
  const std::size_t nc = plan.channels();

  const std::size_t len = padded_length(n);
  const std::size_t m1 = len / kDecimate1;
  const std::size_t m2 = len / kDecimate2;

  FftwBuffer<double> signal(len);
  FftwBuffer<fftw_complex> spectrum(len / 2 + 1);
  FftwBuffer<fftw_complex> fold1(m1), time1(m1);
  FftwBuffer<double> envelope(m1);
  FftwBuffer<fftw_complex> env_spectrum(m1 / 2 + 1);
  FftwBuffer<fftw_complex> fold2(m2), time2(m2);
  Plan forward = make_r2c(len, signal.ptr, spectrum.ptr);
  Plan inverse1 = make_c2c_inverse(m1, fold1.ptr, time1.ptr);
  Plan env_forward = make_r2c(m1, envelope.ptr, env_spectrum.ptr);
  Plan inverse2 = make_c2c_inverse(m2, fold2.ptr, time2.ptr);

  const auto x = wave.channel(0);
  for (std::size_t i = 0; i < n; ++i) signal.ptr[i] = x[i];
  forward.run();

  const double rate1 = static_cast<double>(kScatterRate) / kDecimate1;
  const double std1 = plan.lowpass_seconds * rate1;
  const double std2 = plan.lowpass_seconds * kScatterRate / kDecimate2;
  const auto kernel1 = gaussian_window(std1, static_cast<std::size_t>(std::ceil(kLowpassSupport * std1)));
  const auto kernel2 = gaussian_window(std2, static_cast<std::size_t>(std::ceil(kLowpassSupport * std2)));
  const std::size_t half_window = kWindowSamples / 2;

  ad::Tensor out({nc, nf, windows}, 0.0f);
  float* o = out.values().data();
  std::vector<double> u1, u2;
  for (std::size_t k = 0; k < nf; ++k) {
    bandpass_modulus(spectrum.ptr, len, kScatterRate, plan.first_centers[k], plan.first_sigmas[k], kDecimate1, fold1,
                     time1, inverse1, u1);
    lowpass(u1, kernel1, half_window / kDecimate1, kHopSamples / kDecimate1, windows, o + k * windows);

    std::copy(u1.begin(), u1.end(), envelope.ptr);
    env_forward.run();
    for (std::size_t m = 0; m < plan.second_centers.size(); ++m) {
      if (plan.second_centers[m] >= plan.first_centers[k]) continue;
      bandpass_modulus(env_spectrum.ptr, m1, rate1, plan.second_centers[m], plan.second_sigmas[m],
                       kDecimate2 / kDecimate1, fold2, time2, inverse2, u2);
      lowpass(u2, kernel2, half_window / kDecimate2, kHopSamples / kDecimate2, windows,
              o + ((1 + m) * nf + k) * windows);
    }
  }
  return out;
}

ad::Tensor scatter2_cached(const audio::Waveform& wave, const std::filesystem::path& cache_dir,
                           const FilterPlan& plan) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  const int rate = wave.sample_rate();
  const std::uint64_t frames = wave.frames();
  h = fnv1a(h, &kPlanVersion, sizeof kPlanVersion);
  h = fnv1a(h, &rate, sizeof rate);
  h = fnv1a(h, &frames, sizeof frames);
  h = fnv1a(h, &plan.lowpass_seconds, sizeof(double));
  for (const auto* v : {&plan.first_centers, &plan.first_sigmas, &plan.second_centers, &plan.second_sigmas})
    h = fnv1a(h, v->data(), v->size() * sizeof(double));
  h = fnv1a(h, wave.data().data(), wave.data().size() * sizeof(float));
  char name[32];
  std::snprintf(name, sizeof name, "%016llx.dmx", static_cast<unsigned long long>(h));
  const auto path = cache_dir / name;

  const ad::Shape expected{plan.channels(), plan.frequencies(), window_count(wave.frames(), rate)};
  if (std::filesystem::exists(path)) {
    try {
      auto ckpt = ad::load_checkpoint(path);
      if (ckpt.header.kind == "scatter" && ckpt.params.size() == 1 && ckpt.params[0].tensor.shape() == expected)
        return ckpt.params[0].tensor;
      log_warn("ignoring mismatched feature cache " + path.string());
    } catch (const Error& e) {
      log_warn("ignoring unreadable feature cache " + path.string() + ": " + e.what());
    }
  }
  ad::Param p{"features", scatter2(wave, plan)};
  std::filesystem::create_directories(cache_dir);
  ad::CheckpointHeader header{"scatter", {{"version", kPlanVersion}, {"frames", static_cast<double>(frames)}}};
  const auto tmp = cache_dir / (std::string(name) + ".tmp");
  ad::save_checkpoint(tmp, header, {&p});
  std::filesystem::rename(tmp, path);
  return p.tensor;
}

audio::Waveform scatter_input(const audio::Waveform& wave) { return audio::to_mono_rate(wave, kScatterRate); }

}  // namespace dmx::detector
