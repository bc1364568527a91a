#include "bgru/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>

#include "bgru/errors.hpp"

namespace bgru {

namespace {

// FFTW planning is not thread-safe; plans are created under this lock.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
struct PlanDestroy {
  void operator()(fftw_plan p) const {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(p);
  }
};

using RealBuffer = std::unique_ptr<double, FftwFree>;
using ComplexBuffer = std::unique_ptr<fftw_complex, FftwFree>;
using Plan = std::unique_ptr<std::remove_pointer_t<fftw_plan>, PlanDestroy>;

class RealFft {
 public:
  RealFft(std::size_t n, bool inverse)
      : n_(n),
        real_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        spec_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    std::lock_guard lock(planner_mutex());
    const int size = static_cast<int>(n);
    plan_.reset(inverse ? fftw_plan_dft_c2r_1d(size, spec_.get(), real_.get(), FFTW_ESTIMATE)
                        : fftw_plan_dft_r2c_1d(size, real_.get(), spec_.get(), FFTW_ESTIMATE));
  }

  double* real() { return real_.get(); }
  fftw_complex* spectrum() { return spec_.get(); }
  void execute() { fftw_execute(plan_.get()); }
  std::size_t size() const { return n_; }

 private:
  std::size_t n_;
  RealBuffer real_;
  ComplexBuffer spec_;
  Plan plan_;
};

}  // namespace

std::vector<Vec> Spectrogram::magnitudes() const {
  std::vector<Vec> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    Vec m(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) m[i] = std::abs(f[i]);
    out.push_back(std::move(m));
  }
  return out;
}

Vec hann_window(std::size_t n) {
  Vec w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                static_cast<double>(n));
  }
  return w;
}

std::size_t stft_frame_count(std::size_t length, std::size_t window, std::size_t hop) {
  if (length < window) return 0;
  return (length - window) / hop + 1;
}

Spectrogram stft(const Waveform& w) {
  if (w.samples.size() < kWindowSize) {
    throw DomainError("stft: signal of " + std::to_string(w.samples.size()) +
                      " samples is shorter than one window (" + std::to_string(kWindowSize) + ")");
  }
  if (!all_finite(w.samples)) throw NumericError("stft: non-finite sample");
  Spectrogram s;
  s.signal_length = w.samples.size();
  s.sample_rate = w.sample_rate;
  const Vec window = hann_window(kWindowSize);
  const std::size_t frames = stft_frame_count(w.samples.size());
  RealFft fft(kWindowSize, false);
  s.frames.reserve(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    const double* src = w.samples.data() + f * kHopSize;
    for (std::size_t i = 0; i < kWindowSize; ++i) fft.real()[i] = src[i] * window[i];
    fft.execute();
    ComplexFrame frame(kBins);
    for (std::size_t k = 0; k < kBins; ++k) {
      frame[k] = {fft.spectrum()[k][0], fft.spectrum()[k][1]};
    }
    s.frames.push_back(std::move(frame));
  }
  return s;
}

Waveform istft(const Spectrogram& s) {
  const std::size_t n = s.window_size;
  const std::size_t length =
      std::max(s.signal_length, s.frames.empty() ? 0 : (s.frames.size() - 1) * s.hop + n);
  Waveform out;
  out.sample_rate = s.sample_rate;
  out.samples.assign(length, 0.0);
  if (s.frames.empty()) return out;

  const Vec window = hann_window(n);
  Vec norm(length, 0.0);
  RealFft ifft(n, true);
  for (std::size_t f = 0; f < s.frames.size(); ++f) {
    const auto& frame = s.frames[f];
    if (frame.size() != n / 2 + 1) throw ShapeError("istft: frame has wrong bin count");
    for (std::size_t k = 0; k < frame.size(); ++k) {
      ifft.spectrum()[k][0] = frame[k].real();
      ifft.spectrum()[k][1] = frame[k].imag();
    }
    ifft.execute();
    const std::size_t offset = f * s.hop;
    for (std::size_t i = 0; i < n; ++i) {
      // FFTW's inverse is unnormalised.
      out.samples[offset + i] += window[i] * ifft.real()[i] / static_cast<double>(n);
      norm[offset + i] += window[i] * window[i];
    }
  }
  // Fully overlapped samples see a constant window-square sum; the floor keeps
  // the sparsely covered edges from being amplified.
  const double floor = 0.1;
  for (std::size_t i = 0; i < length; ++i) out.samples[i] /= std::max(norm[i], floor);
  return out;
}

double rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

MixParts mix_at_0db_parts(const Waveform& speech, const Waveform& noise) {
  if (speech.sample_rate != noise.sample_rate) {
    throw DomainError("mix_at_0db: sample rates differ (" + std::to_string(speech.sample_rate) +
                      " vs " + std::to_string(noise.sample_rate) + ")");
  }
  if (speech.samples.empty() || noise.samples.empty()) throw DomainError("mix_at_0db: empty signal");
  MixParts parts;
  parts.scaled_noise.sample_rate = speech.sample_rate;
  parts.scaled_noise.samples.resize(speech.size());
  for (std::size_t i = 0; i < speech.size(); ++i) {
    parts.scaled_noise.samples[i] = noise.samples[i % noise.size()];
  }
  const double speech_rms = rms(speech.samples);
  const double noise_rms = rms(parts.scaled_noise.samples);
  if (!(speech_rms > 0.0)) throw DomainError("mix_at_0db: speech is silent");
  if (!(noise_rms > 0.0)) throw DomainError("mix_at_0db: noise is silent");
  parts.noise_gain = speech_rms / noise_rms;
  parts.mixture.sample_rate = speech.sample_rate;
  parts.mixture.samples.resize(speech.size());
  for (std::size_t i = 0; i < speech.size(); ++i) {
    parts.scaled_noise.samples[i] *= parts.noise_gain;
    parts.mixture.samples[i] = speech.samples[i] + parts.scaled_noise.samples[i];
  }
  return parts;
}

Waveform mix_at_0db(const Waveform& speech, const Waveform& noise) {
  return mix_at_0db_parts(speech, noise).mixture;
}

Spectrogram apply_mask(const Spectrogram& mix, std::span<const Vec> masks) {
  if (masks.size() != mix.frames.size()) {
    throw ShapeError("apply_mask: " + std::to_string(masks.size()) + " mask frames for " +
                     std::to_string(mix.frames.size()) + " spectrogram frames");
  }
  Spectrogram out = mix;
  for (std::size_t f = 0; f < out.frames.size(); ++f) {
    if (masks[f].size() != out.frames[f].size()) throw ShapeError("apply_mask: bin count mismatch");
    for (std::size_t k = 0; k < out.frames[f].size(); ++k) out.frames[f][k] *= masks[f][k];
  }
  return out;
}

Spectrogram apply_mask(const Spectrogram& mix, std::span<const IbmFrame> ibm) {
  std::vector<Vec> masks;
  masks.reserve(ibm.size());
  for (const auto& f : ibm) masks.push_back(f.mask);
  return apply_mask(mix, masks);
}

double sdr(const Waveform& reference, const Waveform& estimate) {
  if (reference.size() != estimate.size()) {
    throw ShapeError("sdr: length mismatch " + std::to_string(reference.size()) + " vs " +
                     std::to_string(estimate.size()));
  }
  double signal = 0.0, error = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double d = reference.samples[i] - estimate.samples[i];
    signal += reference.samples[i] * reference.samples[i];
    error += d * d;
  }
  if (!(signal > 0.0)) throw DomainError("sdr: reference has zero energy");
  if (error <= signal * std::pow(10.0, -kSdrCap / 10.0)) return kSdrCap;
  return 10.0 * std::log10(signal / error);
}

}  // namespace bgru
