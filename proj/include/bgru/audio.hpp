#pragma once

#include <complex>
#include <filesystem>
#include <span>
#include <vector>

#include "bgru/numerics.hpp"
#include "bgru/quantizer.hpp"

namespace bgru {

inline constexpr std::size_t kWindowSize = 1024;
inline constexpr std::size_t kHopSize = 256;
inline constexpr std::size_t kBins = kWindowSize / 2 + 1;
inline constexpr int kDefaultSampleRate = 16000;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kDefaultSampleRate;

  std::size_t size() const { return samples.size(); }
};

using ComplexFrame = std::vector<std::complex<double>>;

struct Spectrogram {
  std::vector<ComplexFrame> frames;  // kBins each
  std::size_t window_size = kWindowSize;
  std::size_t hop = kHopSize;
  std::size_t signal_length = 0;  // samples of the analysed waveform
  int sample_rate = kDefaultSampleRate;

  std::size_t bins() const { return window_size / 2 + 1; }
  std::vector<Vec> magnitudes() const;
};

/// Periodic Hann window.
Vec hann_window(std::size_t n);

std::size_t stft_frame_count(std::size_t length, std::size_t window = kWindowSize,
                             std::size_t hop = kHopSize);

/// One-sided STFT without padding: frame f covers samples [f*hop, f*hop + window).
Spectrogram stft(const Waveform& w);

/// Weighted overlap-add inverse. The output has the analysed signal length;
/// samples outside the frames' span are zero.
Waveform istft(const Spectrogram& s);

double rms(std::span<const double> x);

struct MixParts {
  Waveform mixture;
  Waveform scaled_noise;  // noise as it appears in the mixture
  double noise_gain = 1.0;
};

/// Mixes at 0 dB SNR: noise (tiled cyclically if shorter) rescaled to the speech RMS.
MixParts mix_at_0db_parts(const Waveform& speech, const Waveform& noise);
Waveform mix_at_0db(const Waveform& speech, const Waveform& noise);

Spectrogram apply_mask(const Spectrogram& mix, std::span<const IbmFrame> ibm);
Spectrogram apply_mask(const Spectrogram& mix, std::span<const Vec> masks);

/// Simplified SDR: 10 log10(|s|^2 / |s - s_hat|^2), capped at +100 dB.
double sdr(const Waveform& reference, const Waveform& estimate);
inline constexpr double kSdrCap = 100.0;

// 16-bit PCM mono RIFF/WAVE.
Waveform read_wav(const std::filesystem::path& path);
/// Writes atomically (temporary file, then rename). Samples are clipped to [-1, 1].
void write_wav(const std::filesystem::path& path, const Waveform& w);

}  // namespace bgru
