#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bgru/audio.hpp"
#include "bgru/quantizer.hpp"
#include "bgru/trainer.hpp"

namespace bgru {

enum class NoiseKind { White, Pink, Pulsed, Chirp };

NoiseKind parse_noise_kind(const std::string& name);
std::string to_string(NoiseKind kind);

/// Harmonic tone complex with a drifting fundamental (80-300 Hz), harmonics
/// below 4 kHz and a syllable-like amplitude envelope.
Waveform synth_utterance(SeededRng& rng, double duration_s, int sample_rate = kDefaultSampleRate);

Waveform synth_noise(SeededRng& rng, NoiseKind kind, double duration_s,
                     int sample_rate = kDefaultSampleRate);

enum class Split { Train, Valid, Test };

std::string to_string(Split split);

struct CorpusSpec {
  enum class Mode { Synthetic, Directory } mode = Mode::Synthetic;
  std::size_t train_count = 20;
  std::size_t valid_count = 5;
  std::size_t test_count = 5;
  std::size_t noises_per_clean = 1;
  std::vector<NoiseKind> noise_kinds = {NoiseKind::White, NoiseKind::Pink, NoiseKind::Pulsed,
                                        NoiseKind::Chirp};
  double duration_s = 2.0;
  std::uint64_t seed = 7;
  // Directory mode: <root>/speech/*.wav, <root>/noise/*.wav and manifests
  // listing speech files (relative to speech/) per split.
  std::filesystem::path root;
  std::filesystem::path train_manifest;
  std::filesystem::path valid_manifest;  // optional
  std::filesystem::path test_manifest;
};

/// Clean speech, the noise as mixed, and the 0 dB mixture.
struct RawPair {
  std::string name;
  Split split = Split::Train;
  Waveform clean;
  Waveform noise;
  Waveform mixture;
};

struct UtterancePair {
  std::string name;
  Waveform clean;
  Waveform noise;
  Waveform mixture;
  std::vector<QadFrame> features;
  std::vector<IbmFrame> targets;

  /// Network-ready form: flattened bipolar features and bipolar targets.
  Sequence sequence() const;
};

/// The validation split may be empty; train and test may not.
std::vector<RawPair> load_raw_pairs(const CorpusSpec& spec, Split split);

/// Speaker of a manifest entry: the first directory component when nested,
/// otherwise the file stem up to the first '_'.
std::string speaker_of(const std::string& manifest_entry);

/// Fits the global 4-bit codebook on pooled log-magnitudes of training
/// mixtures. Throws StateError if any pair belongs to the test split.
LloydMaxFit fit_corpus_codebook(std::span<const RawPair> train_pairs, int max_iters = 100);

UtterancePair make_pair(const RawPair& raw, const QadCodebook& cb);
std::vector<UtterancePair> build_pairs(std::span<const RawPair> raws, const QadCodebook& cb);
std::vector<UtterancePair> build_pairs(const CorpusSpec& spec, Split split, const QadCodebook& cb);

/// Bipolar network input frames for an arbitrary mixture.
std::vector<Vec> mixture_features(const Spectrogram& spec, const QadCodebook& cb);

}  // namespace bgru
