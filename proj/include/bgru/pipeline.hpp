#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <span>
#include <vector>

#include "bgru/audio.hpp"
#include "bgru/dataset.hpp"
#include "bgru/model_file.hpp"

namespace bgru {

struct InferenceOptions {
  double pi = 1.0;  // 0 runs the round-1 path
  double rho = 0.8;
  bool per_layer_scale = false;
  bool round1_binary_states = false;
  std::uint64_t seed = 1;  // Bernoulli masks for 0 < pi < 1
};

/// Per-frame {0,1} masks from a float network. pi = 0 uses tanh-compressed
/// weights; pi > 0 the blended bitwise path with sparsity rebuilt from `net`.
std::vector<Vec> predict_masks(const Network& net, std::span<const Vec> x_seq,
                               const InferenceOptions& opts);
/// Dispatches on the model mode: real weights, compressed/bitwise, or packed.
std::vector<Vec> predict_masks(const ModelFile& model, std::span<const Vec> x_seq,
                               const InferenceOptions& opts);

/// Masked mixture resynthesised to the mixture's length.
Waveform reconstruct(const Spectrogram& mix, std::span<const Vec> masks);

/// Full chain for one mixture: STFT, QaD features, masks, resynthesis.
/// Throws DomainError on a silent input.
Waveform separate(const ModelFile& model, const Waveform& mixture, const InferenceOptions& opts);

struct SeparationScore {
  std::string name;
  double sdr_mix = 0.0;
  double sdr_est = 0.0;
};

using MaskPredictor = std::function<std::vector<Vec>(const UtterancePair&)>;

std::vector<SeparationScore> score_pairs(std::span<const UtterancePair> pairs,
                                         const MaskPredictor& predict);
/// Scores with the true ideal binary mask.
std::vector<SeparationScore> score_oracle(std::span<const UtterancePair> pairs);
double mean_sdr_est(std::span<const SeparationScore> scores);

}  // namespace bgru
