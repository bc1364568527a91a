#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "bgru/gru.hpp"
#include "bgru/numerics.hpp"

namespace bgru {

struct TrainConfig {
  std::size_t T = 50;  // truncated BPTT window (frames)
  std::vector<std::size_t> units = {1024};
  double rho = 0.8;
  bool per_layer_scale = false;
  bool round1_binary_states = false;
  double adam_beta1 = 0.4;
  double adam_beta2 = 0.9;
  double adam_eps = 1e-8;
  double learning_rate = 1e-3;
  double round2_learning_rate = 1e-3;
  double lr_damping = 0.5;
  double lr_damping_from_pi = 0.8;  // below this pi the damping factor is 1
  std::size_t minibatch = 10;
  double dropout_input = 0.05;
  double dropout_hidden = 0.2;
  double grad_clip = 5.0;  // max L2 norm per matrix; <= 0 disables
  std::vector<double> pi_schedule = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::size_t epochs_round1 = 100;
  std::size_t epochs_per_pi = 1000;
  std::size_t epochs_final_pi = 100;
  std::size_t eval_every = 10;   // epochs between validation evaluations (0 = stage end only)
  std::size_t early_stop_patience = 3;
  std::uint64_t seed = 1;

  /// Throws ConfigError on violated invariants.
  void validate() const;
};

struct AdamState {
  Mat m, v;
  std::size_t step = 0;
};

struct LossReport {
  std::size_t epoch = 0;
  double pi = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double val_sdr = 0.0;  // NaN when no evaluation ran this epoch
};

/// One training sequence: bipolar input frames and bipolar mask targets.
struct Sequence {
  std::vector<Vec> x;
  std::vector<Vec> target;
};

/// Gradients in canonical parameter order (see Network::parameters()).
struct Gradients {
  std::vector<Mat> d;
  double norm() const;
};

double loss_mse_bipolar(const Mat& pred, const Mat& target);
double loss_mse_bipolar(std::span<const Vec> pred, std::span<const Vec> target);

/// Shared backward pass: BPTT through every layer and the head, using
/// straight-through derivatives for every binary activation and the weight
/// chain factor (1 - tanh^2(W)) * (B (.) C + (1 - C)) for compressed/bitwise
/// modes.
Gradients backward(const Network& net, const EffectiveNetwork& eff, const ForwardTrace& trace,
                   std::span<const Vec> targets, const MaskSet* masks = nullptr,
                   const DropoutMasks* dropout = nullptr, const LayerOptions& opts = {});

/// Gradients of the round-1 (tanh-compressed weights) loss.
Gradients bptt_round1(const Network& net, std::span<const Vec> x_seq, std::span<const Vec> targets,
                      const ForwardTrace& trace, const LayerOptions& opts = {});

/// Gradients of the round-2 loss under frozen masks.
Gradients bptt_round2(const Network& net, const MaskSet& masks, std::span<const Vec> x_seq,
                      std::span<const Vec> targets, const ForwardTrace& trace);

void adam_step(Mat& param, const Mat& grad, AdamState& st, double lr, double beta1, double beta2,
               double eps = 1e-8);

/// Inverted dropout mask: 0 with probability `rate`, else 1/(1-rate).
Vec dropout_mask(SeededRng& rng, std::size_t n, double rate);
Mat apply_dropout(const Mat& x, double rate, SeededRng& rng, bool training = true);

DropoutMasks sample_dropout(SeededRng& rng, const Network& net, std::size_t steps,
                            double input_rate, double hidden_rate);

/// Splits utterance-level frame sequences into windows of at most T frames.
std::vector<Sequence> chunk_sequences(std::span<const Sequence> utterances, std::size_t T);

/// Validation callback: mean SDR (dB) of a network evaluated at binarization
/// fraction pi (pi = 0 means the round-1 path). Optional.
using Evaluator = std::function<double(const Network&, double pi)>;

struct Round1Result {
  Network net;
  std::vector<LossReport> reports;
};

Round1Result train_round1(const TrainConfig& cfg, std::span<const Sequence> data,
                          const Evaluator& evaluate = {});
/// Continues round 1 from given weights.
Round1Result train_round1(const TrainConfig& cfg, Network init, std::span<const Sequence> data,
                          const Evaluator& evaluate = {});

struct StageSnapshot {
  double pi = 0.0;
  Network net;
  double val_sdr = 0.0;
  double learning_rate = 0.0;
};

struct Round2Result {
  Network net;
  std::vector<LossReport> reports;
  std::vector<StageSnapshot> stages;
};

Round2Result train_round2(const TrainConfig& cfg, const Network& pretrained,
                          std::span<const Sequence> data, const Evaluator& evaluate = {});

}  // namespace bgru
