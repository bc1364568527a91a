#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "bgru/numerics.hpp"

namespace bgru {

// ---------------------------------------------------------------------------
// Activations. sgn(0) = +1 throughout.

inline double act_sigmoid(double x) { return sigmoid(x); }
inline double act_tanh(double x) { return std::tanh(x); }
inline double act_bsigmoid(double x) { return x >= 0.0 ? 1.0 : 0.0; }
inline double act_btanh(double x) { return x >= 0.0 ? 1.0 : -1.0; }

// ---------------------------------------------------------------------------
// Parameters

/// Weight matrices of one GRU layer. No biases.
struct GruLayer {
  Mat Wr, Ur, Wz, Uz, Wh, Uh;

  static constexpr std::size_t kMatrices = 6;
  static const std::array<const char*, kMatrices>& names();

  std::size_t units() const { return Wr.rows(); }
  std::size_t input_dim() const { return Wr.cols(); }

  std::array<Mat*, kMatrices> matrices() { return {&Wr, &Ur, &Wz, &Uz, &Wh, &Uh}; }
  std::array<const Mat*, kMatrices> matrices() const { return {&Wr, &Ur, &Wz, &Uz, &Wh, &Uh}; }

  static GruLayer zeros(std::size_t input_dim, std::size_t units);
  /// Gaussian init with stddev 1/sqrt(fan_in) per matrix.
  static GruLayer random(SeededRng& rng, std::size_t input_dim, std::size_t units);

  /// Throws ShapeError unless W* are K x K_prev and U* are K x K.
  void validate() const;
};

/// Dense head mapping a hidden state to F mask logits.
struct OutputLayer {
  Mat Wo;
  std::size_t bins() const { return Wo.rows(); }
  void validate(std::size_t units) const;
};

/// Stack of GRU layers plus the output head.
struct Network {
  std::vector<GruLayer> layers;
  OutputLayer out;

  std::size_t input_dim() const { return layers.front().input_dim(); }
  std::size_t bins() const { return out.bins(); }
  std::size_t matrix_count() const { return layers.size() * GruLayer::kMatrices + 1; }

  /// Canonical order: per layer Wr,Ur,Wz,Uz,Wh,Uh, then Wo.
  std::vector<Mat*> parameters();
  std::vector<const Mat*> parameters() const;
  std::string parameter_name(std::size_t index) const;

  static Network random(SeededRng& rng, std::size_t input_dim, std::span<const std::size_t> units,
                        std::size_t bins);
  void validate() const;
};

// ---------------------------------------------------------------------------
// Masks

/// B holds mu on the retained top-rho fraction of |W| and 0 elsewhere.
struct ScaledSparsityMask {
  Mat B;
  double beta = 0.0;
  double mu = 0.0;
  std::size_t retained = 0;
};

ScaledSparsityMask build_scaled_sparsity_mask(const Mat& W, double rho);

/// One cutoff and scale shared by a group of matrices (e.g. the six of a layer).
std::vector<ScaledSparsityMask> build_shared_sparsity_masks(std::span<const Mat* const> group,
                                                            double rho);

/// Scaled-sparsity masks for every parameter matrix plus the Bernoulli weight
/// masks C of the current training iteration.
struct MaskSet {
  std::vector<ScaledSparsityMask> sparsity;  // canonical parameter order
  std::vector<Mat> weight_c;                 // same order; entries {0,1}
  double rho = 0.8;
  double pi = 0.0;
};

/// Rebuilds B for every matrix from the current weights. `per_layer` shares
/// one cutoff/scale across the six matrices of each layer (Wo stays alone).
std::vector<ScaledSparsityMask> build_network_sparsity(const Network& net, double rho,
                                                       bool per_layer = false);

/// Fresh Bernoulli(pi) weight masks, one per matrix.
std::vector<Mat> sample_weight_masks(SeededRng& rng, const Network& net, double pi);

/// Per-timestep Bernoulli masks for the blended activations of one sequence.
struct ActivationMasks {
  double pi = 0.0;
  std::vector<std::vector<Vec>> r, z, h;  // [layer][t]
  std::vector<Vec> out;                   // [t]
  std::vector<Vec> h0;                    // [layer]; binary part of the initial state
};

ActivationMasks sample_activation_masks(SeededRng& rng, const Network& net, double pi,
                                        std::size_t steps);

Mat blend_weight(const Mat& W, const Mat& B, const Mat& C);
Mat blend_activation(const Mat& real_val, const Mat& bin_val, const Mat& C);

// ---------------------------------------------------------------------------
// Effective weights

enum class ForwardMode { Real, Compressed, Bitwise };

/// Weight as used by a forward pass: mu * ternary + real, kept factored so the
/// ternary product is an exact integer sum scaled once by mu.
struct BlendedWeight {
  Mat ternary;  // entries in {-1, 0, +1}
  Mat real;
  double mu = 0.0;
  bool has_ternary = false;
  bool has_real = false;

  std::size_t rows() const { return ternary.rows(); }
  std::size_t cols() const { return ternary.cols(); }

  /// out = mu * (ternary x) + real x
  void apply(std::span<const double> x, std::span<double> out, std::span<double> scratch) const;
  /// out += (mu * ternary + real)^T d
  void apply_transposed_add(std::span<const double> d, std::span<double> out) const;
  Mat dense() const;
};

BlendedWeight real_weight(const Mat& W);
BlendedWeight compressed_weight(const Mat& W);
BlendedWeight bitwise_weight(const Mat& W, const ScaledSparsityMask& mask, const Mat& C);

struct EffectiveLayer {
  std::array<BlendedWeight, GruLayer::kMatrices> w;  // Wr,Ur,Wz,Uz,Wh,Uh
};

struct EffectiveNetwork {
  ForwardMode mode = ForwardMode::Compressed;
  std::vector<EffectiveLayer> layers;
  BlendedWeight out;
};

EffectiveNetwork effective_network(const Network& net, ForwardMode mode,
                                   const MaskSet* masks = nullptr);

// ---------------------------------------------------------------------------
// Forward passes

/// Cached quantities of one cell at one timestep.
struct CellState {
  Vec x;        // input as seen by the cell (after dropout)
  Vec h_prev;
  Vec a_r, a_z, a_h;  // pre-activations
  Vec r, z;           // gates
  Vec q;              // r (.) h_prev term fed to U_h
  Vec h_tilde;
  Vec h;
};

struct LayerOptions {
  bool round1_binary_states = false;  // literal reading: binary r and h(t-1) inside U_h term
};

/// One layer over a sequence. `act` may be null (no binary activations).
std::vector<CellState> layer_forward(const EffectiveLayer& layer, std::span<const Vec> x_seq,
                                     std::span<const double> h0,
                                     const std::vector<Vec>* c_r = nullptr,
                                     const std::vector<Vec>* c_z = nullptr,
                                     const std::vector<Vec>* c_h = nullptr,
                                     const LayerOptions& opts = {});

std::vector<CellState> gru_forward(const GruLayer& layer, std::span<const Vec> x_seq,
                                   std::span<const double> h0);
std::vector<CellState> compressed_forward(const GruLayer& layer, std::span<const Vec> x_seq,
                                          std::span<const double> h0,
                                          const LayerOptions& opts = {});

/// Single-layer round-2 forward with explicit masks (weight masks in `masks`,
/// per-timestep activation masks for this layer in `act`).
std::vector<CellState> bgru_forward(const GruLayer& layer, const MaskSet& masks,
                                    const ActivationMasks& act, std::span<const Vec> x_seq,
                                    std::span<const double> h0);

/// Samples C for weights and per-timestep activations, then runs the
/// round-2 forward of a single-layer network (layer + head).
struct BgruResult {
  std::vector<CellState> states;
  std::vector<Vec> outputs;
};
BgruResult bgru_forward(const GruLayer& layer, const OutputLayer& out,
                        const std::vector<ScaledSparsityMask>& sparsity, double pi,
                        std::span<const Vec> x_seq, std::span<const double> h0, SeededRng& rng);

enum class OutputMode { Round1, Round2 };

/// Head activation: tanh in round 1; tanh/sign blended by C in round 2.
Vec output_forward(const OutputLayer& out, std::span<const double> h, const Vec* c_out,
                   OutputMode mode, const ScaledSparsityMask* mask = nullptr,
                   const Mat* weight_c = nullptr);

Vec output_forward(const BlendedWeight& wo, std::span<const double> h, const Vec* c_out);

/// Bipolar prediction -> {0,1} mask (threshold at 0, ties to 1).
Vec prediction_to_ibm(std::span<const double> y);

/// Dropout masks (already scaled by 1/(1-rate)) for one sequence.
struct DropoutMasks {
  std::vector<Vec> input;                // [t]
  std::vector<std::vector<Vec>> hidden;  // [layer][t]
};

struct OutputStep {
  Vec h_in;  // hidden state fed to the head (after dropout)
  Vec a_o;
  Vec y;
};

struct ForwardTrace {
  std::vector<std::vector<CellState>> layers;
  std::vector<OutputStep> out;
};

/// Full network forward. Bitwise mode requires `act`; the initial state of
/// each layer is act->h0 (binary +1 on C=1, real 0 elsewhere) in bitwise
/// mode, zero otherwise.
ForwardTrace network_forward(const EffectiveNetwork& eff, std::span<const Vec> x_seq,
                             const ActivationMasks* act = nullptr,
                             const DropoutMasks* dropout = nullptr,
                             const LayerOptions& opts = {});

/// Per-frame {0,1} masks from a trace.
std::vector<Vec> trace_ibm(const ForwardTrace& trace);

}  // namespace bgru
