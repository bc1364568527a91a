#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "bgru/gru.hpp"
#include "bgru/numerics.hpp"

namespace bgru {

using Word = std::uint64_t;
inline constexpr std::size_t kWordBits = 64;

constexpr std::size_t words_for(std::size_t bits) { return (bits + kWordBits - 1) / kWordBits; }

/// Bipolar vector, +1 <-> bit 1, -1 <-> bit 0. Padding bits are zero.
struct PackedBipolarVector {
  std::size_t len = 0;
  std::vector<Word> bits;

  static PackedBipolarVector pack(std::span<const double> v);  // sgn(0) = +1
  Vec unpack() const;
  bool canonical() const;
  bool operator==(const PackedBipolarVector&) const = default;
};

/// Binary gate vector, 1 <-> bit 1. Padding bits are zero.
struct PackedGateVector {
  std::size_t len = 0;
  std::vector<Word> bits;

  static PackedGateVector pack(std::span<const double> v);  // nonzero -> 1
  Vec unpack() const;
  bool canonical() const;
  bool operator==(const PackedGateVector&) const = default;
};

/// Ternary matrix mu * {-1, 0, +1} as a sign plane and a nonzero plane.
/// Sign bits are zero wherever the nonzero bit is zero.
struct PackedTernaryMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Word> sign;
  std::vector<Word> nonzero;
  double mu = 0.0;

  std::size_t words_per_row() const { return words_for(cols); }
  std::span<const Word> sign_row(std::size_t r) const {
    return {sign.data() + r * words_per_row(), words_per_row()};
  }
  std::span<const Word> nonzero_row(std::size_t r) const {
    return {nonzero.data() + r * words_per_row(), words_per_row()};
  }
  /// Dense mu * ternary values.
  Mat unpack() const;
  std::size_t popcount_nonzero() const;
  /// Bits occupied by the two planes (excluding mu).
  std::size_t storage_bits() const { return 2 * rows * words_per_row() * kWordBits; }
  bool canonical() const;
  bool operator==(const PackedTernaryMatrix&) const = default;
};

/// Packs sgn(W) (.) B. B must hold only 0 and one common value mu >= 0.
PackedTernaryMatrix pack_ternary(const Mat& W, const Mat& B);

/// Integer 2a - n1 over one row: a counts sign agreements on nonzero weights, n1 the nonzeros.
std::int64_t xnor_popcount(const PackedBipolarVector& x, const PackedTernaryMatrix& w,
                           std::size_t row);
std::int64_t masked_xnor_popcount(const PackedBipolarVector& x, const PackedGateVector& gate,
                                  const PackedTernaryMatrix& w, std::size_t row);

/// mu * (2a - n1): the dot product of x with the ternary row.
double xnor_dot(const PackedBipolarVector& x, const PackedTernaryMatrix& w, std::size_t row);
/// Dot product of the ternary row with gate (.) x.
double masked_xnor_dot(const PackedBipolarVector& x, const PackedGateVector& gate,
                       const PackedTernaryMatrix& w, std::size_t row);

/// Per-bit select: z ? a : b.
PackedBipolarVector bit_mux(const PackedGateVector& z, const PackedBipolarVector& a,
                            const PackedBipolarVector& b);

struct PackedLayer {
  std::array<PackedTernaryMatrix, GruLayer::kMatrices> w;  // Wr,Ur,Wz,Uz,Wh,Uh
  std::size_t units() const { return w[0].rows; }
  std::size_t input_dim() const { return w[0].cols; }
};

struct PackedNetwork {
  std::vector<PackedLayer> layers;
  PackedTernaryMatrix out;

  std::size_t input_dim() const { return layers.front().input_dim(); }
  std::size_t bins() const { return out.rows; }
  void validate() const;
};

/// Packs a trained network with its scaled-sparsity masks (canonical order).
PackedNetwork pack_network(const Network& net, std::span<const ScaledSparsityMask> sparsity);

/// One fully bitwise GRU layer step.
PackedBipolarVector bgru_layer_step(const PackedLayer& layer, const PackedBipolarVector& x,
                                    const PackedBipolarVector& h_prev);

struct InferStepResult {
  PackedBipolarVector h;
  PackedGateVector ibm;
};

/// Single-layer step plus the output head's mask.
InferStepResult bgru_infer_step(const PackedLayer& layer, const PackedTernaryMatrix& out,
                                const PackedBipolarVector& x, const PackedBipolarVector& h_prev);

/// Head mask for a hidden state: 1 where the head logit is >= 0.
PackedGateVector infer_ibm(const PackedTernaryMatrix& out, const PackedBipolarVector& h);

/// Runs a packed network over a sequence of bipolar input frames, starting
/// every layer from the all-(+1) state. Returns one {0,1} mask per frame.
std::vector<Vec> packed_infer_sequence(const PackedNetwork& net, std::span<const Vec> x_seq);

}  // namespace bgru
