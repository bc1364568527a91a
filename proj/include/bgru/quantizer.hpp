#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "bgru/numerics.hpp"

namespace bgru {

inline constexpr int kQadBits = 4;
inline constexpr std::size_t kQadLevels = 1u << kQadBits;

/// Scalar quantizer: ascending reconstruction levels and the decision
/// thresholds between them. Values live in the compressed domain
/// log(1 + |X|); see compress_magnitude().
struct QadCodebook {
  std::vector<double> levels;
  std::vector<double> thresholds;
  int bits = kQadBits;

  /// Level index of a value already in the codebook domain.
  std::size_t index_of(double value) const;
  double decode(std::size_t index) const { return levels.at(index); }
  bool valid() const;
};

struct LloydMaxFit {
  QadCodebook codebook;
  /// MSE after each partition/centroid pass, starting with the initial codebook.
  std::vector<double> mse_history;
  int iterations = 0;
  /// Set when the samples hold fewer distinct values than requested levels.
  bool degenerate = false;
};

/// Lloyd-Max iteration: nearest-level partition by midpoint thresholds,
/// then centroid update, until the MSE improvement drops below `tol`.
LloydMaxFit fit_lloyd_max(std::span<const double> samples, std::size_t num_levels,
                          int max_iters = 100, double tol = 1e-12);

double quantization_mse(std::span<const double> samples, const QadCodebook& cb);

/// Four bipolar bitplanes over F bins. plane 0 carries the most significant bit.
struct QadFrame {
  std::array<std::vector<double>, kQadBits> planes;

  std::size_t bins() const { return planes[0].size(); }
  /// Planes concatenated plane-major: [plane0 | plane1 | plane2 | plane3].
  Vec flatten() const;
};

QadFrame qad_encode(std::span<const double> magnitudes, const QadCodebook& cb);

/// Per-bin {0,1} mask; 1 where speech dominates (ties go to speech).
struct IbmFrame {
  std::vector<double> mask;
};

IbmFrame compute_ibm(std::span<const double> speech_mag, std::span<const double> noise_mag);

/// Bipolar form of a mask (0 -> -1, 1 -> +1), used as a training target.
Vec ibm_to_bipolar(const IbmFrame& frame);

inline double compress_magnitude(double magnitude) { return std::log1p(std::abs(magnitude)); }

}  // namespace bgru
