#include "bgru/quantizer.hpp"

#include <algorithm>
#include <string>

#include "bgru/errors.hpp"

namespace bgru {

std::size_t QadCodebook::index_of(double value) const {
  // Values equal to a threshold fall into the upper cell.
  return static_cast<std::size_t>(std::upper_bound(thresholds.begin(), thresholds.end(), value) -
                                  thresholds.begin());
}

bool QadCodebook::valid() const {
  if (levels.size() < 2 || thresholds.size() + 1 != levels.size()) return false;
  for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
    if (!(levels[i] <= levels[i + 1])) return false;
    if (!(levels[i] <= thresholds[i] && thresholds[i] <= levels[i + 1])) return false;
  }
  return all_finite(std::span<const double>(levels)) &&
         all_finite(std::span<const double>(thresholds));
}

namespace {

std::vector<double> midpoints(const std::vector<double>& levels) {
  std::vector<double> t(levels.size() - 1);
  for (std::size_t i = 0; i + 1 < levels.size(); ++i) t[i] = 0.5 * (levels[i] + levels[i + 1]);
  return t;
}

// Cell boundaries over sorted samples: cell i covers [bounds[i], bounds[i+1]).
std::vector<std::size_t> cell_bounds(const std::vector<double>& sorted,
                                     const std::vector<double>& thresholds) {
  std::vector<std::size_t> bounds;
  bounds.reserve(thresholds.size() + 2);
  bounds.push_back(0);
  for (double t : thresholds) {
    bounds.push_back(static_cast<std::size_t>(
        std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin()));
  }
  bounds.push_back(sorted.size());
  return bounds;
}

double partition_mse(const std::vector<double>& sorted, const std::vector<std::size_t>& bounds,
                     const std::vector<double>& levels) {
  double sse = 0.0;
  for (std::size_t c = 0; c < levels.size(); ++c) {
    for (std::size_t i = bounds[c]; i < bounds[c + 1]; ++i) {
      const double d = sorted[i] - levels[c];
      sse += d * d;
    }
  }
  return sse / static_cast<double>(sorted.size());
}

}  // namespace

double quantization_mse(std::span<const double> samples, const QadCodebook& cb) {
  if (samples.empty()) return 0.0;
  double sse = 0.0;
  for (double v : samples) {
    const double d = v - cb.levels[cb.index_of(v)];
    sse += d * d;
  }
  return sse / static_cast<double>(samples.size());
}

LloydMaxFit fit_lloyd_max(std::span<const double> samples, std::size_t num_levels, int max_iters,
                          double tol) {
  if (samples.empty()) throw DomainError("fit_lloyd_max: no samples");
  if (num_levels < 2) throw DomainError("fit_lloyd_max: need at least 2 levels");
  if (!all_finite(samples)) throw NumericError("fit_lloyd_max: non-finite sample");

  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();

  LloydMaxFit fit;
  {
    std::vector<double> distinct = sorted;
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    fit.degenerate = distinct.size() < num_levels;
  }

  // Quantile initialisation keeps the initial levels ordered and inside the data range.
  std::vector<double> levels(num_levels);
  for (std::size_t i = 0; i < num_levels; ++i) {
    levels[i] = sorted[std::min(n - 1, (2 * i + 1) * n / (2 * num_levels))];
  }
  std::vector<double> thresholds = midpoints(levels);
  auto bounds = cell_bounds(sorted, thresholds);
  double mse = partition_mse(sorted, bounds, levels);
  fit.mse_history.push_back(mse);

  for (int it = 0; it < max_iters; ++it) {
    std::vector<double> next = levels;
    for (std::size_t c = 0; c < num_levels; ++c) {
      const std::size_t lo = bounds[c], hi = bounds[c + 1];
      if (hi == lo) continue;  // empty cell keeps its level
      double s = 0.0;
      for (std::size_t i = lo; i < hi; ++i) s += sorted[i];
      next[c] = s / static_cast<double>(hi - lo);
    }
    auto next_thresholds = midpoints(next);
    auto next_bounds = cell_bounds(sorted, next_thresholds);
    const double next_mse = partition_mse(sorted, next_bounds, next);
    if (next_mse > mse) break;  // rounding noise at convergence
    fit.iterations = it + 1;
    levels = std::move(next);
    thresholds = std::move(next_thresholds);
    bounds = std::move(next_bounds);
    const double improvement = mse - next_mse;
    mse = next_mse;
    fit.mse_history.push_back(mse);
    if (improvement < tol) break;
  }

  fit.codebook.levels = std::move(levels);
  fit.codebook.thresholds = std::move(thresholds);
  fit.codebook.bits = 0;
  for (std::size_t l = num_levels; l > 1; l >>= 1) ++fit.codebook.bits;
  return fit;
}

Vec QadFrame::flatten() const {
  Vec out;
  out.reserve(kQadBits * bins());
  for (const auto& p : planes) out.insert(out.end(), p.begin(), p.end());
  return out;
}

QadFrame qad_encode(std::span<const double> magnitudes, const QadCodebook& cb) {
  QadFrame frame;
  for (auto& p : frame.planes) p.assign(magnitudes.size(), -1.0);
  for (std::size_t b = 0; b < magnitudes.size(); ++b) {
    const std::size_t idx = cb.index_of(compress_magnitude(magnitudes[b]));
    for (int plane = 0; plane < kQadBits; ++plane) {
      const unsigned bit = (idx >> (kQadBits - 1 - plane)) & 1u;
      frame.planes[plane][b] = bit ? 1.0 : -1.0;
    }
  }
  return frame;
}

IbmFrame compute_ibm(std::span<const double> speech_mag, std::span<const double> noise_mag) {
  if (speech_mag.size() != noise_mag.size()) {
    throw ShapeError("compute_ibm: length mismatch " + std::to_string(speech_mag.size()) + " vs " +
                     std::to_string(noise_mag.size()));
  }
  IbmFrame f;
  f.mask.resize(speech_mag.size());
  for (std::size_t i = 0; i < speech_mag.size(); ++i) {
    f.mask[i] = speech_mag[i] >= noise_mag[i] ? 1.0 : 0.0;
  }
  return f;
}

Vec ibm_to_bipolar(const IbmFrame& frame) {
  Vec out(frame.mask.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = frame.mask[i] > 0.5 ? 1.0 : -1.0;
  return out;
}

}  // namespace bgru
