#pragma once

#include <vector>

#include "bgru/gru.hpp"
#include "bgru/numerics.hpp"

namespace bgru::testing {

inline Vec random_vec(SeededRng& rng, std::size_t n, double sd = 1.0) {
  Vec v(n);
  for (auto& x : v) x = sd * rng.normal();
  return v;
}

inline Vec random_bipolar(SeededRng& rng, std::size_t n) {
  Vec v(n);
  for (auto& x : v) x = rng.bernoulli(0.5) ? 1.0 : -1.0;
  return v;
}

inline Vec random_gate(SeededRng& rng, std::size_t n) {
  Vec v(n);
  for (auto& x : v) x = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return v;
}

inline std::vector<Vec> random_bipolar_seq(SeededRng& rng, std::size_t steps, std::size_t n) {
  std::vector<Vec> s;
  for (std::size_t t = 0; t < steps; ++t) s.push_back(random_bipolar(rng, n));
  return s;
}

/// Ternary matrix with roughly a third of each value, and a matching
/// {0, mu} mask.
inline void random_ternary(SeededRng& rng, std::size_t rows, std::size_t cols, double mu, Mat& W,
                           Mat& B) {
  W = Mat(rows, cols);
  B = Mat(rows, cols);
  for (std::size_t i = 0; i < W.size(); ++i) {
    W[i] = rng.normal();
    B[i] = rng.uniform() < 0.67 ? mu : 0.0;
  }
}

inline Network random_network(SeededRng& rng, std::size_t in, std::vector<std::size_t> units,
                              std::size_t bins) {
  return Network::random(rng, in, units, bins);
}

}  // namespace bgru::testing
