#include "bgru/bitkernel.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "bgru/errors.hpp"

namespace bgru {

namespace {

Word tail_mask(std::size_t len) {
  const std::size_t rem = len % kWordBits;
  return rem == 0 ? ~Word{0} : (Word{1} << rem) - 1;
}

bool padding_clear(std::span<const Word> row, std::size_t len) {
  if (row.empty()) return true;
  return (row.back() & ~tail_mask(len)) == 0;
}

void set_bit(std::vector<Word>& words, std::size_t offset, std::size_t i) {
  words[offset + i / kWordBits] |= Word{1} << (i % kWordBits);
}

bool get_bit(std::span<const Word> words, std::size_t i) {
  return (words[i / kWordBits] >> (i % kWordBits)) & 1u;
}

void check_len(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": length mismatch " + std::to_string(a) + " vs " +
                     std::to_string(b));
  }
}

}  // namespace

PackedBipolarVector PackedBipolarVector::pack(std::span<const double> v) {
  PackedBipolarVector p;
  p.len = v.size();
  p.bits.assign(words_for(v.size()), 0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] >= 0.0) set_bit(p.bits, 0, i);
  }
  return p;
}

Vec PackedBipolarVector::unpack() const {
  Vec v(len);
  for (std::size_t i = 0; i < len; ++i) v[i] = get_bit(bits, i) ? 1.0 : -1.0;
  return v;
}

bool PackedBipolarVector::canonical() const {
  return bits.size() == words_for(len) && padding_clear(bits, len);
}

PackedGateVector PackedGateVector::pack(std::span<const double> v) {
  PackedGateVector p;
  p.len = v.size();
  p.bits.assign(words_for(v.size()), 0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] != 0.0) set_bit(p.bits, 0, i);
  }
  return p;
}

Vec PackedGateVector::unpack() const {
  Vec v(len);
  for (std::size_t i = 0; i < len; ++i) v[i] = get_bit(bits, i) ? 1.0 : 0.0;
  return v;
}

bool PackedGateVector::canonical() const {
  return bits.size() == words_for(len) && padding_clear(bits, len);
}

Mat PackedTernaryMatrix::unpack() const {
  Mat m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto s = sign_row(r);
    auto nz = nonzero_row(r);
    for (std::size_t c = 0; c < cols; ++c) {
      if (get_bit(nz, c)) m(r, c) = get_bit(s, c) ? mu : -mu;
    }
  }
  return m;
}

std::size_t PackedTernaryMatrix::popcount_nonzero() const {
  std::size_t n = 0;
  for (Word w : nonzero) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

bool PackedTernaryMatrix::canonical() const {
  const std::size_t wpr = words_per_row();
  if (sign.size() != rows * wpr || nonzero.size() != rows * wpr) return false;
  if (!(mu >= 0.0) || !std::isfinite(mu)) return false;
  for (std::size_t r = 0; r < rows; ++r) {
    auto s = sign_row(r);
    auto nz = nonzero_row(r);
    if (!padding_clear(s, cols) || !padding_clear(nz, cols)) return false;
    for (std::size_t w = 0; w < wpr; ++w) {
      if ((s[w] & ~nz[w]) != 0) return false;
    }
  }
  return true;
}

PackedTernaryMatrix pack_ternary(const Mat& W, const Mat& B) {
  require_same_shape(W, B, "pack_ternary");
  PackedTernaryMatrix p;
  p.rows = W.rows();
  p.cols = W.cols();
  const std::size_t wpr = p.words_per_row();
  p.sign.assign(p.rows * wpr, 0);
  p.nonzero.assign(p.rows * wpr, 0);
  bool have_mu = false;
  for (std::size_t r = 0; r < p.rows; ++r) {
    for (std::size_t c = 0; c < p.cols; ++c) {
      const double b = B(r, c);
      if (b == 0.0) continue;
      if (!(b > 0.0) || !std::isfinite(b)) {
        throw DomainError("pack_ternary: mask entry " + std::to_string(b) + " is not a positive scale");
      }
      if (have_mu && b != p.mu) {
        throw DomainError("pack_ternary: mask holds more than one nonzero value");
      }
      p.mu = b;
      have_mu = true;
      set_bit(p.nonzero, r * wpr, c);
      if (act_btanh(W(r, c)) > 0.0) set_bit(p.sign, r * wpr, c);
    }
  }
  return p;
}

std::int64_t xnor_popcount(const PackedBipolarVector& x, const PackedTernaryMatrix& w,
                           std::size_t row) {
  check_len(x.len, w.cols, "xnor_dot");
  const auto s = w.sign_row(row);
  const auto nz = w.nonzero_row(row);
  std::int64_t agree = 0, nonzero = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    agree += std::popcount(~(x.bits[i] ^ s[i]) & nz[i]);
    nonzero += std::popcount(nz[i]);
  }
  return 2 * agree - nonzero;
}

std::int64_t masked_xnor_popcount(const PackedBipolarVector& x, const PackedGateVector& gate,
                                  const PackedTernaryMatrix& w, std::size_t row) {
  check_len(x.len, w.cols, "masked_xnor_dot");
  check_len(gate.len, w.cols, "masked_xnor_dot gate");
  const auto s = w.sign_row(row);
  const auto nz = w.nonzero_row(row);
  std::int64_t agree = 0, nonzero = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const Word active = nz[i] & gate.bits[i];
    agree += std::popcount(~(x.bits[i] ^ s[i]) & active);
    nonzero += std::popcount(active);
  }
  return 2 * agree - nonzero;
}

double xnor_dot(const PackedBipolarVector& x, const PackedTernaryMatrix& w, std::size_t row) {
  return w.mu * static_cast<double>(xnor_popcount(x, w, row));
}

double masked_xnor_dot(const PackedBipolarVector& x, const PackedGateVector& gate,
                       const PackedTernaryMatrix& w, std::size_t row) {
  return w.mu * static_cast<double>(masked_xnor_popcount(x, gate, w, row));
}

PackedBipolarVector bit_mux(const PackedGateVector& z, const PackedBipolarVector& a,
                            const PackedBipolarVector& b) {
  check_len(z.len, a.len, "bit_mux");
  check_len(z.len, b.len, "bit_mux");
  PackedBipolarVector out;
  out.len = z.len;
  out.bits.resize(z.bits.size());
  for (std::size_t i = 0; i < z.bits.size(); ++i) {
    out.bits[i] = (z.bits[i] & a.bits[i]) | (~z.bits[i] & b.bits[i]);
  }
  if (!out.bits.empty()) out.bits.back() &= tail_mask(out.len);
  return out;
}

void PackedNetwork::validate() const {
  if (layers.empty()) throw ShapeError("packed network has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& w = layers[l].w;
    const std::size_t k = w[0].rows, kp = w[0].cols;
    for (std::size_t i = 0; i < GruLayer::kMatrices; ++i) {
      const std::size_t cols = i % 2 == 0 ? kp : k;
      if (w[i].rows != k || w[i].cols != cols) {
        throw ShapeError("packed layer " + std::to_string(l) + ": " + GruLayer::names()[i] +
                         " is " + shape_string(w[i].rows, w[i].cols) + ", expected " +
                         shape_string(k, cols));
      }
      if (!w[i].canonical()) throw DomainError("packed matrix not in canonical form");
    }
    if (l > 0 && kp != layers[l - 1].units()) throw ShapeError("packed layer input mismatch");
  }
  if (out.cols != layers.back().units()) throw ShapeError("packed head width mismatch");
  if (!out.canonical()) throw DomainError("packed head not in canonical form");
}

PackedNetwork pack_network(const Network& net, std::span<const ScaledSparsityMask> sparsity) {
  net.validate();
  if (sparsity.size() != net.matrix_count()) {
    throw StateError("pack_network: expected " + std::to_string(net.matrix_count()) +
                     " sparsity masks, got " + std::to_string(sparsity.size()));
  }
  PackedNetwork p;
  std::size_t idx = 0;
  for (const auto& layer : net.layers) {
    PackedLayer pl;
    auto mats = layer.matrices();
    for (std::size_t i = 0; i < GruLayer::kMatrices; ++i, ++idx) {
      pl.w[i] = pack_ternary(*mats[i], sparsity[idx].B);
      pl.w[i].mu = sparsity[idx].mu;
    }
    p.layers.push_back(std::move(pl));
  }
  p.out = pack_ternary(net.out.Wo, sparsity[idx].B);
  p.out.mu = sparsity[idx].mu;
  return p;
}

PackedBipolarVector bgru_layer_step(const PackedLayer& layer, const PackedBipolarVector& x,
                                    const PackedBipolarVector& h_prev) {
  const auto& [Wr, Ur, Wz, Uz, Wh, Uh] = layer.w;
  const std::size_t k = Wr.rows;
  check_len(x.len, Wr.cols, "bgru_layer_step input");
  check_len(h_prev.len, k, "bgru_layer_step state");

  PackedGateVector r, z;
  r.len = z.len = k;
  r.bits.assign(words_for(k), 0);
  z.bits.assign(words_for(k), 0);
  // Different matrices carry different scales, so the two integer sums are
  // combined in real arithmetic before thresholding.
  for (std::size_t i = 0; i < k; ++i) {
    const double ar = Wr.mu * static_cast<double>(xnor_popcount(x, Wr, i)) +
                      Ur.mu * static_cast<double>(xnor_popcount(h_prev, Ur, i));
    const double az = Wz.mu * static_cast<double>(xnor_popcount(x, Wz, i)) +
                      Uz.mu * static_cast<double>(xnor_popcount(h_prev, Uz, i));
    if (ar >= 0.0) set_bit(r.bits, 0, i);
    if (az >= 0.0) set_bit(z.bits, 0, i);
  }
  PackedBipolarVector candidate;
  candidate.len = k;
  candidate.bits.assign(words_for(k), 0);
  for (std::size_t i = 0; i < k; ++i) {
    const double ah = Wh.mu * static_cast<double>(xnor_popcount(x, Wh, i)) +
                      Uh.mu * static_cast<double>(masked_xnor_popcount(h_prev, r, Uh, i));
    if (ah >= 0.0) set_bit(candidate.bits, 0, i);
  }
  return bit_mux(z, h_prev, candidate);
}

PackedGateVector infer_ibm(const PackedTernaryMatrix& out, const PackedBipolarVector& h) {
  PackedGateVector ibm;
  ibm.len = out.rows;
  ibm.bits.assign(words_for(out.rows), 0);
  for (std::size_t i = 0; i < out.rows; ++i) {
    if (out.mu * static_cast<double>(xnor_popcount(h, out, i)) >= 0.0) set_bit(ibm.bits, 0, i);
  }
  return ibm;
}

InferStepResult bgru_infer_step(const PackedLayer& layer, const PackedTernaryMatrix& out,
                                const PackedBipolarVector& x, const PackedBipolarVector& h_prev) {
  InferStepResult res;
  res.h = bgru_layer_step(layer, x, h_prev);
  res.ibm = infer_ibm(out, res.h);
  return res;
}

std::vector<Vec> packed_infer_sequence(const PackedNetwork& net, std::span<const Vec> x_seq) {
  std::vector<PackedBipolarVector> h;
  for (const auto& l : net.layers) h.push_back(PackedBipolarVector::pack(Vec(l.units(), 1.0)));
  std::vector<Vec> masks;
  masks.reserve(x_seq.size());
  for (const Vec& frame : x_seq) {
    PackedBipolarVector in = PackedBipolarVector::pack(frame);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      h[l] = bgru_layer_step(net.layers[l], in, h[l]);
      in = h[l];
    }
    masks.push_back(infer_ibm(net.out, in).unpack());
  }
  return masks;
}

}  // namespace bgru
