#include <bit>

#include "bgru/bitkernel.hpp"
#include "bgru/errors.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace bgru;
using namespace bgru::testing;

namespace {

PackedTernaryMatrix ternary_row(const Vec& w, double mu) {
  Mat W(1, w.size()), B(1, w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    W[i] = w[i];
    B[i] = w[i] != 0.0 ? mu : 0.0;
  }
  return pack_ternary(W, B);
}

std::int64_t dense_int_dot(const Vec& x, const Mat& W, const Mat& B, std::size_t row) {
  std::int64_t s = 0;
  for (std::size_t c = 0; c < W.cols(); ++c) {
    if (B(row, c) == 0.0) continue;
    s += ((W(row, c) >= 0.0) == (x[c] >= 0.0)) ? 1 : -1;
  }
  return s;
}

}  // namespace

TEST_CASE("packing bipolar and gate vectors") {
  const Vec v{1, -1, 0, -1};
  const auto p = PackedBipolarVector::pack(v);
  CHECK(p.bits.size() == 1);
  CHECK(p.bits[0] == 0b0101);
  CHECK(p.unpack() == Vec{1, -1, 1, -1});
  CHECK(p.canonical());
  const auto g = PackedGateVector::pack(Vec{0, 1, 1});
  CHECK(g.bits[0] == 0b110);
  CHECK(g.unpack() == Vec{0, 1, 1});
  CHECK(PackedBipolarVector::pack(Vec(130, 1.0)).bits.size() == 3);
}

TEST_CASE("xnor_dot hand examples") {
  const auto x = PackedBipolarVector::pack(Vec{1, -1, 1});
  CHECK(xnor_dot(x, ternary_row(Vec{1, 0, -1}, 2.0), 0) == 0.0);
  CHECK(xnor_dot(x, ternary_row(Vec{1, -1, 1}, 0.5), 0) == 1.5);
  CHECK(xnor_popcount(x, ternary_row(Vec{-1, 1, -1}, 1.0), 0) == -3);
  CHECK(xnor_dot(x, ternary_row(Vec{0, 0, 0}, 0.0), 0) == 0.0);
}

TEST_CASE("masked_xnor_dot drops gated-off inputs") {
  const auto x = PackedBipolarVector::pack(Vec{1, -1, 1, 1});
  const auto g = PackedGateVector::pack(Vec{1, 0, 1, 0});
  const auto w = ternary_row(Vec{1, 1, -1, 1}, 0.25);
  CHECK(masked_xnor_popcount(x, g, w, 0) == 0);
  CHECK(masked_xnor_dot(x, PackedGateVector::pack(Vec{1, 1, 0, 1}), w, 0) == 0.25);
}

TEST_CASE("bit_mux selects per bit") {
  const auto z = PackedGateVector::pack(Vec{1, 0, 1, 0});
  const auto a = PackedBipolarVector::pack(Vec{1, 1, -1, -1});
  const auto b = PackedBipolarVector::pack(Vec{-1, -1, 1, 1});
  CHECK(bit_mux(z, a, b).unpack() == Vec{1, -1, -1, 1});
}

TEST_CASE("pack_ternary canonical form and storage") {
  SeededRng rng(3);
  Mat W, B;
  random_ternary(rng, 5, 70, 0.4, W, B);
  const auto p = pack_ternary(W, B);
  CHECK(p.canonical());
  CHECK(p.mu == 0.4);
  CHECK(p.storage_bits() == 2 * 5 * 2 * 64);
  const Mat d = p.unpack();
  std::size_t nz = 0;
  for (std::size_t i = 0; i < W.size(); ++i) {
    const double expect = B[i] == 0.0 ? 0.0 : (W[i] >= 0.0 ? 0.4 : -0.4);
    CHECK(d[i] == expect);
    nz += B[i] != 0.0;
  }
  CHECK(p.popcount_nonzero() == nz);

  PackedTernaryMatrix bad = p;
  bad.sign[0] |= ~bad.nonzero[0] & 1;  // sign bit under a zero weight
  if (bad.sign[0] != p.sign[0]) CHECK_FALSE(bad.canonical());
  bad = p;
  bad.nonzero[1] |= Word{1} << 63;  // padding bit
  CHECK_FALSE(bad.canonical());

  Mat two(1, 2);
  two[0] = 0.1;
  two[1] = 0.2;
  CHECK_THROWS_AS(pack_ternary(Mat(1, 2), two), DomainError);
}

TEST_CASE("xnor popcount agrees with the dense integer sum across dimensions") {
  SeededRng rng(5);
  for (std::size_t n = 1; n <= 130; ++n) {
    Mat W, B;
    random_ternary(rng, 3, n, 0.7, W, B);
    const auto p = pack_ternary(W, B);
    const Vec x = random_bipolar(rng, n);
    const Vec g = random_gate(rng, n);
    const auto px = PackedBipolarVector::pack(x);
    const auto pg = PackedGateVector::pack(g);
    Vec xg(n);
    for (std::size_t i = 0; i < n; ++i) xg[i] = g[i] * x[i];
    for (std::size_t r = 0; r < 3; ++r) {
      const std::int64_t ref = dense_int_dot(x, W, B, r);
      CHECK(xnor_popcount(px, p, r) == ref);
      CHECK(xnor_dot(px, p, r) == 0.7 * static_cast<double>(ref));
      std::int64_t mref = 0;
      for (std::size_t c = 0; c < n; ++c) {
        if (B(r, c) == 0.0 || g[c] == 0.0) continue;
        mref += ((W(r, c) >= 0.0) == (x[c] >= 0.0)) ? 1 : -1;
      }
      CHECK(masked_xnor_popcount(px, pg, p, r) == mref);
    }
  }
}

TEST_CASE("infer step edge cases") {
  PackedLayer layer;
  for (auto& m : layer.w) m = pack_ternary(Mat(4, 4), Mat(4, 4));
  const auto out = pack_ternary(Mat(3, 4), Mat(3, 4));
  const auto x = PackedBipolarVector::pack(Vec{1, -1, -1, 1});
  const auto h = PackedBipolarVector::pack(Vec{-1, 1, -1, 1});
  // zero weights: every pre-activation is 0, so z = 1 and h stays put
  const auto res = bgru_infer_step(layer, out, x, h);
  CHECK(res.h == h);
  CHECK(res.ibm.unpack() == Vec{1, 1, 1});
}

TEST_CASE("packed network matches the float bitwise forward at pi = 1") {
  SeededRng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t in = 1 + rng.below(80);
    const std::vector<std::size_t> units{1 + rng.below(70), 1 + rng.below(40)};
    const Network net = Network::random(rng, in, units, 1 + rng.below(30));
    MaskSet masks;
    masks.sparsity = build_network_sparsity(net, 0.2 + 0.08 * trial, trial % 2 == 1);
    masks.weight_c = sample_weight_masks(rng, net, 1.0);
    masks.pi = 1.0;
    const auto x = random_bipolar_seq(rng, 12, in);
    const ActivationMasks act = sample_activation_masks(rng, net, 1.0, x.size());
    const auto ref = trace_ibm(network_forward(effective_network(net, ForwardMode::Bitwise, &masks), x, &act));
    const auto got = packed_infer_sequence(pack_network(net, masks.sparsity), x);
    CHECK(got == ref);
  }
}

TEST_CASE("packed network validation") {
  SeededRng rng(22);
  const Network net = Network::random(rng, 5, std::vector<std::size_t>{4}, 3);
  const auto sp = build_network_sparsity(net, 0.5);
  PackedNetwork p = pack_network(net, sp);
  CHECK_NOTHROW(p.validate());
  CHECK_THROWS_AS(pack_network(net, std::span(sp).first(3)), StateError);
  p.out = pack_ternary(Mat(3, 5), Mat(3, 5));
  CHECK_THROWS_AS(p.validate(), ShapeError);
  CHECK_THROWS_AS(packed_infer_sequence(pack_network(net, sp), std::vector<Vec>{Vec(4, 1.0)}),
                  ShapeError);
}
