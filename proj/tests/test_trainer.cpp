#include <cmath>

#include "bgru/errors.hpp"
#include "bgru/trainer.hpp"
#include "doctest.h"
#include "gradient_check.hpp"

using namespace bgru;
using namespace bgru::testing;

TEST_CASE("round-1 gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CHECK(round1_gradient_error(seed) < 1e-4);
  }
}

TEST_CASE("round-1 gradients through two stacked layers") {
  GradientCase gc;
  gc.units = {5, 4};
  for (std::uint64_t seed = 11; seed <= 13; ++seed) CHECK(round1_gradient_error(seed, gc) < 1e-4);
}

TEST_CASE("round-2 gradients match the frozen-offset surrogate") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CHECK(round2_gradient_error(seed) < 1e-4);
  }
  GradientCase gc;
  gc.units = {5, 4};
  gc.pi = 0.3;
  CHECK(round2_gradient_error(21, gc) < 1e-4);
  gc.pi = 1.0;
  CHECK(round2_gradient_error(22, gc) < 1e-4);
}

TEST_CASE("reference loss agrees with the library forward at the base point") {
  SeededRng rng(3);
  const Network net = Network::random(rng, 7, std::vector<std::size_t>{8}, 6);
  const auto x = random_bipolar_seq(rng, 5, 7);
  const auto y = random_bipolar_seq(rng, 5, 6);
  MaskSet masks;
  masks.sparsity = build_network_sparsity(net, 0.6);
  masks.weight_c = sample_weight_masks(rng, net, 0.5);
  const ActivationMasks act = sample_activation_masks(rng, net, 0.5, 5);
  const auto trace = network_forward(effective_network(net, ForwardMode::Bitwise, &masks), x, &act);
  std::vector<Vec> pred;
  for (const auto& o : trace.out) pred.push_back(o.y);
  FrozenOffsets off;
  CHECK(reference_loss(net, &masks, &act, x, y, off) ==
        doctest::Approx(loss_mse_bipolar(pred, y)).epsilon(1e-12));
}

TEST_CASE("round-1 binary-state option differentiates through sgn by its tanh surrogate") {
  // Loss of the literal reading is piecewise smooth in the weights; finite
  // differences with a tiny step stay inside one piece.
  SeededRng rng(8);
  const Network net = Network::random(rng, 4, std::vector<std::size_t>{3}, 2);
  const auto x = random_bipolar_seq(rng, 3, 4);
  const auto y = random_bipolar_seq(rng, 3, 2);
  const LayerOptions opts{true};
  const auto trace = network_forward(effective_network(net, ForwardMode::Compressed), x, nullptr,
                                     nullptr, opts);
  const Gradients g = bptt_round1(net, x, y, trace, opts);
  // Output-head gradient does not depend on the surrogate and must match exactly.
  Network probe = net;
  Mat& wo = probe.out.Wo;
  const auto loss = [&](const Mat& w) {
    Network n2 = net;
    n2.out.Wo = w;
    const auto tr = network_forward(effective_network(n2, ForwardMode::Compressed), x, nullptr,
                                    nullptr, opts);
    std::vector<Vec> p;
    for (const auto& o : tr.out) p.push_back(o.y);
    return loss_mse_bipolar(p, y);
  };
  const Mat fd = finite_diff_grad(loss, wo, 1e-6);
  for (std::size_t i = 0; i < fd.size(); ++i) CHECK(g.d.back()[i] == doctest::Approx(fd[i]).epsilon(1e-5));
}

TEST_CASE("loss_mse_bipolar") {
  CHECK(loss_mse_bipolar(Mat{{1, -1}}, Mat{{1, -1}}) == 0.0);
  // Every sign wrong: (2^2 + 2^2) / 2.
  CHECK(loss_mse_bipolar(Mat{{1, -1}}, Mat{{-1, 1}}) == 4.0);
  CHECK(loss_mse_bipolar(Mat{{0.5, 0.0}}, Mat{{1.0, -1.0}}) == doctest::Approx(0.625));
  CHECK_THROWS_AS(loss_mse_bipolar(Mat{{1, 2}}, Mat{{1}, {2}}), ShapeError);
}

TEST_CASE("adam_step") {
  // First step moves each parameter by lr * sign(g) (bias-corrected m/sqrt(v) = +-1).
  Mat p{{1.0, -2.0, 0.5}};
  const Mat g{{0.3, -4.0, 0.0}};
  AdamState st;
  adam_step(p, g, st, 0.1, 0.4, 0.9, 1e-8);
  CHECK(p(0, 0) == doctest::Approx(0.9));
  CHECK(p(0, 1) == doctest::Approx(-1.9));
  CHECK(p(0, 2) == 0.5);
  CHECK(st.step == 1);
  // A constant gradient keeps the bias-corrected m / sqrt(v) at +-1.
  adam_step(p, g, st, 0.1, 0.4, 0.9, 1e-8);
  CHECK(p(0, 0) == doctest::Approx(0.8));
  CHECK_THROWS_AS(adam_step(p, Mat(2, 2), st, 0.1, 0.4, 0.9), ShapeError);
}

TEST_CASE("dropout") {
  SeededRng rng(5);
  const Vec m = dropout_mask(rng, 20000, 0.2);
  double kept = 0.0, mean = 0.0;
  for (double v : m) {
    CHECK((v == 0.0 || v == doctest::Approx(1.25)));
    kept += v != 0.0;
    mean += v;
  }
  CHECK(kept / 20000.0 == doctest::Approx(0.8).epsilon(0.02));
  CHECK(mean / 20000.0 == doctest::Approx(1.0).epsilon(0.03));
  CHECK_THROWS_AS(dropout_mask(rng, 3, 1.0), DomainError);
  const Mat x{{1, 2, 3}};
  CHECK(apply_dropout(x, 0.5, rng, false) == x);
  CHECK(apply_dropout(x, 0.0, rng) == x);
  CHECK_THROWS_AS(apply_dropout(x, 1.0, rng), DomainError);
}

TEST_CASE("chunk_sequences") {
  Sequence s;
  for (int t = 0; t < 7; ++t) {
    s.x.push_back({static_cast<double>(t)});
    s.target.push_back({1.0});
  }
  const std::vector<Sequence> u{s};
  const auto c = chunk_sequences(u, 3);
  REQUIRE(c.size() == 3);
  CHECK(c[0].x.size() == 3);
  CHECK(c[2].x.size() == 1);
  CHECK(c[2].x[0][0] == 6.0);
  CHECK_THROWS_AS(chunk_sequences(u, 0), ConfigError);
}

TEST_CASE("TrainConfig validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.pi_schedule = {0.5, 0.9};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.pi_schedule = {0.5, 0.4, 1.0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.rho = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.dropout_hidden = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

namespace {

std::vector<Sequence> toy_data(std::uint64_t seed) {
  // Target: bin i follows the sign of input i.
  SeededRng rng(seed);
  std::vector<Sequence> data;
  for (int u = 0; u < 6; ++u) {
    Sequence s;
    for (int t = 0; t < 12; ++t) {
      Vec x = random_bipolar(rng, 6);
      s.target.push_back(Vec(x.begin(), x.begin() + 3));
      s.x.push_back(std::move(x));
    }
    data.push_back(std::move(s));
  }
  return data;
}

TrainConfig toy_config() {
  TrainConfig c;
  c.units = {8};
  c.T = 6;
  c.minibatch = 4;
  c.learning_rate = 0.02;
  c.round2_learning_rate = 0.01;
  c.epochs_round1 = 30;
  c.epochs_per_pi = 4;
  c.epochs_final_pi = 6;
  c.pi_schedule = {0.5, 1.0};
  c.eval_every = 2;
  return c;
}

}  // namespace

TEST_CASE("round-1 training lowers the loss and is deterministic") {
  const auto data = toy_data(2);
  const auto cfg = toy_config();
  const auto a = train_round1(cfg, data);
  const auto b = train_round1(cfg, data);
  CHECK(a.reports.back().loss < 0.5 * a.reports.front().loss);
  CHECK(a.net.out.Wo == b.net.out.Wo);
  CHECK(std::isnan(a.reports.front().val_sdr));
}

TEST_CASE("round-2 training runs every stage and snapshots") {
  const auto data = toy_data(4);
  auto cfg = toy_config();
  const auto r1 = train_round1(cfg, data);
  int calls = 0;
  const Evaluator eval = [&](const Network&, double pi) {
    ++calls;
    return pi;  // stand-in score
  };
  const auto r2 = train_round2(cfg, r1.net, data, eval);
  REQUIRE(r2.stages.size() == 2);
  CHECK(r2.stages[0].pi == 0.5);
  CHECK(r2.stages[1].pi == 1.0);
  // Damping starts at pi >= 0.8.
  CHECK(r2.stages[0].learning_rate == doctest::Approx(0.01));
  CHECK(r2.stages[1].learning_rate == doctest::Approx(0.005));
  CHECK(r2.reports.size() == cfg.epochs_per_pi + cfg.epochs_final_pi);
  CHECK(calls > 0);
}

TEST_CASE("round-2 early stopping restores the best network") {
  const auto data = toy_data(6);
  auto cfg = toy_config();
  cfg.pi_schedule = {1.0};
  cfg.epochs_final_pi = 20;
  cfg.eval_every = 1;
  cfg.early_stop_patience = 3;
  const auto r1 = train_round1(cfg, data);
  int n = 0;
  std::vector<Network> seen;
  // Scores rise for three evaluations then fall.
  const Evaluator eval = [&](const Network& net, double) {
    seen.push_back(net);
    ++n;
    return n <= 3 ? static_cast<double>(n) : 3.0 - n;
  };
  const auto r2 = train_round2(cfg, r1.net, data, eval);
  CHECK(r2.reports.size() == 6);  // 3 improving + 3 worsening evaluations
  CHECK(r2.net.out.Wo == seen[2].out.Wo);
  CHECK(r2.stages.back().val_sdr == 3.0);
}

TEST_CASE("non-finite data is rejected") {
  auto data = toy_data(1);
  data[0].x[0][0] = std::nan("");
  CHECK_THROWS_AS(train_round1(toy_config(), data), NumericError);
  CHECK_THROWS_AS(train_round1(toy_config(), std::vector<Sequence>{}), ConfigError);
}
