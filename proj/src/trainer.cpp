#include "bgru/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bgru/errors.hpp"

namespace bgru {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (T < 1) fail("T must be >= 1");
  if (units.empty()) fail("units must list at least one layer size");
  for (auto k : units) {
    if (k == 0) fail("units entries must be positive");
  }
  if (!(rho > 0.0 && rho <= 1.0)) fail("rho must lie in (0,1]");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) fail("adam_beta1 must lie in (0,1)");
  if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) fail("adam_beta2 must lie in (0,1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(learning_rate >= 0.0)) fail("learning_rate must be >= 0");
  if (!(round2_learning_rate >= 0.0)) fail("round2_learning_rate must be >= 0");
  if (!(lr_damping > 0.0 && lr_damping <= 1.0)) fail("lr_damping must lie in (0,1]");
  if (minibatch < 1) fail("minibatch must be >= 1");
  if (!(dropout_input >= 0.0 && dropout_input < 1.0)) fail("dropout_input must lie in [0,1)");
  if (!(dropout_hidden >= 0.0 && dropout_hidden < 1.0)) fail("dropout_hidden must lie in [0,1)");
  if (pi_schedule.empty()) fail("pi_schedule must not be empty");
  for (std::size_t i = 0; i < pi_schedule.size(); ++i) {
    if (!(pi_schedule[i] > 0.0 && pi_schedule[i] <= 1.0)) fail("pi_schedule entries must lie in (0,1]");
    if (i > 0 && !(pi_schedule[i] > pi_schedule[i - 1])) fail("pi_schedule must be ascending");
  }
  if (pi_schedule.back() != 1.0) fail("pi_schedule must end at 1.0");
}

double Gradients::norm() const {
  double s = 0.0;
  for (const auto& m : d) {
    for (double v : m.data()) s += v * v;
  }
  return std::sqrt(s);
}

double loss_mse_bipolar(const Mat& pred, const Mat& target) {
  require_same_shape(pred, target, "loss_mse_bipolar");
  if (pred.size() == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

double loss_mse_bipolar(std::span<const Vec> pred, std::span<const Vec> target) {
  if (pred.size() != target.size()) {
    throw ShapeError("loss_mse_bipolar: " + std::to_string(pred.size()) + " frames vs " +
                     std::to_string(target.size()));
  }
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    if (pred[t].size() != target[t].size()) throw ShapeError("loss_mse_bipolar: frame width mismatch");
    for (std::size_t i = 0; i < pred[t].size(); ++i) {
      const double d = pred[t][i] - target[t][i];
      s += d * d;
    }
    n += pred[t].size();
  }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

namespace {

double dtanh_from_pre(double a) {
  const double t = std::tanh(a);
  return 1.0 - t * t;
}

double dsigmoid_from_pre(double a) {
  const double s = sigmoid(a);
  return s * (1.0 - s);
}

}  // namespace

Gradients backward(const Network& net, const EffectiveNetwork& eff, const ForwardTrace& trace,
                   std::span<const Vec> targets, const MaskSet* masks,
                   const DropoutMasks* dropout, const LayerOptions& opts_in) {
  const std::size_t L = net.layers.size();
  if (trace.layers.size() != L || eff.layers.size() != L) {
    throw StateError("backward: cached forward state does not match the network depth");
  }
  const std::size_t T = trace.out.size();
  if (T == 0) throw StateError("backward: empty forward cache");
  if (targets.size() != T) {
    throw ShapeError("backward: " + std::to_string(targets.size()) + " target frames vs " +
                     std::to_string(T) + " cached");
  }
  const bool bitwise = eff.mode == ForwardMode::Bitwise;
  if (bitwise && (masks == nullptr || masks->weight_c.size() != net.matrix_count() ||
                  masks->sparsity.size() != net.matrix_count())) {
    throw StateError("backward: round-2 gradients need the masks used by the forward pass");
  }
  const LayerOptions opts = bitwise ? LayerOptions{} : opts_in;
  const std::size_t F = net.bins();
  const auto params = net.parameters();

  std::vector<Mat> deff;
  deff.reserve(params.size());
  for (const Mat* p : params) deff.emplace_back(p->rows(), p->cols());

  // Head.
  const double scale = 2.0 / static_cast<double>(T * F);
  const std::size_t K_top = net.layers.back().units();
  std::vector<Vec> upstream(T, Vec(K_top, 0.0));
  Mat& dWo = deff.back();
  Vec da_o(F);
  for (std::size_t t = 0; t < T; ++t) {
    const auto& o = trace.out[t];
    if (targets[t].size() != F) throw ShapeError("backward: target width mismatch");
    for (std::size_t i = 0; i < F; ++i) {
      da_o[i] = scale * (o.y[i] - targets[t][i]) * dtanh_from_pre(o.a_o[i]);
    }
    add_outer(dWo, da_o, o.h_in);
    eff.out.apply_transposed_add(da_o, upstream[t]);
    if (dropout && !dropout->hidden.empty()) {
      for (std::size_t i = 0; i < K_top; ++i) upstream[t][i] *= dropout->hidden[L - 1][t][i];
    }
  }

  for (std::size_t li = L; li-- > 0;) {
    const auto& cells = trace.layers[li];
    if (cells.size() != T) throw StateError("backward: layer cache length mismatch");
    const auto& w = eff.layers[li].w;
    const std::size_t K = net.layers[li].units();
    const std::size_t base = li * GruLayer::kMatrices;
    Mat& dWr = deff[base + 0];
    Mat& dUr = deff[base + 1];
    Mat& dWz = deff[base + 2];
    Mat& dUz = deff[base + 3];
    Mat& dWh = deff[base + 4];
    Mat& dUh = deff[base + 5];
    const bool need_dx = li > 0;
    std::vector<Vec> dx_seq;
    if (need_dx) dx_seq.assign(T, Vec(net.layers[li].input_dim(), 0.0));

    Vec carry(K, 0.0), dh(K), dh_prev(K), da_h(K), dq(K), da_r(K), da_z(K), dz(K);
    for (std::size_t t = T; t-- > 0;) {
      const CellState& s = cells[t];
      for (std::size_t i = 0; i < K; ++i) {
        dh[i] = upstream[t][i] + carry[i];
        dz[i] = dh[i] * (s.h_prev[i] - s.h_tilde[i]);
        dh_prev[i] = dh[i] * s.z[i];
        da_h[i] = dh[i] * (1.0 - s.z[i]) * dtanh_from_pre(s.a_h[i]);
      }
      add_outer(dWh, da_h, s.x);
      add_outer(dUh, da_h, s.q);
      std::fill(dq.begin(), dq.end(), 0.0);
      w[5].apply_transposed_add(da_h, dq);
      for (std::size_t i = 0; i < K; ++i) {
        const double hq = opts.round1_binary_states ? act_btanh(s.h_prev[i]) : s.h_prev[i];
        const double dhq = opts.round1_binary_states ? dtanh_from_pre(s.h_prev[i]) : 1.0;
        const double dr = dq[i] * hq;
        dh_prev[i] += dq[i] * s.r[i] * dhq;
        da_r[i] = dr * dsigmoid_from_pre(s.a_r[i]);
        da_z[i] = dz[i] * dsigmoid_from_pre(s.a_z[i]);
      }
      add_outer(dWr, da_r, s.x);
      add_outer(dUr, da_r, s.h_prev);
      add_outer(dWz, da_z, s.x);
      add_outer(dUz, da_z, s.h_prev);
      w[1].apply_transposed_add(da_r, dh_prev);
      w[3].apply_transposed_add(da_z, dh_prev);
      if (need_dx) {
        w[0].apply_transposed_add(da_r, dx_seq[t]);
        w[2].apply_transposed_add(da_z, dx_seq[t]);
        w[4].apply_transposed_add(da_h, dx_seq[t]);
      }
      carry = dh_prev;
    }
    if (need_dx) {
      const std::size_t Kp = net.layers[li].input_dim();
      for (std::size_t t = 0; t < T; ++t) {
        if (dropout && !dropout->hidden.empty()) {
          for (std::size_t j = 0; j < Kp; ++j) dx_seq[t][j] *= dropout->hidden[li - 1][t][j];
        }
      }
      upstream = std::move(dx_seq);
    }
  }

  // Chain through the weight transform: tanh compression and the mask factor.
  Gradients g;
  g.d = std::move(deff);
  if (eff.mode == ForwardMode::Real) return g;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Mat& W = *params[p];
    Mat& d = g.d[p];
    for (std::size_t i = 0; i < W.size(); ++i) {
      double factor = dtanh_from_pre(W[i]);
      if (bitwise && masks->weight_c[p][i] != 0.0) factor *= masks->sparsity[p].B[i];
      d[i] *= factor;
    }
  }
  return g;
}

Gradients bptt_round1(const Network& net, std::span<const Vec> x_seq, std::span<const Vec> targets,
                      const ForwardTrace& trace, const LayerOptions& opts) {
  if (!trace.layers.empty() && trace.layers[0].size() != x_seq.size()) {
    throw StateError("bptt_round1: cache does not cover the input sequence");
  }
  const EffectiveNetwork eff = effective_network(net, ForwardMode::Compressed);
  return backward(net, eff, trace, targets, nullptr, nullptr, opts);
}

Gradients bptt_round2(const Network& net, const MaskSet& masks, std::span<const Vec> x_seq,
                      std::span<const Vec> targets, const ForwardTrace& trace) {
  if (!trace.layers.empty() && trace.layers[0].size() != x_seq.size()) {
    throw StateError("bptt_round2: cache does not cover the input sequence");
  }
  const EffectiveNetwork eff = effective_network(net, ForwardMode::Bitwise, &masks);
  return backward(net, eff, trace, targets, &masks);
}

void adam_step(Mat& param, const Mat& grad, AdamState& st, double lr, double beta1, double beta2,
               double eps) {
  require_same_shape(param, grad, "adam_step");
  if (st.m.empty()) {
    st.m = Mat(param.rows(), param.cols());
    st.v = Mat(param.rows(), param.cols());
  }
  require_same_shape(param, st.m, "adam_step state");
  ++st.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
    st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
    const double mhat = st.m[i] / c1;
    const double vhat = st.v[i] / c2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

Vec dropout_mask(SeededRng& rng, std::size_t n, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw DomainError("dropout rate must lie in [0,1), got " + std::to_string(rate));
  }
  Vec m(n, 1.0);
  if (rate == 0.0) return m;
  const double keep = 1.0 / (1.0 - rate);
  for (auto& v : m) v = rng.uniform() < rate ? 0.0 : keep;
  return m;
}

Mat apply_dropout(const Mat& x, double rate, SeededRng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw DomainError("dropout rate must lie in [0,1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const Vec m = dropout_mask(rng, x.size(), rate);
  Mat out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m[i];
  return out;
}

DropoutMasks sample_dropout(SeededRng& rng, const Network& net, std::size_t steps,
                            double input_rate, double hidden_rate) {
  DropoutMasks d;
  if (input_rate > 0.0) {
    for (std::size_t t = 0; t < steps; ++t) d.input.push_back(dropout_mask(rng, net.input_dim(), input_rate));
  }
  if (hidden_rate > 0.0) {
    d.hidden.resize(net.layers.size());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      for (std::size_t t = 0; t < steps; ++t) {
        d.hidden[l].push_back(dropout_mask(rng, net.layers[l].units(), hidden_rate));
      }
    }
  }
  return d;
}

std::vector<Sequence> chunk_sequences(std::span<const Sequence> utterances, std::size_t T) {
  if (T == 0) throw ConfigError("chunk length must be positive");
  std::vector<Sequence> out;
  for (const auto& u : utterances) {
    if (u.x.size() != u.target.size()) {
      throw ShapeError("sequence has " + std::to_string(u.x.size()) + " inputs but " +
                       std::to_string(u.target.size()) + " targets");
    }
    for (std::size_t start = 0; start < u.x.size(); start += T) {
      const std::size_t end = std::min(u.x.size(), start + T);
      Sequence s;
      s.x.assign(u.x.begin() + static_cast<std::ptrdiff_t>(start),
                 u.x.begin() + static_cast<std::ptrdiff_t>(end));
      s.target.assign(u.target.begin() + static_cast<std::ptrdiff_t>(start),
                      u.target.begin() + static_cast<std::ptrdiff_t>(end));
      out.push_back(std::move(s));
    }
  }
  return out;
}

namespace {

struct EpochStats {
  double loss = 0.0;
  double grad_norm = 0.0;
};

// Stage context shared by both rounds. Round 1 uses stage 0 and compressed
// weights; round 2 uses stage s+1 for schedule entry s.
struct StageContext {
  ForwardMode mode = ForwardMode::Compressed;
  double pi = 0.0;
  std::uint64_t stage = 0;
  const std::vector<ScaledSparsityMask>* sparsity = nullptr;
};

EpochStats run_epoch(Network& net, std::vector<AdamState>& adam, const TrainConfig& cfg,
                     std::span<const Sequence> chunks, double lr, const StageContext& ctx,
                     std::uint64_t epoch) {
  const SeededRng root(cfg.seed);
  std::vector<std::size_t> order(chunks.size());
  std::iota(order.begin(), order.end(), 0);
  SeededRng shuffle = root.split("shuffle", ctx.stage, epoch);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

  const LayerOptions opts{cfg.round1_binary_states};
  const bool bitwise = ctx.mode == ForwardMode::Bitwise;
  EpochStats stats;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg.minibatch) {
    const std::size_t end = std::min(order.size(), start + cfg.minibatch);
    const std::uint64_t batch = start / cfg.minibatch;

    MaskSet masks;
    if (bitwise) {
      masks.sparsity = *ctx.sparsity;
      masks.rho = cfg.rho;
      masks.pi = ctx.pi;
      SeededRng wrng = root.split("weight_c", (ctx.stage << 32) | epoch, batch);
      masks.weight_c = sample_weight_masks(wrng, net, ctx.pi);
    }
    const EffectiveNetwork eff = effective_network(net, ctx.mode, bitwise ? &masks : nullptr);

    Gradients total;
    double batch_loss = 0.0;
    for (std::size_t b = start; b < end; ++b) {
      const std::size_t idx = order[b];
      const Sequence& seq = chunks[idx];
      const SeededRng srng = root.split("sequence", (ctx.stage << 32) | epoch, idx);
      SeededRng drng = srng.split("dropout");
      const DropoutMasks drop =
          sample_dropout(drng, net, seq.x.size(), cfg.dropout_input, cfg.dropout_hidden);
      ActivationMasks act;
      if (bitwise) {
        SeededRng arng = srng.split("activation");
        act = sample_activation_masks(arng, net, ctx.pi, seq.x.size());
      }
      const ForwardTrace trace =
          network_forward(eff, seq.x, bitwise ? &act : nullptr, &drop, opts);
      std::vector<Vec> y;
      y.reserve(trace.out.size());
      for (const auto& o : trace.out) y.push_back(o.y);
      batch_loss += loss_mse_bipolar(y, seq.target);
      Gradients g = backward(net, eff, trace, seq.target, bitwise ? &masks : nullptr, &drop, opts);
      if (total.d.empty()) {
        total = std::move(g);
      } else {
        for (std::size_t p = 0; p < total.d.size(); ++p) {
          for (std::size_t i = 0; i < total.d[p].size(); ++i) total.d[p][i] += g.d[p][i];
        }
      }
    }
    const double inv = 1.0 / static_cast<double>(end - start);
    for (auto& m : total.d) {
      for (auto& v : m.data()) v *= inv;
    }
    stats.loss += batch_loss * inv;
    stats.grad_norm += total.norm();
    ++batches;

    auto params = net.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
      Mat& g = total.d[p];
      if (!all_finite(g)) throw NumericError("non-finite gradient for " + net.parameter_name(p));
      if (cfg.grad_clip > 0.0) {
        const double n = frobenius_norm(g);
        if (n > cfg.grad_clip) {
          for (auto& v : g.data()) v *= cfg.grad_clip / n;
        }
      }
      adam_step(*params[p], g, adam[p], lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    }
  }
  if (batches > 0) {
    stats.loss /= static_cast<double>(batches);
    stats.grad_norm /= static_cast<double>(batches);
  }
  return stats;
}

std::vector<AdamState> fresh_adam(const Network& net) {
  std::vector<AdamState> a;
  for (const Mat* p : net.parameters()) a.push_back({Mat(p->rows(), p->cols()), Mat(p->rows(), p->cols()), 0});
  return a;
}

void check_data(std::span<const Sequence> data) {
  if (data.empty()) throw ConfigError("training data is empty");
  for (const auto& s : data) {
    if (s.x.empty()) throw ConfigError("training data contains an empty sequence");
  }
}

bool eval_due(const TrainConfig& cfg, std::size_t epoch_in_stage, std::size_t stage_epochs) {
  if (epoch_in_stage + 1 == stage_epochs) return true;
  return cfg.eval_every > 0 && (epoch_in_stage + 1) % cfg.eval_every == 0;
}

}  // namespace

Round1Result train_round1(const TrainConfig& cfg, std::span<const Sequence> data,
                          const Evaluator& evaluate) {
  cfg.validate();
  check_data(data);
  SeededRng init = SeededRng(cfg.seed).split("init");
  Network net = Network::random(init, data.front().x.front().size(), cfg.units,
                                data.front().target.front().size());
  return train_round1(cfg, std::move(net), data, evaluate);
}

Round1Result train_round1(const TrainConfig& cfg, Network init, std::span<const Sequence> data,
                          const Evaluator& evaluate) {
  cfg.validate();
  check_data(data);
  init.validate();
  const auto chunks = chunk_sequences(data, cfg.T);
  Round1Result res;
  res.net = std::move(init);
  auto adam = fresh_adam(res.net);
  const StageContext ctx{ForwardMode::Compressed, 0.0, 0, nullptr};
  for (std::size_t e = 0; e < cfg.epochs_round1; ++e) {
    const EpochStats st = run_epoch(res.net, adam, cfg, chunks, cfg.learning_rate, ctx, e);
    LossReport r{e + 1, 0.0, st.loss, st.grad_norm, std::numeric_limits<double>::quiet_NaN()};
    if (evaluate && eval_due(cfg, e, cfg.epochs_round1)) r.val_sdr = evaluate(res.net, 0.0);
    res.reports.push_back(r);
  }
  return res;
}

Round2Result train_round2(const TrainConfig& cfg, const Network& pretrained,
                          std::span<const Sequence> data, const Evaluator& evaluate) {
  cfg.validate();
  check_data(data);
  pretrained.validate();
  const auto chunks = chunk_sequences(data, cfg.T);
  Round2Result res;
  res.net = pretrained;
  auto adam = fresh_adam(res.net);
  double lr = cfg.round2_learning_rate;
  std::size_t global_epoch = 0;

  for (std::size_t s = 0; s < cfg.pi_schedule.size(); ++s) {
    const double pi = cfg.pi_schedule[s];
    if (s > 0 && pi >= cfg.lr_damping_from_pi) lr *= cfg.lr_damping;
    // B is rebuilt from the current real-valued weights at each stage and frozen within it.
    const auto sparsity = build_network_sparsity(res.net, cfg.rho, cfg.per_layer_scale);
    const StageContext ctx{ForwardMode::Bitwise, pi, s + 1, &sparsity};
    const bool final_stage = s + 1 == cfg.pi_schedule.size();
    const std::size_t epochs = final_stage ? cfg.epochs_final_pi : cfg.epochs_per_pi;

    double best_sdr = -std::numeric_limits<double>::infinity();
    Network best = res.net;
    double last_sdr = std::numeric_limits<double>::quiet_NaN();
    std::size_t worse_streak = 0;
    bool have_eval = false;
    for (std::size_t e = 0; e < epochs; ++e) {
      const EpochStats st = run_epoch(res.net, adam, cfg, chunks, lr, ctx, e);
      LossReport r{++global_epoch, pi, st.loss, st.grad_norm,
                   std::numeric_limits<double>::quiet_NaN()};
      if (evaluate && eval_due(cfg, e, epochs)) {
        r.val_sdr = evaluate(res.net, pi);
        if (final_stage) {
          if (have_eval && r.val_sdr < last_sdr) {
            ++worse_streak;
          } else {
            worse_streak = 0;
          }
          if (r.val_sdr > best_sdr) {
            best_sdr = r.val_sdr;
            best = res.net;
          }
          last_sdr = r.val_sdr;
          have_eval = true;
        }
      }
      res.reports.push_back(r);
      if (final_stage && cfg.early_stop_patience > 0 && worse_streak >= cfg.early_stop_patience) {
        break;
      }
    }
    if (final_stage && have_eval) res.net = best;

    StageSnapshot snap;
    snap.pi = pi;
    snap.net = res.net;
    snap.learning_rate = lr;
    if (!evaluate) {
      snap.val_sdr = std::numeric_limits<double>::quiet_NaN();
    } else if (final_stage && have_eval) {
      snap.val_sdr = best_sdr;
    } else if (epochs > 0) {
      snap.val_sdr = res.reports.back().val_sdr;  // last epoch of a stage is always evaluated
    } else {
      snap.val_sdr = evaluate(res.net, pi);
    }
    res.stages.push_back(std::move(snap));
  }
  return res;
}

}  // namespace bgru
