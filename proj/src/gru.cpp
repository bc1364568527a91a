#include "bgru/gru.hpp"

#include <algorithm>
#include <numeric>

#include "bgru/errors.hpp"

namespace bgru {

const std::array<const char*, GruLayer::kMatrices>& GruLayer::names() {
  static const std::array<const char*, kMatrices> n = {"Wr", "Ur", "Wz", "Uz", "Wh", "Uh"};
  return n;
}

GruLayer GruLayer::zeros(std::size_t input_dim, std::size_t units) {
  GruLayer l;
  for (std::size_t i = 0; i < kMatrices; ++i) {
    *l.matrices()[i] = Mat(units, i % 2 == 0 ? input_dim : units);
  }
  return l;
}

GruLayer GruLayer::random(SeededRng& rng, std::size_t input_dim, std::size_t units) {
  GruLayer l;
  for (std::size_t i = 0; i < kMatrices; ++i) {
    const std::size_t fan_in = i % 2 == 0 ? input_dim : units;
    *l.matrices()[i] =
        gaussian_matrix(rng, units, fan_in, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  }
  return l;
}

void GruLayer::validate() const {
  const std::size_t k = units(), kp = input_dim();
  auto mats = matrices();
  for (std::size_t i = 0; i < kMatrices; ++i) {
    const std::size_t cols = i % 2 == 0 ? kp : k;
    if (mats[i]->rows() != k || mats[i]->cols() != cols) {
      throw ShapeError(std::string("GRU layer: ") + names()[i] + " has shape " +
                       mats[i]->shape_string() + ", expected " + shape_string(k, cols));
    }
  }
}

void OutputLayer::validate(std::size_t units) const {
  if (Wo.cols() != units || Wo.rows() == 0) {
    throw ShapeError("output layer: Wo has shape " + Wo.shape_string() + ", expected (Fx" +
                     std::to_string(units) + ")");
  }
}

std::vector<Mat*> Network::parameters() {
  std::vector<Mat*> p;
  for (auto& l : layers) {
    for (Mat* m : l.matrices()) p.push_back(m);
  }
  p.push_back(&out.Wo);
  return p;
}

std::vector<const Mat*> Network::parameters() const {
  std::vector<const Mat*> p;
  for (const auto& l : layers) {
    for (const Mat* m : l.matrices()) p.push_back(m);
  }
  p.push_back(&out.Wo);
  return p;
}

std::string Network::parameter_name(std::size_t index) const {
  if (index == layers.size() * GruLayer::kMatrices) return "Wo";
  return std::string(GruLayer::names()[index % GruLayer::kMatrices]) + "[" +
         std::to_string(index / GruLayer::kMatrices) + "]";
}

Network Network::random(SeededRng& rng, std::size_t input_dim,
                        std::span<const std::size_t> units, std::size_t bins) {
  if (units.empty()) throw ConfigError("network needs at least one GRU layer");
  Network net;
  std::size_t prev = input_dim;
  for (std::size_t k : units) {
    net.layers.push_back(GruLayer::random(rng, prev, k));
    prev = k;
  }
  net.out.Wo = gaussian_matrix(rng, bins, prev, 1.0 / std::sqrt(static_cast<double>(prev)));
  return net;
}

void Network::validate() const {
  if (layers.empty()) throw ShapeError("network has no GRU layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].validate();
    if (l > 0 && layers[l].input_dim() != layers[l - 1].units()) {
      throw ShapeError("layer " + std::to_string(l) + " input dim " +
                       std::to_string(layers[l].input_dim()) + " != previous units " +
                       std::to_string(layers[l - 1].units()));
    }
  }
  out.validate(layers.back().units());
}

// ---------------------------------------------------------------------------
// Masks

namespace {

// ceil(rho * n), treating products within rounding of an integer as that integer.
std::size_t retained_count(double rho, std::size_t n) {
  const double exact = rho * static_cast<double>(n);
  const double nearest = std::round(exact);
  std::size_t k = std::abs(exact - nearest) < 1e-9 * std::max(1.0, exact)
                      ? static_cast<std::size_t>(nearest)
                      : static_cast<std::size_t>(std::ceil(exact));
  return std::clamp<std::size_t>(k, 1, n);
}

void check_rho(double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) {
    throw DomainError("sparsity rho must lie in (0, 1], got " + std::to_string(rho));
  }
}

}  // namespace

std::vector<ScaledSparsityMask> build_shared_sparsity_masks(std::span<const Mat* const> group,
                                                            double rho) {
  check_rho(rho);
  std::vector<std::pair<std::size_t, std::size_t>> index;  // (matrix, element)
  for (std::size_t m = 0; m < group.size(); ++m) {
    for (std::size_t i = 0; i < group[m]->size(); ++i) index.emplace_back(m, i);
  }
  if (index.empty()) throw ShapeError("sparsity mask of an empty matrix");
  auto mag = [&](const std::pair<std::size_t, std::size_t>& e) {
    return std::abs((*group[e.first])[e.second]);
  };
  // Descending magnitude; stable sort keeps lower (matrix, row-major) index first on ties.
  std::stable_sort(index.begin(), index.end(),
                   [&](const auto& a, const auto& b) { return mag(a) > mag(b); });
  const std::size_t keep = retained_count(rho, index.size());

  double sum = 0.0;
  for (std::size_t i = 0; i < keep; ++i) sum += mag(index[i]);
  const double mu = sum / static_cast<double>(keep);

  std::vector<ScaledSparsityMask> masks(group.size());
  for (std::size_t m = 0; m < group.size(); ++m) {
    masks[m].B = Mat(group[m]->rows(), group[m]->cols());
    masks[m].mu = mu;
    masks[m].beta = mag(index[keep - 1]);
  }
  for (std::size_t i = 0; i < keep; ++i) {
    masks[index[i].first].B[index[i].second] = mu;
    ++masks[index[i].first].retained;
  }
  return masks;
}

ScaledSparsityMask build_scaled_sparsity_mask(const Mat& W, double rho) {
  const Mat* group[] = {&W};
  return std::move(build_shared_sparsity_masks(group, rho).front());
}

std::vector<ScaledSparsityMask> build_network_sparsity(const Network& net, double rho,
                                                       bool per_layer) {
  std::vector<ScaledSparsityMask> out;
  for (const auto& layer : net.layers) {
    auto mats = layer.matrices();
    if (per_layer) {
      auto shared = build_shared_sparsity_masks(mats, rho);
      for (auto& m : shared) out.push_back(std::move(m));
    } else {
      for (const Mat* m : mats) out.push_back(build_scaled_sparsity_mask(*m, rho));
    }
  }
  out.push_back(build_scaled_sparsity_mask(net.out.Wo, rho));
  return out;
}

std::vector<Mat> sample_weight_masks(SeededRng& rng, const Network& net, double pi) {
  std::vector<Mat> c;
  for (const Mat* m : net.parameters()) c.push_back(bernoulli_matrix(rng, m->rows(), m->cols(), pi));
  return c;
}

namespace {

Vec bernoulli_vec(SeededRng& rng, std::size_t n, double pi) {
  Vec v(n);
  for (auto& x : v) x = rng.bernoulli(pi) ? 1.0 : 0.0;
  return v;
}

void check_pi(double pi) {
  if (!(pi >= 0.0 && pi <= 1.0)) {
    throw DomainError("binarization fraction pi must lie in [0,1], got " + std::to_string(pi));
  }
}

}  // namespace

ActivationMasks sample_activation_masks(SeededRng& rng, const Network& net, double pi,
                                        std::size_t steps) {
  check_pi(pi);
  ActivationMasks a;
  a.pi = pi;
  const std::size_t L = net.layers.size();
  a.r.resize(L);
  a.z.resize(L);
  a.h.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t k = net.layers[l].units();
    a.h0.push_back(bernoulli_vec(rng, k, pi));
  }
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t k = net.layers[l].units();
      a.r[l].push_back(bernoulli_vec(rng, k, pi));
      a.z[l].push_back(bernoulli_vec(rng, k, pi));
      a.h[l].push_back(bernoulli_vec(rng, k, pi));
    }
    a.out.push_back(bernoulli_vec(rng, net.bins(), pi));
  }
  return a;
}

Mat blend_weight(const Mat& W, const Mat& B, const Mat& C) {
  require_same_shape(W, B, "blend_weight");
  require_same_shape(W, C, "blend_weight");
  Mat out(W.rows(), W.cols());
  for (std::size_t i = 0; i < W.size(); ++i) {
    out[i] = (act_btanh(W[i]) * B[i]) * C[i] + std::tanh(W[i]) * (1.0 - C[i]);
  }
  return out;
}

Mat blend_activation(const Mat& real_val, const Mat& bin_val, const Mat& C) {
  require_same_shape(real_val, bin_val, "blend_activation");
  require_same_shape(real_val, C, "blend_activation");
  Mat out(real_val.rows(), real_val.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = bin_val[i] * C[i] + real_val[i] * (1.0 - C[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Effective weights

void BlendedWeight::apply(std::span<const double> x, std::span<double> out,
                          std::span<double> scratch) const {
  if (has_ternary && has_real) {
    matvec(ternary, x, scratch);
    matvec(real, x, out);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = mu * scratch[i] + out[i];
  } else if (has_ternary) {
    matvec(ternary, x, out);
    for (auto& v : out) v = mu * v;
  } else if (has_real) {
    matvec(real, x, out);
  } else {
    std::fill(out.begin(), out.end(), 0.0);
  }
}

void BlendedWeight::apply_transposed_add(std::span<const double> d, std::span<double> out) const {
  if (has_ternary) {
    Vec scaled(d.begin(), d.end());
    for (auto& v : scaled) v *= mu;
    matvec_transposed_add(ternary, scaled, out);
  }
  if (has_real) matvec_transposed_add(real, d, out);
}

Mat BlendedWeight::dense() const {
  Mat out(rows(), cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (has_ternary ? mu * ternary[i] : 0.0) + (has_real ? real[i] : 0.0);
  }
  return out;
}

BlendedWeight real_weight(const Mat& W) {
  BlendedWeight b;
  b.ternary = Mat(W.rows(), W.cols());
  b.real = W;
  b.has_real = true;
  return b;
}

BlendedWeight compressed_weight(const Mat& W) {
  BlendedWeight b;
  b.ternary = Mat(W.rows(), W.cols());
  b.real = map(W, [](double v) { return std::tanh(v); });
  b.has_real = true;
  return b;
}

BlendedWeight bitwise_weight(const Mat& W, const ScaledSparsityMask& mask, const Mat& C) {
  require_same_shape(W, mask.B, "bitwise_weight");
  require_same_shape(W, C, "bitwise_weight");
  BlendedWeight b;
  b.ternary = Mat(W.rows(), W.cols());
  b.real = Mat(W.rows(), W.cols());
  b.mu = mask.mu;
  for (std::size_t i = 0; i < W.size(); ++i) {
    if (C[i] != 0.0) {
      if (mask.B[i] != 0.0) {
        b.ternary[i] = act_btanh(W[i]);
        b.has_ternary = true;
      }
    } else {
      b.real[i] = std::tanh(W[i]);
      b.has_real = true;
    }
  }
  return b;
}

EffectiveNetwork effective_network(const Network& net, ForwardMode mode, const MaskSet* masks) {
  net.validate();
  EffectiveNetwork eff;
  eff.mode = mode;
  const auto params = net.parameters();
  if (mode == ForwardMode::Bitwise) {
    if (masks == nullptr || masks->sparsity.size() != params.size() ||
        masks->weight_c.size() != params.size()) {
      throw StateError("bitwise forward needs one sparsity mask and one C per weight matrix");
    }
  }
  auto make = [&](std::size_t idx) {
    switch (mode) {
      case ForwardMode::Real: return real_weight(*params[idx]);
      case ForwardMode::Compressed: return compressed_weight(*params[idx]);
      case ForwardMode::Bitwise:
        return bitwise_weight(*params[idx], masks->sparsity[idx], masks->weight_c[idx]);
    }
    throw StateError("unknown forward mode");
  };
  std::size_t idx = 0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    EffectiveLayer el;
    for (auto& w : el.w) w = make(idx++);
    eff.layers.push_back(std::move(el));
  }
  eff.out = make(idx);
  return eff;
}

// ---------------------------------------------------------------------------
// Forward passes

namespace {

void check_mask_steps(const std::vector<Vec>* c, std::size_t steps, std::size_t k,
                      const char* what) {
  if (c == nullptr) return;
  if (c->size() < steps) {
    throw StateError(std::string(what) + " masks cover " + std::to_string(c->size()) +
                     " timesteps, sequence has " + std::to_string(steps));
  }
  for (std::size_t t = 0; t < steps; ++t) {
    if ((*c)[t].size() != k) throw StateError(std::string(what) + " mask width mismatch");
  }
}

}  // namespace

std::vector<CellState> layer_forward(const EffectiveLayer& layer, std::span<const Vec> x_seq,
                                     std::span<const double> h0, const std::vector<Vec>* c_r,
                                     const std::vector<Vec>* c_z, const std::vector<Vec>* c_h,
                                     const LayerOptions& opts) {
  const auto& [Wr, Ur, Wz, Uz, Wh, Uh] = layer.w;
  const std::size_t k = Wr.rows(), kp = Wr.cols();
  if (h0.size() != k) {
    throw ShapeError("layer_forward: h0 length " + std::to_string(h0.size()) + " != units " +
                     std::to_string(k));
  }
  check_mask_steps(c_r, x_seq.size(), k, "reset-gate");
  check_mask_steps(c_z, x_seq.size(), k, "update-gate");
  check_mask_steps(c_h, x_seq.size(), k, "candidate");

  std::vector<CellState> states;
  states.reserve(x_seq.size());
  Vec h_prev(h0.begin(), h0.end());
  Vec tmp(k), scratch(k);
  for (std::size_t t = 0; t < x_seq.size(); ++t) {
    const Vec& x = x_seq[t];
    if (x.size() != kp) {
      throw ShapeError("layer_forward: input at t=" + std::to_string(t) + " has length " +
                       std::to_string(x.size()) + ", expected " + std::to_string(kp));
    }
    CellState s;
    s.x = x;
    s.h_prev = h_prev;
    s.a_r.assign(k, 0.0);
    s.a_z.assign(k, 0.0);
    s.a_h.assign(k, 0.0);
    s.r.resize(k);
    s.z.resize(k);
    s.q.resize(k);
    s.h_tilde.resize(k);
    s.h.resize(k);

    Wr.apply(x, s.a_r, scratch);
    Ur.apply(h_prev, tmp, scratch);
    for (std::size_t i = 0; i < k; ++i) s.a_r[i] = s.a_r[i] + tmp[i];
    Wz.apply(x, s.a_z, scratch);
    Uz.apply(h_prev, tmp, scratch);
    for (std::size_t i = 0; i < k; ++i) s.a_z[i] = s.a_z[i] + tmp[i];

    for (std::size_t i = 0; i < k; ++i) {
      const bool bin_r = opts.round1_binary_states || (c_r && (*c_r)[t][i] != 0.0);
      const bool bin_z = c_z && (*c_z)[t][i] != 0.0;
      s.r[i] = bin_r ? act_bsigmoid(s.a_r[i]) : act_sigmoid(s.a_r[i]);
      s.z[i] = bin_z ? act_bsigmoid(s.a_z[i]) : act_sigmoid(s.a_z[i]);
      const double hq = opts.round1_binary_states ? act_btanh(h_prev[i]) : h_prev[i];
      s.q[i] = s.r[i] * hq;
    }

    Wh.apply(x, s.a_h, scratch);
    Uh.apply(s.q, tmp, scratch);
    for (std::size_t i = 0; i < k; ++i) s.a_h[i] = s.a_h[i] + tmp[i];

    for (std::size_t i = 0; i < k; ++i) {
      const bool bin_h = c_h && (*c_h)[t][i] != 0.0;
      s.h_tilde[i] = bin_h ? act_btanh(s.a_h[i]) : act_tanh(s.a_h[i]);
      s.h[i] = s.z[i] * h_prev[i] + (1.0 - s.z[i]) * s.h_tilde[i];
    }
    h_prev = s.h;
    states.push_back(std::move(s));
  }
  return states;
}

std::vector<CellState> gru_forward(const GruLayer& layer, std::span<const Vec> x_seq,
                                   std::span<const double> h0) {
  layer.validate();
  EffectiveLayer el;
  auto mats = layer.matrices();
  for (std::size_t i = 0; i < GruLayer::kMatrices; ++i) el.w[i] = real_weight(*mats[i]);
  return layer_forward(el, x_seq, h0);
}

std::vector<CellState> compressed_forward(const GruLayer& layer, std::span<const Vec> x_seq,
                                          std::span<const double> h0, const LayerOptions& opts) {
  layer.validate();
  EffectiveLayer el;
  auto mats = layer.matrices();
  for (std::size_t i = 0; i < GruLayer::kMatrices; ++i) el.w[i] = compressed_weight(*mats[i]);
  return layer_forward(el, x_seq, h0, nullptr, nullptr, nullptr, opts);
}

std::vector<CellState> bgru_forward(const GruLayer& layer, const MaskSet& masks,
                                    const ActivationMasks& act, std::span<const Vec> x_seq,
                                    std::span<const double> h0) {
  layer.validate();
  check_pi(masks.pi);
  if (masks.sparsity.size() < GruLayer::kMatrices || masks.weight_c.size() < GruLayer::kMatrices) {
    throw StateError("bgru_forward: masks missing for the layer's six matrices");
  }
  if (act.r.empty() || act.z.empty() || act.h.empty()) {
    throw StateError("bgru_forward: activation masks missing");
  }
  EffectiveLayer el;
  auto mats = layer.matrices();
  for (std::size_t i = 0; i < GruLayer::kMatrices; ++i) {
    el.w[i] = bitwise_weight(*mats[i], masks.sparsity[i], masks.weight_c[i]);
  }
  return layer_forward(el, x_seq, h0, &act.r[0], &act.z[0], &act.h[0]);
}

BgruResult bgru_forward(const GruLayer& layer, const OutputLayer& out,
                        const std::vector<ScaledSparsityMask>& sparsity, double pi,
                        std::span<const Vec> x_seq, std::span<const double> h0,
                        SeededRng& rng) {
  check_pi(pi);
  Network net;
  net.layers.push_back(layer);
  net.out = out;
  net.validate();
  MaskSet masks;
  masks.sparsity = sparsity;
  masks.pi = pi;
  masks.weight_c = sample_weight_masks(rng, net, pi);
  const ActivationMasks act = sample_activation_masks(rng, net, pi, x_seq.size());

  BgruResult res;
  res.states = bgru_forward(layer, masks, act, x_seq, h0);
  const BlendedWeight wo = bitwise_weight(out.Wo, masks.sparsity.back(), masks.weight_c.back());
  for (std::size_t t = 0; t < res.states.size(); ++t) {
    res.outputs.push_back(output_forward(wo, res.states[t].h, &act.out[t]));
  }
  return res;
}

Vec output_forward(const BlendedWeight& wo, std::span<const double> h, const Vec* c_out) {
  if (h.size() != wo.cols()) {
    throw ShapeError("output_forward: hidden length " + std::to_string(h.size()) + " != " +
                     std::to_string(wo.cols()));
  }
  Vec a(wo.rows()), scratch(wo.rows());
  wo.apply(h, a, scratch);
  if (c_out && c_out->size() != a.size()) throw StateError("output mask width mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = (c_out && (*c_out)[i] != 0.0) ? act_btanh(a[i]) : act_tanh(a[i]);
  }
  return a;
}

Vec output_forward(const OutputLayer& out, std::span<const double> h, const Vec* c_out,
                   OutputMode mode, const ScaledSparsityMask* mask, const Mat* weight_c) {
  if (mode == OutputMode::Round1) return output_forward(compressed_weight(out.Wo), h, nullptr);
  if (mask == nullptr || weight_c == nullptr) {
    throw StateError("output_forward: round 2 needs the head's sparsity and Bernoulli masks");
  }
  return output_forward(bitwise_weight(out.Wo, *mask, *weight_c), h, c_out);
}

Vec prediction_to_ibm(std::span<const double> y) {
  Vec m(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) m[i] = y[i] >= 0.0 ? 1.0 : 0.0;
  return m;
}

ForwardTrace network_forward(const EffectiveNetwork& eff, std::span<const Vec> x_seq,
                             const ActivationMasks* act, const DropoutMasks* dropout,
                             const LayerOptions& opts) {
  const bool bitwise = eff.mode == ForwardMode::Bitwise;
  if (bitwise && act == nullptr) throw StateError("bitwise forward needs activation masks");
  const std::size_t L = eff.layers.size();
  const std::size_t T = x_seq.size();

  ForwardTrace trace;
  trace.layers.resize(L);

  std::vector<Vec> input(x_seq.begin(), x_seq.end());
  if (dropout && !dropout->input.empty()) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < input[t].size(); ++j) input[t][j] *= dropout->input[t][j];
    }
  }
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t k = eff.layers[l].w[0].rows();
    Vec h0(k, 0.0);
    if (bitwise) {
      for (std::size_t i = 0; i < k; ++i) h0[i] = act->h0[l][i] != 0.0 ? 1.0 : 0.0;
    }
    trace.layers[l] =
        layer_forward(eff.layers[l], input, h0, bitwise ? &act->r[l] : nullptr,
                      bitwise ? &act->z[l] : nullptr, bitwise ? &act->h[l] : nullptr,
                      bitwise ? LayerOptions{} : opts);
    for (std::size_t t = 0; t < T; ++t) {
      input[t] = trace.layers[l][t].h;
      if (dropout && !dropout->hidden.empty()) {
        for (std::size_t j = 0; j < k; ++j) input[t][j] *= dropout->hidden[l][t][j];
      }
    }
  }
  trace.out.reserve(T);
  Vec scratch(eff.out.rows());
  for (std::size_t t = 0; t < T; ++t) {
    OutputStep o;
    o.h_in = input[t];
    o.a_o.assign(eff.out.rows(), 0.0);
    eff.out.apply(o.h_in, o.a_o, scratch);
    o.y.resize(o.a_o.size());
    for (std::size_t i = 0; i < o.a_o.size(); ++i) {
      const bool bin = bitwise && act->out[t][i] != 0.0;
      o.y[i] = bin ? act_btanh(o.a_o[i]) : act_tanh(o.a_o[i]);
    }
    trace.out.push_back(std::move(o));
  }
  return trace;
}

std::vector<Vec> trace_ibm(const ForwardTrace& trace) {
  std::vector<Vec> out;
  out.reserve(trace.out.size());
  for (const auto& o : trace.out) out.push_back(prediction_to_ibm(o.y));
  return out;
}

}  // namespace bgru
