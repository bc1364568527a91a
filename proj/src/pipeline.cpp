#include "bgru/pipeline.hpp"

#include "bgru/errors.hpp"

namespace bgru {

std::vector<Vec> predict_masks(const Network& net, std::span<const Vec> x_seq,
                               const InferenceOptions& opts) {
  if (!(opts.pi >= 0.0 && opts.pi <= 1.0)) throw DomainError("inference pi must lie in [0, 1]");
  const LayerOptions lopts{opts.round1_binary_states};
  if (opts.pi == 0.0) {
    const auto eff = effective_network(net, ForwardMode::Compressed);
    return trace_ibm(network_forward(eff, x_seq, nullptr, nullptr, lopts));
  }
  MaskSet masks;
  masks.rho = opts.rho;
  masks.pi = opts.pi;
  masks.sparsity = build_network_sparsity(net, opts.rho, opts.per_layer_scale);
  const SeededRng root(opts.seed);
  SeededRng wrng = root.split("infer-weight-c");
  masks.weight_c = sample_weight_masks(wrng, net, opts.pi);
  SeededRng arng = root.split("infer-activation");
  const ActivationMasks act = sample_activation_masks(arng, net, opts.pi, x_seq.size());
  const auto eff = effective_network(net, ForwardMode::Bitwise, &masks);
  return trace_ibm(network_forward(eff, x_seq, &act));
}

std::vector<Vec> predict_masks(const ModelFile& model, std::span<const Vec> x_seq,
                               const InferenceOptions& opts) {
  switch (model.mode) {
    case ModelMode::Real: {
      const auto eff = effective_network(model.net, ForwardMode::Real);
      return trace_ibm(network_forward(eff, x_seq));
    }
    case ModelMode::Compressed:
      return predict_masks(model.net, x_seq, opts);
    case ModelMode::Packed:
      return packed_infer_sequence(model.packed, x_seq);
  }
  throw StateError("unknown model mode");
}

Waveform reconstruct(const Spectrogram& mix, std::span<const Vec> masks) {
  Waveform w = istft(apply_mask(mix, masks));
  w.samples.resize(mix.signal_length, 0.0);
  return w;
}

Waveform separate(const ModelFile& model, const Waveform& mixture, const InferenceOptions& opts) {
  if (!(rms(mixture.samples) > 0.0)) throw DomainError("input mixture is silent");
  const Spectrogram mix = stft(mixture);
  const auto x = mixture_features(mix, model.codebook);
  if (!x.empty() && x.front().size() != model.input_dim()) {
    throw ShapeError("model expects " + std::to_string(model.input_dim()) + " input features, got " +
                     std::to_string(x.front().size()));
  }
  return reconstruct(mix, predict_masks(model, x, opts));
}

std::vector<SeparationScore> score_pairs(std::span<const UtterancePair> pairs,
                                         const MaskPredictor& predict) {
  if (pairs.empty()) throw ConfigError("cannot score an empty corpus");
  std::vector<SeparationScore> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    const Spectrogram mix = stft(p.mixture);
    const auto masks = predict(p);
    out.push_back({p.name, sdr(p.clean, p.mixture), sdr(p.clean, reconstruct(mix, masks))});
  }
  return out;
}

std::vector<SeparationScore> score_oracle(std::span<const UtterancePair> pairs) {
  return score_pairs(pairs, [](const UtterancePair& p) {
    std::vector<Vec> m;
    for (const auto& t : p.targets) m.push_back(t.mask);
    return m;
  });
}

double mean_sdr_est(std::span<const SeparationScore> scores) {
  if (scores.empty()) throw ConfigError("no scores to average");
  double s = 0.0;
  for (const auto& x : scores) s += x.sdr_est;
  return s / static_cast<double>(scores.size());
}

}  // namespace bgru
