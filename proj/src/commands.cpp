#include "bgru/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>

#include "bgru/errors.hpp"
#include "bgru/pipeline.hpp"
#include "bgru/run_config.hpp"

namespace bgru {

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string pi_tag(double pi) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", pi);
  return buf;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f << text;
    if (!f) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string metrics_csv(const std::vector<LossReport>& reports) {
  std::string s = "epoch,pi,loss,grad_norm,val_sdr\n";
  for (const auto& r : reports) {
    s += std::to_string(r.epoch) + "," + num(r.pi) + "," + num(r.loss) + "," + num(r.grad_norm) +
         "," + num(r.val_sdr) + "\n";
  }
  return s;
}

std::vector<Sequence> to_sequences(const std::vector<UtterancePair>& pairs) {
  std::vector<Sequence> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.sequence());
  return out;
}

InferenceOptions inference_options(const RunConfig& cfg, double pi) {
  InferenceOptions o;
  o.pi = pi;
  o.rho = cfg.train.rho;
  o.per_layer_scale = cfg.train.per_layer_scale;
  o.round1_binary_states = cfg.train.round1_binary_states;
  o.seed = cfg.infer_seed;
  return o;
}

// Validation SDR on the held-out split; empty when there is none.
Evaluator make_evaluator(const RunConfig& cfg, std::shared_ptr<const std::vector<UtterancePair>> valid) {
  if (valid->empty()) return {};
  auto xs = std::make_shared<std::vector<Sequence>>(to_sequences(*valid));
  return [cfg, valid, xs](const Network& net, double pi) {
    std::size_t i = 0;
    const auto scores = score_pairs(*valid, [&](const UtterancePair&) {
      return predict_masks(net, (*xs)[i++].x, inference_options(cfg, pi));
    });
    return mean_sdr_est(scores);
  };
}

ModelFile require_model(const CommandArgs& args, const RunConfig& cfg, const char* fallback) {
  const auto path = args.model ? *args.model : cfg.output_dir / fallback;
  return load_model(path);
}

int cmd_fit_quantizer(const CommandArgs& args, const RunConfig& cfg, std::ostream& out) {
  const auto train = load_raw_pairs(cfg.corpus, Split::Train);
  const LloydMaxFit fit = fit_corpus_codebook(train, cfg.quantizer_iters);
  std::string s = "index,level,upper_threshold\n";
  for (std::size_t i = 0; i < fit.codebook.levels.size(); ++i) {
    s += std::to_string(i) + "," + num(fit.codebook.levels[i]) + "," +
         (i < fit.codebook.thresholds.size() ? num(fit.codebook.thresholds[i]) : "") + "\n";
  }
  std::string h = "iteration,mse\n";
  for (std::size_t i = 0; i < fit.mse_history.size(); ++i) {
    h += std::to_string(i) + "," + num(fit.mse_history[i]) + "\n";
  }
  ensure_dir(cfg.output_dir);
  const auto path = args.out ? *args.out : cfg.output_dir / "codebook.csv";
  write_text_atomic(path, s);
  write_text_atomic(cfg.output_dir / "quantizer_mse.csv", h);
  out << "codebook: " << path.string() << " (" << fit.iterations << " iterations, final mse "
      << num(fit.mse_history.back()) << (fit.degenerate ? ", degenerate" : "") << ")\n";
  return kExitOk;
}

int cmd_train_round1(const CommandArgs& args, const RunConfig& cfg, std::ostream& out) {
  const auto train_raw = load_raw_pairs(cfg.corpus, Split::Train);
  const LloydMaxFit fit = fit_corpus_codebook(train_raw, cfg.quantizer_iters);
  const auto train = build_pairs(train_raw, fit.codebook);
  auto valid = std::make_shared<const std::vector<UtterancePair>>(
      build_pairs(load_raw_pairs(cfg.corpus, Split::Valid), fit.codebook));
  const auto seqs = to_sequences(train);
  const Round1Result res = train_round1(cfg.train, seqs, make_evaluator(cfg, valid));

  ensure_dir(cfg.output_dir);
  ModelFile m;
  m.mode = ModelMode::Compressed;
  m.codebook = fit.codebook;
  m.net = res.net;
  const auto path = args.out ? *args.out : cfg.output_dir / "round1.bgru";
  save_model(path, m);
  write_text_atomic(cfg.output_dir / "round1_metrics.csv", metrics_csv(res.reports));
  out << "round 1: " << res.reports.size() << " epochs, loss " << num(res.reports.front().loss)
      << " -> " << num(res.reports.back().loss) << ", model " << path.string() << "\n";
  return kExitOk;
}

int cmd_train_round2(const CommandArgs& args, const RunConfig& cfg, std::ostream& out) {
  const ModelFile r1 = require_model(args, cfg, "round1.bgru");
  if (r1.mode != ModelMode::Compressed) {
    throw ConfigError("train-round2 needs a round-1 (compressed) model, got mode " +
                      to_string(r1.mode));
  }
  const auto train = build_pairs(load_raw_pairs(cfg.corpus, Split::Train), r1.codebook);
  auto valid = std::make_shared<const std::vector<UtterancePair>>(
      build_pairs(load_raw_pairs(cfg.corpus, Split::Valid), r1.codebook));
  const auto seqs = to_sequences(train);
  if (seqs.front().x.front().size() != r1.net.input_dim() ||
      seqs.front().target.front().size() != r1.net.bins()) {
    throw ConfigError("round-1 model dimensions do not match the corpus features");
  }
  const Round2Result res = train_round2(cfg.train, r1.net, seqs, make_evaluator(cfg, valid));

  ensure_dir(cfg.output_dir);
  std::string stages = "pi,val_sdr,learning_rate,model\n";
  for (const auto& st : res.stages) {
    ModelFile snap;
    snap.mode = ModelMode::Compressed;
    snap.codebook = r1.codebook;
    snap.net = st.net;
    const std::string name = "round2_pi" + pi_tag(st.pi) + ".bgru";
    save_model(cfg.output_dir / name, snap);
    stages += num(st.pi) + "," + num(st.val_sdr) + "," + num(st.learning_rate) + "," + name + "\n";
  }
  ModelFile packed;
  packed.mode = ModelMode::Packed;
  packed.codebook = r1.codebook;
  packed.packed = pack_network(res.net, build_network_sparsity(res.net, cfg.train.rho,
                                                               cfg.train.per_layer_scale));
  const auto path = args.out ? *args.out : cfg.output_dir / "round2_packed.bgru";
  save_model(path, packed);
  write_text_atomic(cfg.output_dir / "round2_metrics.csv", metrics_csv(res.reports));
  write_text_atomic(cfg.output_dir / "round2_stages.csv", stages);
  out << "round 2: " << res.stages.size() << " stages, " << res.reports.size()
      << " epochs, packed model " << path.string() << "\n";
  return kExitOk;
}

int cmd_infer(const CommandArgs& args, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (!args.in || !args.out) throw ConfigError("infer needs --in and --out");
  const ModelFile m = require_model(args, cfg, "round2_packed.bgru");
  const Waveform mixture = read_wav(*args.in);
  if (mixture.sample_rate != kDefaultSampleRate) {
    err << "warning: input sample rate " << mixture.sample_rate << " Hz differs from "
        << kDefaultSampleRate << " Hz\n";
  }
  const Waveform est = separate(m, mixture, inference_options(cfg, cfg.infer_pi));
  write_wav(*args.out, est);
  out << "wrote " << args.out->string();
  if (args.reference) {
    const Waveform ref = read_wav(*args.reference);
    if (ref.size() != est.size()) throw ShapeError("reference length differs from the input");
    out << " (sdr_mix " << num(sdr(ref, mixture)) << " dB, sdr_est " << num(sdr(ref, est)) << " dB)";
  }
  out << "\n";
  return kExitOk;
}

int cmd_eval(const CommandArgs& args, const RunConfig& cfg, std::ostream& out) {
  std::vector<SeparationScore> scores;
  if (cfg.eval_oracle) {
    const LloydMaxFit fit =
        fit_corpus_codebook(load_raw_pairs(cfg.corpus, Split::Train), cfg.quantizer_iters);
    const auto test = build_pairs(load_raw_pairs(cfg.corpus, Split::Test), fit.codebook);
    scores = score_oracle(test);
  } else {
    const ModelFile m = require_model(args, cfg, "round2_packed.bgru");
    const auto test = build_pairs(load_raw_pairs(cfg.corpus, Split::Test), m.codebook);
    const auto opts = inference_options(cfg, cfg.infer_pi);
    scores = score_pairs(test, [&](const UtterancePair& p) {
      return predict_masks(m, p.sequence().x, opts);
    });
  }
  std::string s = "utterance,sdr_mix,sdr_est\n";
  std::vector<double> mix, est;
  for (const auto& sc : scores) {
    s += sc.name + "," + num(sc.sdr_mix) + "," + num(sc.sdr_est) + "\n";
    mix.push_back(sc.sdr_mix);
    est.push_back(sc.sdr_est);
  }
  const auto mean = [](const std::vector<double>& v) {
    double t = 0.0;
    for (double x : v) t += x;
    return t / static_cast<double>(v.size());
  };
  const auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  s += "mean," + num(mean(mix)) + "," + num(mean(est)) + "\n";
  s += "median," + num(median(mix)) + "," + num(median(est)) + "\n";
  ensure_dir(cfg.output_dir);
  const auto path = args.out ? *args.out : cfg.output_dir / "eval.csv";
  write_text_atomic(path, s);
  out << "eval: " << scores.size() << " utterances, mean sdr_mix " << num(mean(mix))
      << " dB, mean sdr_est " << num(mean(est)) << " dB -> " << path.string() << "\n";
  return kExitOk;
}

// Float emulation of a packed network: the same ternary weights driven
// through the blended forward with every mask at 1.
EffectiveNetwork emulate_packed(const PackedNetwork& p) {
  const auto convert = [](const PackedTernaryMatrix& m) {
    BlendedWeight w;
    w.ternary = Mat(m.rows, m.cols);
    const Mat dense = m.unpack();
    for (std::size_t i = 0; i < dense.size(); ++i) {
      w.ternary[i] = dense[i] > 0.0 ? 1.0 : dense[i] < 0.0 ? -1.0 : 0.0;
    }
    w.real = Mat(m.rows, m.cols);
    w.mu = m.mu;
    w.has_ternary = true;
    return w;
  };
  EffectiveNetwork eff;
  eff.mode = ForwardMode::Bitwise;
  for (const auto& l : p.layers) {
    EffectiveLayer el;
    for (std::size_t i = 0; i < GruLayer::kMatrices; ++i) el.w[i] = convert(l.w[i]);
    eff.layers.push_back(std::move(el));
  }
  eff.out = convert(p.out);
  return eff;
}

ActivationMasks all_ones_masks(const PackedNetwork& p, std::size_t steps) {
  ActivationMasks a;
  a.pi = 1.0;
  for (const auto& l : p.layers) {
    const Vec ones(l.units(), 1.0);
    a.r.emplace_back(steps, ones);
    a.z.emplace_back(steps, ones);
    a.h.emplace_back(steps, ones);
    a.h0.push_back(ones);
  }
  a.out.assign(steps, Vec(p.bins(), 1.0));
  return a;
}

int cmd_bench(const CommandArgs& args, const RunConfig& cfg, std::ostream& out) {
  const ModelFile m = require_model(args, cfg, "round2_packed.bgru");
  if (m.mode != ModelMode::Packed) {
    throw ConfigError("bench needs a packed (mode 2) model, got mode " + to_string(m.mode));
  }
  SeededRng rng = SeededRng(cfg.infer_seed).split("bench-input");
  std::vector<Vec> x(cfg.bench_frames, Vec(m.input_dim()));
  for (auto& f : x) {
    for (auto& v : f) v = rng.bernoulli(0.5) ? 1.0 : -1.0;
  }
  const EffectiveNetwork eff = emulate_packed(m.packed);
  const ActivationMasks act = all_ones_masks(m.packed, x.size());

  using Clock = std::chrono::steady_clock;
  double packed_s = 0.0, float_s = 0.0;
  std::vector<Vec> packed_masks, float_masks;
  bool agree = true;
  for (std::size_t rep = 0; rep < cfg.bench_repeats; ++rep) {
    auto t0 = Clock::now();
    packed_masks = packed_infer_sequence(m.packed, x);
    auto t1 = Clock::now();
    float_masks = trace_ibm(network_forward(eff, x, &act));
    auto t2 = Clock::now();
    packed_s += std::chrono::duration<double>(t1 - t0).count();
    float_s += std::chrono::duration<double>(t2 - t1).count();
    agree = agree && packed_masks == float_masks;
  }
  const double frames = static_cast<double>(x.size() * cfg.bench_repeats);
  const auto units = m.units();
  const std::size_t packed_bytes = model_file_size(ModelMode::Packed, m.input_dim(), units, m.bins());
  const std::size_t float_bytes =
      model_file_size(ModelMode::Compressed, m.input_dim(), units, m.bins());
  out << "frames: " << x.size() << " x " << cfg.bench_repeats << "\n"
      << "packed_frames_per_s: " << num(frames / packed_s) << "\n"
      << "float_frames_per_s: " << num(frames / float_s) << "\n"
      << "speedup: " << num(float_s / packed_s) << "\n"
      << "packed_model_bytes: " << packed_bytes << "\n"
      << "float_model_bytes: " << float_bytes << "\n"
      << "size_ratio: " << num(static_cast<double>(float_bytes) / static_cast<double>(packed_bytes))
      << "\n"
      << "masks_agree: " << (agree ? "yes" : "no") << "\n";
  if (!agree) throw NumericError("packed and float paths disagree");
  return kExitOk;
}

}  // namespace

int run_command(const CommandArgs& args, std::ostream& out, std::ostream& err) {
  try {
    const RunConfig cfg = load_run_config(args.config);
    if (args.command == "fit-quantizer") return cmd_fit_quantizer(args, cfg, out);
    if (args.command == "train-round1") return cmd_train_round1(args, cfg, out);
    if (args.command == "train-round2") return cmd_train_round2(args, cfg, out);
    if (args.command == "infer") return cmd_infer(args, cfg, out, err);
    if (args.command == "eval") return cmd_eval(args, cfg, out);
    if (args.command == "bench") return cmd_bench(args, cfg, out);
    throw ConfigError("unknown command '" + args.command + "'");
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const StateError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace bgru
