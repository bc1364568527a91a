// Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>

#include "bgru/audio.hpp"
#include "bgru/bitkernel.hpp"
#include "bgru/dataset.hpp"
#include "bgru/model_file.hpp"
#include "bgru/pipeline.hpp"
#include "bgru/run_config.hpp"
#include "gradient_check.hpp"

using namespace bgru;
using namespace bgru::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome gradient_oracle() {
  double worst1 = 0.0, worst2 = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    worst1 = std::max(worst1, round1_gradient_error(seed));
    worst2 = std::max(worst2, round2_gradient_error(seed));
  }
  return {worst1 < 1e-4 && worst2 < 1e-4,
          "max rel err round1 " + fmt("%.2e", worst1) + ", round2 " + fmt("%.2e", worst2)};
}

// Float oracles: ternary rows as mu * {-1,0,1} and bipolar vectors as doubles.
struct DenseTernary {
  Mat t;  // {-1,0,1}
  double mu = 0.0;
};

DenseTernary dense_of(const Mat& W, const Mat& B) {
  DenseTernary d{Mat(W.rows(), W.cols()), 0.0};
  for (std::size_t i = 0; i < W.size(); ++i) {
    if (B[i] != 0.0) {
      d.t[i] = W[i] >= 0.0 ? 1.0 : -1.0;
      d.mu = B[i];
    }
  }
  return d;
}

double float_dot(const DenseTernary& w, std::size_t row, const Vec& x) {
  double s = 0.0;
  for (std::size_t c = 0; c < x.size(); ++c) s += w.t(row, c) * x[c];
  return w.mu * s;
}

struct RandomTernary {
  PackedTernaryMatrix packed;
  DenseTernary dense;
};

RandomTernary make_ternary(SeededRng& rng, std::size_t rows, std::size_t cols) {
  Mat W, B;
  random_ternary(rng, rows, cols, rng.uniform(0.01, 2.0), W, B);
  return {pack_ternary(W, B), dense_of(W, B)};
}

Outcome packed_kernels() {
  SeededRng rng(2024);
  const int n = 10000;
  int bad_dot = 0, bad_masked = 0, bad_mux = 0, bad_step = 0;
  for (int i = 0; i < n; ++i) {
    const std::size_t d = 1 + rng.below(130);
    const auto w = make_ternary(rng, 1, d);
    const Vec x = random_bipolar(rng, d), g = random_gate(rng, d), y = random_bipolar(rng, d);
    const auto px = PackedBipolarVector::pack(x);
    const auto pg = PackedGateVector::pack(g);
    if (xnor_dot(px, w.packed, 0) != float_dot(w.dense, 0, x)) ++bad_dot;
    Vec gx(d);
    for (std::size_t k = 0; k < d; ++k) gx[k] = g[k] * x[k];
    if (masked_xnor_dot(px, pg, w.packed, 0) != float_dot(w.dense, 0, gx)) ++bad_masked;
    Vec mux(d);
    for (std::size_t k = 0; k < d; ++k) mux[k] = g[k] * x[k] + (1.0 - g[k]) * y[k];
    if (bit_mux(pg, px, PackedBipolarVector::pack(y)).unpack() != mux) ++bad_mux;
  }
  for (int i = 0; i < n; ++i) {
    const std::size_t in = 1 + rng.below(130), k = 1 + rng.below(130), f = 1 + rng.below(130);
    PackedLayer layer;
    std::array<DenseTernary, GruLayer::kMatrices> dense;
    for (std::size_t m = 0; m < GruLayer::kMatrices; ++m) {
      auto t = make_ternary(rng, k, m % 2 == 0 ? in : k);
      layer.w[m] = std::move(t.packed);
      dense[m] = std::move(t.dense);
    }
    const auto out = make_ternary(rng, f, k);
    const Vec x = random_bipolar(rng, in), h = random_bipolar(rng, k);
    Vec r(k), z(k), rh(k), hn(k), ibm(f);
    for (std::size_t j = 0; j < k; ++j) {
      r[j] = float_dot(dense[0], j, x) + float_dot(dense[1], j, h) >= 0.0 ? 1.0 : 0.0;
      z[j] = float_dot(dense[2], j, x) + float_dot(dense[3], j, h) >= 0.0 ? 1.0 : 0.0;
      rh[j] = r[j] * h[j];
    }
    for (std::size_t j = 0; j < k; ++j) {
      const double cand = float_dot(dense[4], j, x) + float_dot(dense[5], j, rh) >= 0.0 ? 1.0 : -1.0;
      hn[j] = z[j] * h[j] + (1.0 - z[j]) * cand;
    }
    for (std::size_t j = 0; j < f; ++j) ibm[j] = float_dot(out.dense, j, hn) >= 0.0 ? 1.0 : 0.0;
    const auto res = bgru_infer_step(layer, out.packed, PackedBipolarVector::pack(x),
                                     PackedBipolarVector::pack(h));
    if (res.h.unpack() != hn || res.ibm.unpack() != ibm || !res.h.canonical()) ++bad_step;
  }
  const int bad = bad_dot + bad_masked + bad_mux + bad_step;
  return {bad == 0, std::to_string(n) + " instances per kernel, mismatches xnor_dot " +
                        std::to_string(bad_dot) + ", masked " + std::to_string(bad_masked) +
                        ", bit_mux " + std::to_string(bad_mux) + ", infer_step " +
                        std::to_string(bad_step)};
}

Outcome endpoints() {
  SeededRng rng(303);
  int bad0 = 0, bad1 = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t in = 1 + rng.below(70), k = 1 + rng.below(70), f = 1 + rng.below(40);
    Network net = Network::random(rng, in, std::vector<std::size_t>{k}, f);
    const auto sparsity = build_network_sparsity(net, 0.1 + 0.009 * trial, trial % 3 == 0);
    const auto x = random_bipolar_seq(rng, 1 + rng.below(15), in);

    const auto r0 = bgru_forward(net.layers[0], net.out, sparsity, 0.0, x, Vec(k, 0.0), rng);
    const auto c0 = compressed_forward(net.layers[0], x, Vec(k, 0.0));
    for (std::size_t t = 0; t < x.size(); ++t) {
      if (r0.states[t].h != c0[t].h ||
          r0.outputs[t] != output_forward(net.out, c0[t].h, nullptr, OutputMode::Round1)) {
        ++bad0;
        break;
      }
    }

    const Vec ones(k, 1.0);
    const auto r1 = bgru_forward(net.layers[0], net.out, sparsity, 1.0, x, ones, rng);
    const PackedNetwork packed = pack_network(net, sparsity);
    auto h = PackedBipolarVector::pack(ones);
    for (std::size_t t = 0; t < x.size(); ++t) {
      const auto step = bgru_infer_step(packed.layers[0], packed.out, PackedBipolarVector::pack(x[t]), h);
      h = step.h;
      if (r1.states[t].h != h.unpack() || prediction_to_ibm(r1.outputs[t]) != step.ibm.unpack()) {
        ++bad1;
        break;
      }
    }
  }
  return {bad0 == 0 && bad1 == 0, "100 networks, mismatches at pi=0 " + std::to_string(bad0) +
                                      ", at pi=1 " + std::to_string(bad1)};
}

Outcome mask_construction() {
  SeededRng rng(404);
  int bad = 0, cases = 0;
  double worst_mu = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t rows = 1 + rng.below(40), cols = 1 + rng.below(40);
    const Mat W = gaussian_matrix(rng, rows, cols, rng.uniform(0.01, 3.0));
    const std::size_t n = W.size();
    for (std::size_t tenth = 1; tenth <= 10; ++tenth) {
      ++cases;
      const auto m = build_scaled_sparsity_mask(W, static_cast<double>(tenth) / 10.0);
      const std::size_t expect = (tenth * n + 9) / 10;
      std::size_t nz = 0;
      double sum = 0.0, min_kept = INFINITY, max_dropped = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (m.B[i] != 0.0) {
          ++nz;
          sum += std::abs(W[i]);
          min_kept = std::min(min_kept, std::abs(W[i]));
          if (m.B[i] != m.mu) ++bad;
        } else {
          max_dropped = std::max(max_dropped, std::abs(W[i]));
        }
      }
      const double mu_err = std::abs(m.mu - sum / static_cast<double>(nz));
      worst_mu = std::max(worst_mu, mu_err);
      if (nz != expect || nz != m.retained || mu_err > 1e-12 || min_kept < max_dropped) ++bad;
    }
  }
  return {bad == 0, std::to_string(cases) + " (matrix, rho) cases, failures " + std::to_string(bad) +
                        ", max mu err " + fmt("%.1e", worst_mu)};
}

// ---------------------------------------------------------------------------
// Shared synthetic corpus for criteria 5-7.

RunConfig trend_config() {
  RunConfig c;
  c.train.learning_rate = 0.002;
  c.train.round2_learning_rate = 0.001;
  c.train.units = {64};
  c.train.T = 25;
  c.train.pi_schedule = {0.25, 0.5, 0.75, 1.0};
  c.train.epochs_round1 = 60;
  c.train.epochs_per_pi = 15;
  c.train.epochs_final_pi = 20;
  c.train.eval_every = 5;
  c.corpus.train_count = 20;
  c.corpus.valid_count = 4;
  c.corpus.test_count = 24;
  return c;
}

struct Corpus {
  LloydMaxFit fit;
  std::vector<UtterancePair> train, valid, test;
};

const Corpus& corpus() {
  static const Corpus c = [] {
    const RunConfig cfg = trend_config();
    Corpus out;
    const auto train_raw = load_raw_pairs(cfg.corpus, Split::Train);
    out.fit = fit_corpus_codebook(train_raw, cfg.quantizer_iters);
    out.train = build_pairs(train_raw, out.fit.codebook);
    out.valid = build_pairs(load_raw_pairs(cfg.corpus, Split::Valid), out.fit.codebook);
    out.test = build_pairs(load_raw_pairs(cfg.corpus, Split::Test), out.fit.codebook);
    return out;
  }();
  return c;
}

InferenceOptions at_pi(const RunConfig& cfg, double pi) {
  InferenceOptions o;
  o.pi = pi;
  o.rho = cfg.train.rho;
  o.per_layer_scale = cfg.train.per_layer_scale;
  o.seed = cfg.infer_seed;
  return o;
}


Outcome degradation_trend() {
  const RunConfig cfg = trend_config();
  const Corpus& c = corpus();
  std::vector<Sequence> seqs;
  for (const auto& p : c.train) seqs.push_back(p.sequence());
  std::vector<Sequence> valid_x;
  for (const auto& p : c.valid) valid_x.push_back(p.sequence());
  const Evaluator eval = [&](const Network& net, double pi) {
    std::size_t i = 0;
    return mean_sdr_est(score_pairs(c.valid, [&](const UtterancePair&) {
      return predict_masks(net, valid_x[i++].x, at_pi(cfg, pi));
    }));
  };

  const Round1Result r1 = train_round1(cfg.train, seqs, eval);
  const Round2Result r2 = train_round2(cfg.train, r1.net, seqs, eval);
  const auto quarter = std::find_if(r2.stages.begin(), r2.stages.end(),
                                    [](const StageSnapshot& s) { return s.pi == 0.25; });
  if (quarter == r2.stages.end()) return {false, "no pi=0.25 stage snapshot"};
  const PackedNetwork packed =
      pack_network(r2.net, build_network_sparsity(r2.net, cfg.train.rho, cfg.train.per_layer_scale));

  auto score = [&](const MaskPredictor& p) { return score_pairs(c.test, p); };
  const auto s_r1 = score([&](const UtterancePair& u) { return predict_masks(r1.net, u.sequence().x, at_pi(cfg, 0.0)); });
  const auto s_q = score([&](const UtterancePair& u) { return predict_masks(quarter->net, u.sequence().x, at_pi(cfg, 0.25)); });
  const auto s_1 = score([&](const UtterancePair& u) { return packed_infer_sequence(packed, u.sequence().x); });
  double mix = 0.0;
  for (const auto& s : s_1) mix += s.sdr_mix;
  mix /= static_cast<double>(s_1.size());

  const double a = mean_sdr_est(s_r1), b = mean_sdr_est(s_q), d = mean_sdr_est(s_1);
  const bool pass = a >= b - 0.5 && b >= d - 0.5 && d >= mix + 2.0;
  return {pass, "mean SDR dB: round1 " + fmt("%.2f", a) + ", pi=0.25 " + fmt("%.2f", b) +
                    ", pi=1 (packed) " + fmt("%.2f", d) + ", mixture " + fmt("%.2f", mix)};
}

Outcome oracle_ibm() {
  const auto scores = score_oracle(corpus().test);
  std::size_t better = 0;
  double worst_gain = INFINITY;
  for (const auto& s : scores) {
    better += s.sdr_est > s.sdr_mix;
    worst_gain = std::min(worst_gain, s.sdr_est - s.sdr_mix);
  }
  return {better == scores.size(), std::to_string(better) + "/" + std::to_string(scores.size()) +
                                       " utterances improved, smallest gain " +
                                       fmt("%.2f", worst_gain) + " dB"};
}

Outcome stft_and_lloyd() {
  SeededRng rng(707);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    Waveform x = trial % 2 == 0 ? synth_utterance(rng, 1.0 + 0.3 * trial)
                                : Waveform{random_vec(rng, 12000 + 1000 * trial, 0.3)};
    const Waveform y = istft(stft(x));
    const std::size_t covered = (stft_frame_count(x.size()) - 1) * kHopSize + kWindowSize;
    double err = 0.0, ref = 0.0;
    for (std::size_t i = kWindowSize; i + kWindowSize < covered; ++i) {
      err = std::max(err, std::abs(x.samples[i] - y.samples[i]));
      ref = std::max(ref, std::abs(x.samples[i]));
    }
    worst = std::max(worst, err / ref);
  }

  std::vector<LloydMaxFit> fits{corpus().fit};
  for (int trial = 0; trial < 10; ++trial) {
    Vec s = random_vec(rng, 500 + 300 * trial, 1.0 + trial);
    for (auto& v : s) v = trial % 2 ? std::abs(v) : v * v;
    fits.push_back(fit_lloyd_max(s, kQadLevels, 200));
  }
  std::size_t increases = 0;
  for (const auto& f : fits) {
    for (std::size_t i = 1; i < f.mse_history.size(); ++i) increases += f.mse_history[i] > f.mse_history[i - 1];
  }
  return {worst < 1e-6 && increases == 0,
          "stft max rel err " + fmt("%.1e", worst) + ", mse increases " + std::to_string(increases) +
              " over " + std::to_string(fits.size()) + " codebooks"};
}

// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "bgru_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string base =
      "learning_rate = 0.003\nround2_learning_rate = 0.002\nunits = 8\nT = 20\n"
      "train_count = 3\nvalid_count = 1\ntest_count = 2\nduration_s = 0.5\n"
      "epochs_round1 = 3\nepochs_per_pi = 2\nepochs_final_pi = 2\npi_schedule = 0.5, 1.0\n"
      "eval_every = 1\nquantizer_iters = 20\nbench_frames = 10\nbench_repeats = 1\n";
  SeededRng rng(808);
  write_wav(root / "mix.wav", mix_at_0db(synth_utterance(rng, 0.6), synth_noise(rng, NoiseKind::Pink, 0.6)));

  for (const char* run : {"a", "b"}) {
    std::ofstream(root / (std::string(run) + ".cfg")) << base << "output_dir = " << run << "\n";
    const std::string cfg = "--config " + (root / (std::string(run) + ".cfg")).string();
    const fs::path out = root / run;
    for (const std::string& cmd :
         {"fit-quantizer " + cfg, "train-round1 " + cfg, "train-round2 " + cfg, "eval " + cfg,
          "infer " + cfg + " --in " + (root / "mix.wav").string() + " --out " + (out / "est.wav").string()}) {
      const std::string line = std::string(BGRU_CLI_PATH) + " " + cmd + " >/dev/null 2>&1";
      if (std::system(line.c_str()) != 0) return {false, "command failed: " + cmd};
    }
  }
  std::size_t compared = 0, differing = 0;
  for (const auto& e : fs::directory_iterator(root / "a")) {
    ++compared;
    const fs::path other = root / "b" / e.path().filename();
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) ++differing;
  }
  fs::remove_all(root);
  return {compared >= 10 && differing == 0, std::to_string(compared) + " artifacts compared, " +
                                                std::to_string(differing) + " differ"};
}

Outcome compression() {
  const fs::path root = fs::temp_directory_path() / "bgru_acceptance_size";
  fs::create_directories(root);
  SeededRng rng(909);
  ModelFile m;
  m.mode = ModelMode::Compressed;
  m.codebook = corpus().fit.codebook;
  m.net = Network::random(rng, 4 * kBins, std::vector<std::size_t>{1024}, kBins);
  save_model(root / "mode1.bgru", m);
  ModelFile p;
  p.mode = ModelMode::Packed;
  p.codebook = m.codebook;
  p.packed = pack_network(m.net, build_network_sparsity(m.net, 0.8));
  save_model(root / "mode2.bgru", p);
  const double s1 = static_cast<double>(fs::file_size(root / "mode1.bgru"));
  const double s2 = static_cast<double>(fs::file_size(root / "mode2.bgru"));
  fs::remove_all(root);
  return {s1 / s2 >= 10.0, "mode1 " + fmt("%.0f", s1) + " B, mode2 " + fmt("%.0f", s2) + " B, ratio " +
                               fmt("%.2f", s1 / s2)};
}

}  // namespace

int main() {
  const std::pair<const char*, Outcome (*)()> criteria[] = {
      {"gradient oracle", gradient_oracle},
      {"packed kernel exactness", packed_kernels},
      {"endpoint correctness", endpoints},
      {"mask construction", mask_construction},
      {"degradation trend", degradation_trend},
      {"oracle IBM chain", oracle_ibm},
      {"STFT round trip and Lloyd-Max monotonicity", stft_and_lloyd},
      {"artifact determinism", determinism},
      {"compression", compression},
  };
  int failures = 0;
  int index = 0;
  for (const auto& [name, run] : criteria) {
    ++index;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("%s %d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", index, name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", index - failures, index);
  return failures == 0 ? 0 : 1;
}
