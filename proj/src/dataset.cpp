#include "bgru/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "bgru/errors.hpp"

namespace bgru {

NoiseKind parse_noise_kind(const std::string& name) {
  if (name == "white") return NoiseKind::White;
  if (name == "pink") return NoiseKind::Pink;
  if (name == "pulsed") return NoiseKind::Pulsed;
  if (name == "chirp") return NoiseKind::Chirp;
  throw ConfigError("unknown noise kind '" + name + "' (expected white, pink, pulsed or chirp)");
}

std::string to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::White: return "white";
    case NoiseKind::Pink: return "pink";
    case NoiseKind::Pulsed: return "pulsed";
    case NoiseKind::Chirp: return "chirp";
  }
  return "unknown";
}

namespace {

std::size_t sample_count(double duration_s, int sample_rate) {
  if (!(duration_s > 0.0)) throw DomainError("duration must be positive");
  if (sample_rate <= 0) throw DomainError("sample rate must be positive");
  return static_cast<std::size_t>(std::llround(duration_s * sample_rate));
}

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kMaxHarmonicHz = 3800.0;

// Syllable envelope: sin^2-shaped bursts separated by short gaps.
Vec syllable_envelope(SeededRng& rng, std::size_t n, int sample_rate) {
  Vec env(n, 0.0);
  std::size_t pos = static_cast<std::size_t>(rng.uniform(0.02, 0.08) * sample_rate);
  while (pos < n) {
    const auto len = static_cast<std::size_t>(rng.uniform(0.12, 0.35) * sample_rate);
    const double peak = rng.uniform(0.6, 1.0);
    for (std::size_t i = 0; i < len && pos + i < n; ++i) {
      const double s = std::sin(std::numbers::pi * static_cast<double>(i) / static_cast<double>(len));
      env[pos + i] = peak * s * s;
    }
    pos += len + static_cast<std::size_t>(rng.uniform(0.03, 0.15) * sample_rate);
  }
  return env;
}

void normalize_peak(Vec& x, double peak) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  if (m > 0.0) {
    for (double& v : x) v *= peak / m;
  }
}

}  // namespace

Waveform synth_utterance(SeededRng& rng, double duration_s, int sample_rate) {
  const std::size_t n = sample_count(duration_s, sample_rate);
  const double fs = sample_rate;
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.assign(n, 0.0);

  const Vec env = syllable_envelope(rng, n, sample_rate);
  const double base = rng.uniform(100.0, 220.0);
  const double vibrato_rate = rng.uniform(2.0, 5.0);
  const double vibrato_phase = rng.uniform(0.0, kTwoPi);
  const double formant = rng.uniform(400.0, 1200.0);
  const double formant2 = rng.uniform(1200.0, 2800.0);
  const std::size_t max_harmonics = static_cast<std::size_t>(kMaxHarmonicHz / 80.0);
  Vec phase(max_harmonics + 1, 0.0);
  double drift = 0.0;
  const std::size_t drift_step = static_cast<std::size_t>(0.01 * fs);

  for (std::size_t i = 0; i < n; ++i) {
    if (i % drift_step == 0) drift = std::clamp(drift + 6.0 * rng.normal(), -60.0, 60.0);
    const double t = static_cast<double>(i) / fs;
    const double f0 = std::clamp(
        base * (1.0 + 0.12 * std::sin(kTwoPi * vibrato_rate * t + vibrato_phase)) + drift, 80.0,
        300.0);
    double s = 0.0;
    for (std::size_t h = 1; h <= max_harmonics; ++h) {
      const double fh = f0 * static_cast<double>(h);
      // Fade harmonics out before the 4 kHz band edge.
      const double fade = std::clamp((kMaxHarmonicHz - fh) / 300.0, 0.0, 1.0);
      if (fade <= 0.0) break;
      phase[h] += kTwoPi * fh / fs;
      if (phase[h] > kTwoPi) phase[h] -= kTwoPi;
      const double shape = 1.0 + 2.0 * std::exp(-std::pow((fh - formant) / 250.0, 2)) +
                           1.0 * std::exp(-std::pow((fh - formant2) / 400.0, 2));
      s += fade * shape / static_cast<double>(h) * std::sin(phase[h]);
    }
    w.samples[i] = env[i] * s;
  }
  normalize_peak(w.samples, 0.5);
  return w;
}

Waveform synth_noise(SeededRng& rng, NoiseKind kind, double duration_s, int sample_rate) {
  const std::size_t n = sample_count(duration_s, sample_rate);
  const double fs = sample_rate;
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.assign(n, 0.0);
  switch (kind) {
    case NoiseKind::White:
      for (auto& v : w.samples) v = rng.normal();
      break;
    case NoiseKind::Pink: {
      // Paul Kellet's refined pink filter.
      double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
      for (auto& v : w.samples) {
        const double white = rng.normal();
        b0 = 0.99886 * b0 + white * 0.0555179;
        b1 = 0.99332 * b1 + white * 0.0750759;
        b2 = 0.96900 * b2 + white * 0.1538520;
        b3 = 0.86650 * b3 + white * 0.3104856;
        b4 = 0.55000 * b4 + white * 0.5329522;
        b5 = -0.7616 * b5 - white * 0.0168980;
        v = b0 + b1 + b2 + b3 + b4 + b5 + b6 + white * 0.5362;
        b6 = white * 0.115926;
      }
      break;
    }
    case NoiseKind::Pulsed: {
      // White noise gated on/off at 50% duty with 5 ms ramps.
      const double period = rng.uniform(0.2, 0.4) * fs;
      const double offset = rng.uniform(0.0, period);
      const double ramp = 0.005 * fs;
      for (std::size_t i = 0; i < n; ++i) {
        const double pos = std::fmod(static_cast<double>(i) + offset, period);
        const double half = period / 2.0;
        double gate = 0.0;
        if (pos < half) gate = std::min({1.0, pos / ramp, (half - pos) / ramp});
        w.samples[i] = gate * rng.normal();
      }
      break;
    }
    case NoiseKind::Chirp: {
      // Repeating linear sweeps between two random band edges over a faint white floor.
      const double f_lo = rng.uniform(200.0, 600.0);
      const double f_hi = rng.uniform(4000.0, 7000.0);
      const double sweep = rng.uniform(0.3, 0.7);
      double phase = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = std::fmod(static_cast<double>(i) / fs, sweep) / sweep;
        const double f = f_lo + (f_hi - f_lo) * t;
        phase += kTwoPi * f / fs;
        if (phase > kTwoPi) phase -= kTwoPi;
        w.samples[i] = std::sin(phase) + 0.05 * rng.normal();
      }
      break;
    }
  }
  normalize_peak(w.samples, 0.5);
  return w;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "unknown";
}

std::string speaker_of(const std::string& entry) {
  const std::filesystem::path p(entry);
  auto it = p.begin();
  if (std::distance(p.begin(), p.end()) > 1) return it->string();
  const std::string stem = p.stem().string();
  return stem.substr(0, stem.find('_'));
}

namespace {

std::vector<std::string> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<std::string> entries;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    entries.push_back(line);
  }
  return entries;
}

std::vector<RawPair> load_directory_pairs(const CorpusSpec& spec, Split split) {
  const auto train = read_manifest(spec.train_manifest);
  const auto test = read_manifest(spec.test_manifest);
  const auto valid = spec.valid_manifest.empty() ? std::vector<std::string>{}
                                                 : read_manifest(spec.valid_manifest);
  std::set<std::string> train_speakers;
  for (const auto& e : train) train_speakers.insert(speaker_of(e));
  for (const auto* other : {&test, &valid}) {
    for (const auto& e : *other) {
      if (train_speakers.count(speaker_of(e))) {
        throw ConfigError("speaker '" + speaker_of(e) +
                          "' appears in the training manifest and a held-out manifest");
      }
    }
  }
  const auto& list = split == Split::Train ? train : split == Split::Valid ? valid : test;
  if (list.empty()) {
    if (split == Split::Valid) return {};
    throw ConfigError("empty " + to_string(split) + " manifest");
  }

  std::vector<std::filesystem::path> noise_files;
  const auto noise_dir = spec.root / "noise";
  if (!std::filesystem::is_directory(noise_dir)) throw IoError("missing directory " + noise_dir.string());
  for (const auto& entry : std::filesystem::directory_iterator(noise_dir)) {
    if (entry.path().extension() == ".wav") noise_files.push_back(entry.path());
  }
  std::sort(noise_files.begin(), noise_files.end());
  if (noise_files.empty()) throw IoError("no noise WAV files in " + noise_dir.string());

  std::vector<RawPair> pairs;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const Waveform clean = read_wav(spec.root / "speech" / list[i]);
    for (std::size_t k = 0; k < spec.noises_per_clean; ++k) {
      const auto& nf = noise_files[(i * spec.noises_per_clean + k) % noise_files.size()];
      const Waveform noise = read_wav(nf);
      if (noise.sample_rate != clean.sample_rate) {
        throw DomainError("sample rate mismatch between " + list[i] + " and " + nf.string());
      }
      MixParts mix = mix_at_0db_parts(clean, noise);
      RawPair rp;
      rp.name = list[i] + "+" + nf.filename().string();
      rp.split = split;
      rp.clean = clean;
      rp.noise = std::move(mix.scaled_noise);
      rp.mixture = std::move(mix.mixture);
      pairs.push_back(std::move(rp));
    }
  }
  return pairs;
}

std::vector<RawPair> load_synthetic_pairs(const CorpusSpec& spec, Split split) {
  if (spec.noise_kinds.empty()) throw ConfigError("no noise kinds configured");
  if (spec.noises_per_clean == 0) throw ConfigError("noises_per_clean must be positive");
  const std::size_t count = split == Split::Train   ? spec.train_count
                            : split == Split::Valid ? spec.valid_count
                                                    : spec.test_count;
  const std::string tag = to_string(split);
  const SeededRng root(spec.seed);
  std::vector<RawPair> pairs;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t clean_idx = i / spec.noises_per_clean;
    const NoiseKind kind = spec.noise_kinds[i % spec.noise_kinds.size()];
    SeededRng srng = root.split(tag + "-speech", clean_idx);
    SeededRng nrng = root.split(tag + "-noise", i);
    const Waveform clean = synth_utterance(srng, spec.duration_s);
    const Waveform noise = synth_noise(nrng, kind, spec.duration_s);
    MixParts mix = mix_at_0db_parts(clean, noise);
    RawPair rp;
    rp.name = tag + "_" + std::to_string(clean_idx) + "_" + to_string(kind) + "_" +
              std::to_string(i);
    rp.split = split;
    rp.clean = clean;
    rp.noise = std::move(mix.scaled_noise);
    rp.mixture = std::move(mix.mixture);
    pairs.push_back(std::move(rp));
  }
  if (pairs.empty() && split != Split::Valid) throw ConfigError("empty " + tag + " corpus");
  return pairs;
}

}  // namespace

std::vector<RawPair> load_raw_pairs(const CorpusSpec& spec, Split split) {
  return spec.mode == CorpusSpec::Mode::Synthetic ? load_synthetic_pairs(spec, split)
                                                  : load_directory_pairs(spec, split);
}

LloydMaxFit fit_corpus_codebook(std::span<const RawPair> train_pairs, int max_iters) {
  if (train_pairs.empty()) throw ConfigError("codebook fit needs at least one training pair");
  std::vector<double> samples;
  for (const auto& p : train_pairs) {
    if (p.split != Split::Train) {
      throw StateError("codebook fit received test-split pair '" + p.name + "'");
    }
    for (const auto& frame : stft(p.mixture).magnitudes()) {
      for (double m : frame) samples.push_back(compress_magnitude(m));
    }
  }
  return fit_lloyd_max(samples, kQadLevels, max_iters);
}

std::vector<Vec> mixture_features(const Spectrogram& spec, const QadCodebook& cb) {
  std::vector<Vec> x;
  x.reserve(spec.frames.size());
  for (const auto& mag : spec.magnitudes()) x.push_back(qad_encode(mag, cb).flatten());
  return x;
}

UtterancePair make_pair(const RawPair& raw, const QadCodebook& cb) {
  UtterancePair p;
  p.name = raw.name;
  p.clean = raw.clean;
  p.noise = raw.noise;
  p.mixture = raw.mixture;
  const auto mix_mag = stft(raw.mixture).magnitudes();
  const auto clean_mag = stft(raw.clean).magnitudes();
  const auto noise_mag = stft(raw.noise).magnitudes();
  for (std::size_t f = 0; f < mix_mag.size(); ++f) {
    p.features.push_back(qad_encode(mix_mag[f], cb));
    p.targets.push_back(compute_ibm(clean_mag[f], noise_mag[f]));
  }
  return p;
}

std::vector<UtterancePair> build_pairs(std::span<const RawPair> raws, const QadCodebook& cb) {
  if (!cb.valid()) throw StateError("build_pairs: codebook is not fitted");
  std::vector<UtterancePair> out;
  out.reserve(raws.size());
  for (const auto& r : raws) out.push_back(make_pair(r, cb));
  return out;
}

std::vector<UtterancePair> build_pairs(const CorpusSpec& spec, Split split, const QadCodebook& cb) {
  const auto raws = load_raw_pairs(spec, split);
  return build_pairs(raws, cb);
}

Sequence UtterancePair::sequence() const {
  Sequence s;
  s.x.reserve(features.size());
  s.target.reserve(targets.size());
  for (const auto& f : features) s.x.push_back(f.flatten());
  for (const auto& t : targets) s.target.push_back(ibm_to_bipolar(t));
  return s;
}

}  // namespace bgru
