#include <cmath>
#include <filesystem>
#include <fstream>

#include "bgru/dataset.hpp"
#include "bgru/errors.hpp"
#include "doctest.h"

using namespace bgru;

namespace {

// Mean power per bin over all frames.
Vec mean_power(const Waveform& w) {
  const auto mags = stft(w).magnitudes();
  Vec p(kBins, 0.0);
  for (const auto& f : mags) {
    for (std::size_t k = 0; k < kBins; ++k) p[k] += f[k] * f[k];
  }
  for (auto& v : p) v /= static_cast<double>(mags.size());
  return p;
}

double bin_hz(std::size_t k) { return static_cast<double>(k) * kDefaultSampleRate / kWindowSize; }

}  // namespace

TEST_CASE("synthetic speech is deterministic and band limited") {
  SeededRng a(9), b(9);
  const Waveform x = synth_utterance(a, 1.0), y = synth_utterance(b, 1.0);
  CHECK(x.size() == 16000);
  CHECK(x.samples == y.samples);
  const Vec p = mean_power(x);
  double low = 0.0, total = 0.0;
  for (std::size_t k = 0; k < kBins; ++k) {
    total += p[k];
    if (bin_hz(k) < 4000.0) low += p[k];
  }
  CHECK(low / total >= 0.9);
}

TEST_CASE("white noise is flat across octave bands") {
  SeededRng rng(10);
  const Vec p = mean_power(synth_noise(rng, NoiseKind::White, 4.0));
  std::vector<double> bands;
  for (double lo = 125.0; lo < 8000.0; lo *= 2.0) {
    double s = 0.0;
    int n = 0;
    for (std::size_t k = 1; k + 1 < kBins; ++k) {
      if (bin_hz(k) >= lo && bin_hz(k) < 2.0 * lo) {
        s += p[k];
        ++n;
      }
    }
    bands.push_back(s / n);
  }
  const double ref = bands.back();
  for (double b : bands) CHECK(std::abs(10.0 * std::log10(b / ref)) <= 3.0);
}

TEST_CASE("pulsed noise is on about half the time") {
  SeededRng rng(11);
  const Waveform w = synth_noise(rng, NoiseKind::Pulsed, 4.0);
  const std::size_t block = 80;
  double peak = 0.0;
  std::vector<double> e;
  for (std::size_t i = 0; i + block <= w.size(); i += block) {
    e.push_back(rms(std::span(w.samples).subspan(i, block)));
    peak = std::max(peak, e.back());
  }
  double on = 0.0;
  for (double v : e) on += v > 0.3 * peak;
  CHECK(on / e.size() == doctest::Approx(0.5).epsilon(0.2));
}

TEST_CASE("every noise kind has a name and nonzero energy") {
  for (const char* name : {"white", "pink", "pulsed", "chirp"}) {
    SeededRng rng(12);
    const NoiseKind k = parse_noise_kind(name);
    CHECK(to_string(k) == name);
    CHECK(rms(synth_noise(rng, k, 0.5).samples) > 0.0);
  }
  CHECK_THROWS_AS(parse_noise_kind("brown"), ConfigError);
}

TEST_CASE("synthetic corpus pairs") {
  CorpusSpec spec;
  spec.train_count = 2;
  spec.test_count = 1;
  spec.duration_s = 1.0;
  const auto train = load_raw_pairs(spec, Split::Train);
  CHECK(train.size() == 2);
  const auto again = load_raw_pairs(spec, Split::Train);
  CHECK(train[1].mixture.samples == again[1].mixture.samples);
  const auto test = load_raw_pairs(spec, Split::Test);
  CHECK(test[0].name.rfind("test_", 0) == 0);
  CHECK(test[0].clean.samples != train[0].clean.samples);

  const auto fit = fit_corpus_codebook(train, 50);
  CHECK(fit.codebook.valid());
  CHECK_THROWS_AS(fit_corpus_codebook(test, 50), StateError);

  const auto pair = make_pair(test[0], fit.codebook);
  REQUIRE(!pair.features.empty());
  CHECK(pair.features.size() == pair.targets.size());
  const Sequence seq = pair.sequence();
  CHECK(seq.x[0].size() == 2052);
  double ones = 0.0, n = 0.0;
  for (const auto& t : seq.target) {
    for (double v : t) {
      CHECK(std::abs(v) == 1.0);
      ones += v > 0;
      ++n;
    }
  }
  CHECK(ones > 0.0);
  CHECK(ones < n);
}

TEST_CASE("speaker_of") {
  CHECK(speaker_of("spk1/a.wav") == "spk1");
  CHECK(speaker_of("spk2_utt3.wav") == "spk2");
  CHECK(speaker_of("solo.wav") == "solo");
}

TEST_CASE("directory corpus rejects speakers shared across splits") {
  const auto root = std::filesystem::temp_directory_path() / "bgru_test_corpus";
  std::filesystem::remove_all(root);
  std::filesystem::create_directories(root / "speech");
  std::filesystem::create_directories(root / "noise");
  SeededRng rng(13);
  write_wav(root / "speech" / "alice_1.wav", synth_utterance(rng, 0.5));
  write_wav(root / "speech" / "bob_1.wav", synth_utterance(rng, 0.5));
  write_wav(root / "noise" / "n.wav", synth_noise(rng, NoiseKind::Pink, 0.5));
  std::ofstream(root / "train.txt") << "# train\nalice_1.wav\n";
  std::ofstream(root / "test.txt") << "bob_1.wav\n";
  std::ofstream(root / "bad.txt") << "alice_1.wav\n";

  CorpusSpec spec;
  spec.mode = CorpusSpec::Mode::Directory;
  spec.root = root;
  spec.train_manifest = root / "train.txt";
  spec.test_manifest = root / "test.txt";
  CHECK(load_raw_pairs(spec, Split::Train).size() == 1);
  CHECK(load_raw_pairs(spec, Split::Test).size() == 1);
  CHECK(load_raw_pairs(spec, Split::Valid).empty());
  spec.test_manifest = root / "bad.txt";
  CHECK_THROWS_AS(load_raw_pairs(spec, Split::Test), ConfigError);
  std::filesystem::remove_all(root);
}
