#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "bgru/dataset.hpp"
#include "bgru/trainer.hpp"

namespace bgru {

/// Everything a command needs: training hyperparameters, corpus, output
/// locations and inference settings. Parsed from a key=value file.
struct RunConfig {
  TrainConfig train;
  CorpusSpec corpus;
  int quantizer_iters = 100;
  std::filesystem::path output_dir = ".";
  double infer_pi = 1.0;
  std::uint64_t infer_seed = 1;
  bool eval_oracle = false;
  std::size_t bench_frames = 200;
  std::size_t bench_repeats = 3;
};

/// Raw key=value pairs. '#' starts a comment; blank lines are ignored.
/// Throws ConfigError on malformed lines or duplicate keys.
std::map<std::string, std::string> parse_key_values(const std::string& text);

/// Builds a RunConfig. Unknown keys and a missing `learning_rate` are
/// ConfigErrors. Relative paths resolve against `base_dir`.
/// `seed_override` (from BGRU_SEED) replaces the training seed when set.
RunConfig run_config_from_text(const std::string& text, const std::filesystem::path& base_dir = ".",
                               const char* seed_override = nullptr);

/// Reads the file and applies the BGRU_SEED environment variable.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace bgru
