#include "bgru/run_config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "bgru/errors.hpp"

namespace bgru {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

template <typename T>
Setter uint_field(T TrainConfig::*field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) {
    c.train.*field = static_cast<T>(parse_uint(k, v));
  };
}

Setter double_field(double TrainConfig::*field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) {
    c.train.*field = parse_double(k, v);
  };
}

Setter bool_field(bool TrainConfig::*field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) {
    c.train.*field = parse_bool(k, v);
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"T", uint_field(&TrainConfig::T)},
      {"units",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.units.clear();
         for (const auto& item : split_list(v)) c.train.units.push_back(parse_uint(k, item));
       }},
      {"rho", double_field(&TrainConfig::rho)},
      {"per_layer_scale", bool_field(&TrainConfig::per_layer_scale)},
      {"round1_binary_states", bool_field(&TrainConfig::round1_binary_states)},
      {"adam_beta1", double_field(&TrainConfig::adam_beta1)},
      {"adam_beta2", double_field(&TrainConfig::adam_beta2)},
      {"adam_eps", double_field(&TrainConfig::adam_eps)},
      {"learning_rate", double_field(&TrainConfig::learning_rate)},
      {"round2_learning_rate", double_field(&TrainConfig::round2_learning_rate)},
      {"lr_damping", double_field(&TrainConfig::lr_damping)},
      {"lr_damping_from_pi", double_field(&TrainConfig::lr_damping_from_pi)},
      {"minibatch", uint_field(&TrainConfig::minibatch)},
      {"dropout_input", double_field(&TrainConfig::dropout_input)},
      {"dropout_hidden", double_field(&TrainConfig::dropout_hidden)},
      {"grad_clip", double_field(&TrainConfig::grad_clip)},
      {"pi_schedule",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.pi_schedule.clear();
         for (const auto& item : split_list(v)) c.train.pi_schedule.push_back(parse_double(k, item));
       }},
      {"epochs_round1", uint_field(&TrainConfig::epochs_round1)},
      {"epochs_per_pi", uint_field(&TrainConfig::epochs_per_pi)},
      {"epochs_final_pi", uint_field(&TrainConfig::epochs_final_pi)},
      {"eval_every", uint_field(&TrainConfig::eval_every)},
      {"early_stop_patience", uint_field(&TrainConfig::early_stop_patience)},
      {"seed", uint_field(&TrainConfig::seed)},

      {"corpus",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "synthetic") {
           c.corpus.mode = CorpusSpec::Mode::Synthetic;
         } else if (v == "directory") {
           c.corpus.mode = CorpusSpec::Mode::Directory;
         } else {
           throw ConfigError(k + ": expected synthetic or directory, got '" + v + "'");
         }
       }},
      {"train_count", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.corpus.train_count = parse_uint(k, v);
       }},
      {"valid_count", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.corpus.valid_count = parse_uint(k, v);
       }},
      {"test_count", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.corpus.test_count = parse_uint(k, v);
       }},
      {"noises_per_clean", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.corpus.noises_per_clean = parse_uint(k, v);
       }},
      {"noise_kinds",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.corpus.noise_kinds.clear();
         for (const auto& item : split_list(v)) c.corpus.noise_kinds.push_back(parse_noise_kind(item));
       }},
      {"duration_s", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.corpus.duration_s = parse_double(k, v);
       }},
      {"data_seed", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.corpus.seed = parse_uint(k, v);
       }},
      {"data_root", [](RunConfig& c, const std::string&, const std::string& v) { c.corpus.root = v; }},
      {"train_manifest",
       [](RunConfig& c, const std::string&, const std::string& v) { c.corpus.train_manifest = v; }},
      {"valid_manifest",
       [](RunConfig& c, const std::string&, const std::string& v) { c.corpus.valid_manifest = v; }},
      {"test_manifest",
       [](RunConfig& c, const std::string&, const std::string& v) { c.corpus.test_manifest = v; }},
      {"quantizer_iters", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.quantizer_iters = static_cast<int>(parse_uint(k, v));
       }},

      {"output_dir", [](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; }},
      {"infer_pi", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.infer_pi = parse_double(k, v);
       }},
      {"infer_seed", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.infer_seed = parse_uint(k, v);
       }},
      {"eval_oracle", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.eval_oracle = parse_bool(k, v);
       }},
      {"bench_frames", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.bench_frames = parse_uint(k, v);
       }},
      {"bench_repeats", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.bench_repeats = parse_uint(k, v);
       }},
  };
  return table;
}

const char* const kRequired[] = {"learning_rate"};

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return base / p;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second) throw ConfigError("duplicate key '" + key + "'");
  }
  return kv;
}

RunConfig run_config_from_text(const std::string& text, const std::filesystem::path& base_dir,
                               const char* seed_override) {
  const auto kv = parse_key_values(text);
  for (const char* key : kRequired) {
    if (!kv.count(key)) throw ConfigError(std::string("missing required key '") + key + "'");
  }
  RunConfig cfg;
  const auto& table = setters();
  for (const auto& [key, value] : kv) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown key '" + key + "'");
    it->second(cfg, key, value);
  }
  if (seed_override != nullptr && *seed_override != '\0') {
    cfg.train.seed = parse_uint("BGRU_SEED", seed_override);
  }
  cfg.train.validate();
  if (!(cfg.infer_pi >= 0.0 && cfg.infer_pi <= 1.0)) throw ConfigError("infer_pi must lie in [0, 1]");
  if (cfg.quantizer_iters <= 0) throw ConfigError("quantizer_iters must be positive");
  if (cfg.bench_frames == 0 || cfg.bench_repeats == 0) {
    throw ConfigError("bench_frames and bench_repeats must be positive");
  }
  if (!(cfg.corpus.duration_s > 0.0)) throw ConfigError("duration_s must be positive");
  if (cfg.corpus.noises_per_clean == 0) throw ConfigError("noises_per_clean must be positive");
  if (cfg.corpus.noise_kinds.empty()) throw ConfigError("noise_kinds must not be empty");
  if (cfg.corpus.mode == CorpusSpec::Mode::Directory) {
    if (cfg.corpus.root.empty() || cfg.corpus.train_manifest.empty() ||
        cfg.corpus.test_manifest.empty()) {
      throw ConfigError("directory corpus needs data_root, train_manifest and test_manifest");
    }
  }
  cfg.corpus.root = resolve(base_dir, cfg.corpus.root);
  cfg.corpus.train_manifest = resolve(base_dir, cfg.corpus.train_manifest);
  cfg.corpus.valid_manifest = resolve(base_dir, cfg.corpus.valid_manifest);
  cfg.corpus.test_manifest = resolve(base_dir, cfg.corpus.test_manifest);
  cfg.output_dir = resolve(base_dir, cfg.output_dir);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_text(ss.str(), path.parent_path().empty() ? "." : path.parent_path(),
                              std::getenv("BGRU_SEED"));
}

}  // namespace bgru
