#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace bgru {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitNumeric = 3;

struct CommandArgs {
  std::string command;  // train-round1, train-round2, infer, eval, bench, fit-quantizer
  std::filesystem::path config;
  std::optional<std::filesystem::path> model;
  std::optional<std::filesystem::path> in;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> reference;  // clean speech for infer
};

/// Runs one command and maps failures to exit codes: 1 configuration or
/// state, 2 file IO, 3 numeric or domain errors.
int run_command(const CommandArgs& args, std::ostream& out, std::ostream& err);

}  // namespace bgru
