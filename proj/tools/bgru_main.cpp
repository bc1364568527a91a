#include <iostream>

#include "CLI11.hpp"
#include "bgru/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Bitwise GRU source separation"};
  app.require_subcommand(1);
  bgru::CommandArgs args;
  std::string model, in, out, reference;

  const std::pair<const char*, const char*> commands[] = {
      {"train-round1", "train with tanh-compressed weights"},
      {"train-round2", "incrementally binarize a round-1 model"},
      {"infer", "denoise one WAV file"},
      {"eval", "score the test split"},
      {"bench", "time packed against float inference"},
      {"fit-quantizer", "fit the 4-bit magnitude codebook"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", args.config, "key=value run configuration")->required();
    sub->add_option("--model", model, "model file");
    sub->add_option("--in", in, "input WAV");
    sub->add_option("--out", out, "output path");
    sub->add_option("--reference", reference, "clean reference WAV (infer)");
    sub->callback([&args, sub] { args.command = sub->get_name(); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : bgru::kExitConfig;
  }
  if (!model.empty()) args.model = model;
  if (!in.empty()) args.in = in;
  if (!out.empty()) args.out = out;
  if (!reference.empty()) args.reference = reference;
  return bgru::run_command(args, std::cout, std::cerr);
}
