#include "alime/cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>

int main(int argc, char** argv) {
  using alime::cli::Command;
  CLI::App app{"Local explanations of tabular black-box classifiers (LIME, ALIME, tree-ALIME)"};
  app.require_subcommand(1);

  alime::cli::Invocation inv;
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  std::string method;
  app.add_option("--config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  auto* out_opt = app.add_option("--out", out, "Output directory (overrides output_dir)");
  auto* seed_opt = app.add_option("--seed", seed, "Overrides the seed used by the command");
  auto* method_opt = app.add_option("--method", method, "Explainer method")
                         ->check(CLI::IsMember({"lime", "alime", "tree-alime"}));

  const std::map<std::string, Command> commands = {
      {"ingest", Command::ingest},     {"train-blackbox", Command::train_blackbox},
      {"train-ae", Command::train_ae}, {"explain", Command::explain},
      {"fidelity", Command::fidelity}, {"stability", Command::stability}};
  const std::map<std::string, std::string> help = {
      {"ingest", "Encode, scale and split the dataset"},
      {"train-blackbox", "Train the black-box classifier (optionally with grid search)"},
      {"train-ae", "Train the denoising autoencoder"},
      {"explain", "Explain selected test instances"},
      {"fidelity", "Local fidelity sweep over n"},
      {"stability", "Stability sweep over n for one test instance"}};
  for (const auto& [name, cmd] : commands) {
    auto* sub = app.add_subcommand(name, help.at(name));
    if (cmd == Command::explain) {
      sub->add_option("--instance", inv.instances, "Test-split position(s) to explain");
    }
  }
  app.fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : alime::cli::exit_input;
  }
  inv.command = commands.at(app.get_subcommands().front()->get_name());
  inv.config_path = config;
  if (*out_opt) inv.out = out;
  if (*seed_opt) inv.seed = seed;
  if (*method_opt) inv.method = method;
  return alime::cli::run(inv, std::cout, std::cerr);
}
