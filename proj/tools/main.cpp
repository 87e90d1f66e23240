// Command line driver. Exit codes: 0 success, 1 invalid config or
// arguments, 2 runtime failure.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "twbsim/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "JSON config file")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("-s,--seed", args.seed, "override config seed");
  cmd->add_option("-o,--out", args.out, "override output directory");
  cmd->add_option("-t,--threads", args.threads, "worker threads, 0 = all cores");
}

twb::ExperimentConfig load(const CommonArgs& args) {
  twb::ExperimentConfig config = twb::load_config(args.config_path);
  if (args.seed) config.seed = *args.seed;
  if (args.out) config.output_dir = *args.out;
  if (args.threads) config.threads = *args.threads;
  twb::validate(config);
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"twin-beam protocol simulator"};
  app.require_subcommand(1);

  CommonArgs args;
  std::optional<std::size_t> key_bits;

  CLI::App* characterize =
      app.add_subcommand("characterize", "source and channel statistics");
  add_common(characterize, args);
  CLI::App* discriminate =
      app.add_subcommand("discriminate", "bit discrimination performance");
  add_common(discriminate, args);
  CLI::App* keysim = app.add_subcommand("keysim", "end-to-end key transmission");
  add_common(keysim, args);
  keysim->add_option("-b,--bits", key_bits, "override key length");
  CLI::App* attack = app.add_subcommand("attack", "intercept-resend attack sweep");
  add_common(attack, args);
  CLI::App* calibrate =
      app.add_subcommand("calibrate", "detector gain calibration on synthetic traces");
  add_common(calibrate, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const twb::ExperimentConfig config = load(args);
    if (characterize->parsed()) {
      twb::run_characterize(config);
    } else if (discriminate->parsed()) {
      twb::run_discriminate(config);
    } else if (keysim->parsed()) {
      twb::run_keysim(config, key_bits);
    } else if (attack->parsed()) {
      twb::run_attack(config);
    } else if (calibrate->parsed()) {
      twb::run_calibrate(config);
    }
  } catch (const twb::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
