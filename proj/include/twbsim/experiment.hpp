#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "twbsim/adversary.hpp"
#include "twbsim/channel.hpp"

namespace twb {

// Config or CLI input that fails validation; maps to exit code 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AttackConfig {
  std::vector<double> fractions{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::size_t n_realizations = 5000;
  std::size_t batch_size = 40000;
  ResendMean mean_mode = ResendMean::Exact;
  double k = 2.0;
  // Reference band: sigma of R from an unattacked bootstrap at this batch
  // size (0 picks n_shots / 4).
  std::size_t ref_batch_size = 0;
  std::size_t ref_batches = 2000;
};

struct KeyConfig {
  std::size_t length = 400;
  std::size_t n_keys = 20;
  std::size_t batch_size = 20000;
  // Draw decode errors from the classifier's confusion rates instead of
  // simulating a fresh batch per bit.
  bool rate_driven = false;
};

struct CalibrateConfig {
  double gain = 0.7;
  double noise_sigma_frac = 0.2;  // sigma = noise_sigma_frac * gain
  std::size_t n_shots = 100000;
  SourceParams counts{3.44, 350.0};
};

struct CharacterizeConfig {
  double symmetric_eta = 0.085;
  std::vector<double> symmetric_means{30.0, 50.0, 80.0, 105.0, 130.0};  // incident
  std::size_t n_disjoint = 4;
};

struct ExperimentConfig {
  ChannelParams channel;
  std::size_t n_shots = 100000;
  std::vector<std::size_t> batch_sizes{20000, 40000};
  std::size_t n_batches = 5000;
  std::optional<double> threshold_mean;  // overrides, otherwise midpoints
  std::optional<double> threshold_R;
  AttackConfig attack;
  KeyConfig key;
  CalibrateConfig calibrate;
  CharacterizeConfig characterize;
  std::vector<RTarget> measured_R;  // targets for the mode-number fit report
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "out";
  int threads = 0;  // 0 -> all hardware threads

  std::string config_hash;  // filled on load
};

ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
void validate(const ExperimentConfig& config);

// FNV-1a over the canonical (sorted-key) JSON dump.
std::string config_hash_hex(const nlohmann::json& j);

// Each runner writes its artifacts under output_dir/<name>/ and returns the
// summary it also wrote to summary.json there. Every output embeds the
// config hash and seed.
nlohmann::json run_characterize(const ExperimentConfig& config);
nlohmann::json run_discriminate(const ExperimentConfig& config);
nlohmann::json run_keysim(const ExperimentConfig& config,
                          std::optional<std::size_t> key_length = {});
nlohmann::json run_attack(const ExperimentConfig& config);
nlohmann::json run_calibrate(const ExperimentConfig& config);

}  // namespace twb
