#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "twbsim/sources.hpp"

namespace twb {

// Detection channel: idler arm sees efficiency eta, signal arm eta*t, and a
// thermal noise signal (bit 0 or bit 1) is superimposed on the detected
// signal counts. `twb` is the incident per-arm marginal; noise parameters
// are in detected photons.
struct ChannelParams {
  double eta = 1.0;
  double t = 1.0;
  SourceParams twb;
  SourceParams noise0;
  SourceParams noise1;

  const SourceParams& noise(int bit) const { return bit == 1 ? noise1 : noise0; }
};

struct ShotRecord {
  PhotonCount m_idler = 0;
  PhotonCount m_signal = 0;
};

struct Dataset {
  std::vector<ShotRecord> shots;
  int bit = 0;
  ChannelParams params;
  std::uint64_t seed = 0;
};

void validate(const ChannelParams& params);

// Binomial thinning with the given efficiency.
PhotonCount detect(PhotonCount n, double efficiency, Rng& rng);

// Per shot: incident pair (n, n); idler and signal thinned independently
// given n; one noise draw added to the signal count.
Dataset generate_dataset(const ChannelParams& params, int bit, std::size_t n_shots,
                         std::uint64_t seed, int threads = 1);

// Closed-form noise reduction factor for this channel.
//
//   R = 1 - 2*eta*t*<m>/D + (1-t)^2 <m>^2/(mu D) + <m_N>^2/(mu_N D),
//   D = (1+t)<m> + <m_N>
//
// <m> (`mean_idler`) is the detected idler-arm mean; the detected signal
// mean is then t*<m> + <m_N>. bit < 0 means no superimposed noise.
// The Monte Carlo pipeline reproduces this expression exactly; the
// term-by-term derivation lives in docs/model.md.
double predict_R(double mean_idler, const ChannelParams& params, int bit);

// Largest noise mean for which R stays below 1 (sub-shot-noise). Empty when
// no noise level achieves it, i.e. 2*eta*t*mu < (1-t)^2 <m>. Uses the modes
// of the bit-0 noise source unless noise_modes is given.
std::optional<double> max_noise_for_nonclassicality(double mean_idler, const ChannelParams& params,
                                                    std::optional<double> noise_modes = {});

// F(m) = eta F(n) + 1 - eta under binomial thinning.
double fano_detected(double fano_incident, double eta);

double detected_idler_mean(const ChannelParams& params);

// One measured R value at a given noise setting, for mode-number calibration.
struct RTarget {
  SourceParams noise;  // mean 0 for the noiseless measurement
  double R = 0.0;
};

// Least squares in 1/mu (predict_R is affine in 1/mu with everything else
// fixed). Returns +infinity when the best fit is the Poissonian limit.
double fit_twb_modes(double mean_idler, const ChannelParams& params,
                     std::span<const RTarget> targets);

// CSV with header shot,m_idler,m_signal plus a JSON sidecar (params, bit,
// seed) next to it. `meta` lines are prepended to the CSV as # comments.
void save_dataset_csv(const Dataset& dataset, const std::filesystem::path& csv_path,
                      std::span<const std::string> meta = {});
Dataset load_dataset_csv(const std::filesystem::path& csv_path);

}  // namespace twb
