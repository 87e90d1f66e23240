#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "twbsim/sources.hpp"

namespace twb {

// Analog pulse heights, one per shot, in volts.
struct PulseTrace {
  std::vector<double> amplitudes;
  std::optional<double> true_gain;  // set for synthetic traces
};

struct CalibrationResult {
  double gain = 0.0;  // volts per photon
  std::vector<double> peak_positions;
  int n_peaks = 0;
};

// Raised when a trace does not yield a usable pulse-height spectrum.
struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// amplitude_i = gain * counts_i + Gaussian(0, noise_sigma)
PulseTrace synth_pulse_heights(std::span<const PhotonCount> counts, double gain,
                               double noise_sigma, Rng& rng);

// Pulse-height spectrum calibration. The spectrum is histogrammed (bin width
// gain/20, pre-estimated from the histogram autocorrelation when bin_width
// is 0), peaks are windowed local maxima above min_prominence of the tallest
// peak, refined to sub-bin accuracy by a windowed centroid; the gain is the
// mean adjacent spacing. Fails when the autocorrelation shows no significant
// period, fewer than 2 peaks survive, or the spacings are inconsistent
// (CV > 0.25) -- the latter two also reject structureless (flat or
// single-bump) traces.
CalibrationResult estimate_gain(const PulseTrace& trace, double bin_width = 0.0,
                                double min_prominence = 0.05);

// Nearest-integer photon counts, clamped at 0.
std::vector<PhotonCount> volts_to_photons(const PulseTrace& trace, double gain);

struct Histogram {
  double lo = 0.0;
  double bin_width = 0.0;
  std::vector<std::size_t> counts;

  double center(std::size_t i) const { return lo + (static_cast<double>(i) + 0.5) * bin_width; }
};

Histogram make_histogram(std::span<const double> values, double bin_width);

// CSV with header bin_center,count.
void save_histogram_csv(const Histogram& hist, const std::filesystem::path& path,
                        std::span<const std::string> meta = {});

// One amplitude per line.
void save_trace_csv(const PulseTrace& trace, const std::filesystem::path& path,
                    std::span<const std::string> meta = {});
PulseTrace load_trace_csv(const std::filesystem::path& path);

}  // namespace twb
