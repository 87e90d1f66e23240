#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include <doctest.h>

#include "twbsim/calibration.hpp"
#include "twbsim/sources.hpp"

using namespace twb;

namespace {

std::vector<PhotonCount> thermal_counts(std::size_t n, double mean, double modes,
                                        std::uint64_t seed) {
  Rng rng = substream(seed, tags::calibration, 1);
  std::vector<PhotonCount> out(n);
  for (auto& m : out) m = sample_multimode_thermal({mean, modes}, rng);
  return out;
}

double fano(const std::vector<PhotonCount>& xs) {
  double s = 0.0, s2 = 0.0;
  for (auto x : xs) {
    s += x;
    s2 += static_cast<double>(x) * x;
  }
  const double n = static_cast<double>(xs.size());
  const double mean = s / n;
  return ((s2 - s * s / n) / (n - 1.0)) / mean;
}

}  // namespace

TEST_CASE("noise-free synthesis is exact and inverts exactly") {
  const auto counts = thermal_counts(20000, 3.44, 350.0, 61);
  Rng rng = substream(61, tags::calibration, 2);
  const PulseTrace trace = synth_pulse_heights(counts, 0.7, 0.0, rng);
  REQUIRE(trace.amplitudes.size() == counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i)
    CHECK(trace.amplitudes[i] == doctest::Approx(0.7 * counts[i]).epsilon(1e-12));
  const auto back = volts_to_photons(trace, 0.7);
  for (std::size_t i = 0; i < counts.size(); ++i) CHECK(back[i] == counts[i]);
}

TEST_CASE("gain recovery from a noise-free spectrum") {
  const auto counts = thermal_counts(50000, 3.44, 350.0, 62);
  Rng rng = substream(62, tags::calibration, 2);
  const PulseTrace trace = synth_pulse_heights(counts, 0.7, 0.0, rng);
  const CalibrationResult result = estimate_gain(trace);
  CHECK(result.gain == doctest::Approx(0.7).epsilon(0.02));
  CHECK(result.n_peaks >= 5);
}

TEST_CASE("unit gain spectrum resolves at least eight peaks") {
  const auto counts = thermal_counts(100000, 3.44, 350.0, 66);
  Rng rng = substream(66, tags::calibration, 2);
  const PulseTrace trace = synth_pulse_heights(counts, 1.0, 0.15, rng);
  const CalibrationResult result = estimate_gain(trace);
  CHECK(result.n_peaks >= 8);
  CHECK(result.gain == doctest::Approx(1.0).epsilon(0.01));
  for (std::size_t i = 1; i < result.peak_positions.size(); ++i)
    CHECK(result.peak_positions[i] > result.peak_positions[i - 1]);
}

TEST_CASE("gain recovery under realistic smearing") {
  const auto counts = thermal_counts(100000, 3.44, 350.0, 63);
  Rng rng = substream(63, tags::calibration, 2);
  const double gain = 0.7;
  const PulseTrace trace = synth_pulse_heights(counts, gain, 0.25 * gain, rng);
  const CalibrationResult result = estimate_gain(trace);
  CHECK(result.gain == doctest::Approx(gain).epsilon(0.02));

  // Round trip through the estimated gain preserves the photon statistics.
  const auto back = volts_to_photons(trace, result.gain);
  double mean_in = 0.0, mean_out = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    mean_in += counts[i];
    mean_out += back[i];
  }
  CHECK(mean_out / mean_in == doctest::Approx(1.0).epsilon(0.01));
  CHECK(fano(back) == doctest::Approx(fano(counts)).epsilon(0.05));
}

TEST_CASE("gain estimate is scale equivariant") {
  const auto counts = thermal_counts(50000, 3.44, 350.0, 64);
  Rng rng = substream(64, tags::calibration, 2);
  PulseTrace trace = synth_pulse_heights(counts, 0.7, 0.07, rng);
  const double base = estimate_gain(trace).gain;
  PulseTrace scaled = trace;
  for (double& a : scaled.amplitudes) a *= 2.5;
  CHECK(estimate_gain(scaled).gain == doctest::Approx(2.5 * base).epsilon(1e-9));
}

TEST_CASE("degenerate traces are rejected") {
  SUBCASE("empty") {
    CHECK_THROWS_AS(estimate_gain(PulseTrace{{}, {}}), CalibrationError);
  }
  SUBCASE("constant amplitude") {
    const std::vector<double> flat(5000, 1.25);
    CHECK_THROWS_AS(estimate_gain(PulseTrace{flat, {}}), CalibrationError);
  }
  SUBCASE("all zero") {
    const std::vector<double> zero(5000, 0.0);
    CHECK_THROWS_AS(estimate_gain(PulseTrace{zero, {}}), CalibrationError);
  }
  SUBCASE("pure noise has no periodic structure") {
    Rng rng = substream(65, tags::calibration, 2);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> noise(20000);
    for (double& a : noise) a = g(rng);
    CHECK_THROWS_AS(estimate_gain(PulseTrace{noise, {}}), CalibrationError);
  }
}

TEST_CASE("conversion clamps negative excursions to zero") {
  const PulseTrace trace{{-0.4, 0.05, 0.68, 1.43}, {}};
  const auto counts = volts_to_photons(trace, 0.7);
  REQUIRE(counts.size() == 4);
  CHECK(counts[0] == 0);
  CHECK(counts[1] == 0);
  CHECK(counts[2] == 1);
  CHECK(counts[3] == 2);
  CHECK_THROWS_AS(volts_to_photons(trace, 0.0), std::invalid_argument);
}

TEST_CASE("histogram construction and CSV output") {
  const std::vector<double> values{0.0, 0.1, 0.2, 1.0, 1.05};
  const Histogram hist = make_histogram(values, 0.5);
  std::size_t total = 0;
  for (auto c : hist.counts) total += c;
  CHECK(total == values.size());

  const auto dir = std::filesystem::temp_directory_path() / "twbsim_test_cal";
  std::filesystem::create_directories(dir);
  save_histogram_csv(hist, dir / "hist.csv", std::vector<std::string>{"config_hash=9 seed=9"});
  std::ifstream in(dir / "hist.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "# config_hash=9 seed=9");
  std::getline(in, line);
  CHECK(line == "bin_center,count");
  std::filesystem::remove_all(dir);
}

TEST_CASE("trace CSV round trip") {
  const PulseTrace trace{{0.12, 0.74, 1.39, 0.0}, 0.7};
  const auto dir = std::filesystem::temp_directory_path() / "twbsim_test_trace";
  std::filesystem::create_directories(dir);
  const auto path = dir / "trace.csv";
  save_trace_csv(trace, path, std::vector<std::string>{"config_hash=a seed=b"});
  const PulseTrace back = load_trace_csv(path);
  REQUIRE(back.amplitudes.size() == trace.amplitudes.size());
  for (std::size_t i = 0; i < trace.amplitudes.size(); ++i)
    CHECK(back.amplitudes[i] == doctest::Approx(trace.amplitudes[i]).epsilon(1e-9));
  std::filesystem::remove_all(dir);
}
