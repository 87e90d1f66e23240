#include "twbsim/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace twb {

namespace {

constexpr std::size_t kFineBins = 2048;
constexpr double kAcfSignificance = 0.15;
constexpr double kAcfRise = 0.05;
constexpr double kSpacingCvLimit = 0.25;

// Period of the spectrum comb from the histogram autocorrelation: the first
// significant local maximum at lag >= 4 fine bins.
double acf_period(std::span<const double> values) {
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double span = *hi_it - *lo_it;
  if (!(span > 0.0)) throw CalibrationError("trace has no amplitude spread");
  const double fine = span / static_cast<double>(kFineBins);

  std::vector<double> counts(kFineBins, 0.0);
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - *lo_it) / fine);
    if (b >= kFineBins) b = kFineBins - 1;
    counts[b] += 1.0;
  }
  const double mean =
      static_cast<double>(values.size()) / static_cast<double>(kFineBins);
  for (double& c : counts) c -= mean;

  const std::size_t max_lag = kFineBins / 2;
  std::vector<double> acf(max_lag + 1, 0.0);
  for (std::size_t lag = 0; lag <= max_lag; ++lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < kFineBins; ++i) s += counts[i] * counts[i + lag];
    acf[lag] = s;
  }
  if (!(acf[0] > 0.0)) throw CalibrationError("degenerate pulse-height spectrum");
  const double norm = acf[0];
  for (double& a : acf) a /= norm;

  // A period candidate must dominate a window of half its own lag on both
  // sides, and must rise clearly above the lowest point seen before it.
  // The window kills harmonics (their window contains the taller
  // fundamental); the rise kills sampling wiggles on the zero-lag peak,
  // which sit on a flank that never dips first.
  double running_min = acf[1];
  for (std::size_t lag = 4; lag + 1 < acf.size(); ++lag) {
    running_min = std::min(running_min, acf[lag - 1]);
    if (acf[lag] <= kAcfSignificance) continue;
    if (acf[lag] - running_min <= kAcfRise) continue;
    const std::size_t lo = std::max<std::size_t>(1, lag - lag / 2);
    const std::size_t hi = std::min(max_lag, lag + lag / 2);
    bool is_peak = true;
    for (std::size_t j = lo; j < lag && is_peak; ++j)
      if (acf[j] >= acf[lag]) is_peak = false;
    for (std::size_t j = lag + 1; j <= hi && is_peak; ++j)
      if (acf[j] > acf[lag]) is_peak = false;
    if (is_peak) return static_cast<double>(lag) * fine;
  }
  throw CalibrationError("no significant period in the pulse-height spectrum");
}

}  // namespace

PulseTrace synth_pulse_heights(std::span<const PhotonCount> counts, double gain,
                               double noise_sigma, Rng& rng) {
  if (counts.empty()) throw std::invalid_argument("synth_pulse_heights needs counts");
  if (!std::isfinite(gain) || gain <= 0.0)
    throw std::invalid_argument("gain must be > 0, got " + std::to_string(gain));
  if (!std::isfinite(noise_sigma) || noise_sigma < 0.0)
    throw std::invalid_argument("noise_sigma must be >= 0");

  PulseTrace trace;
  trace.true_gain = gain;
  trace.amplitudes.reserve(counts.size());
  if (noise_sigma == 0.0) {
    for (PhotonCount m : counts) trace.amplitudes.push_back(gain * m);
  } else {
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (PhotonCount m : counts) trace.amplitudes.push_back(gain * m + noise(rng));
  }
  return trace;
}

CalibrationResult estimate_gain(const PulseTrace& trace, double bin_width,
                                double min_prominence) {
  if (trace.amplitudes.empty()) throw CalibrationError("empty pulse trace");
  if (!std::isfinite(bin_width) || bin_width < 0.0)
    throw std::invalid_argument("bin_width must be >= 0");
  if (!std::isfinite(min_prominence) || min_prominence <= 0.0 || min_prominence >= 1.0)
    throw std::invalid_argument("min_prominence must be in (0, 1)");

  const double period = acf_period(trace.amplitudes);
  const double bin = bin_width > 0.0 ? bin_width : period / 20.0;
  const Histogram hist = make_histogram(trace.amplitudes, bin);
  const auto& counts = hist.counts;
  const std::size_t n_bins = counts.size();

  // Windowed local maxima; the window is half the expected peak period, so
  // jitter inside one comb tooth cannot produce two peaks.
  const auto window = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.5 * period / bin)));
  std::vector<std::size_t> peak_bins;
  for (std::size_t i = 0; i < n_bins; ++i) {
    if (counts[i] == 0) continue;
    bool is_peak = true;
    const std::size_t lo = i >= window ? i - window : 0;
    const std::size_t hi = std::min(n_bins - 1, i + window);
    for (std::size_t j = lo; j < i && is_peak; ++j)
      if (counts[j] >= counts[i]) is_peak = false;
    for (std::size_t j = i + 1; j <= hi && is_peak; ++j)
      if (counts[j] > counts[i]) is_peak = false;
    if (is_peak) peak_bins.push_back(i);
  }
  if (peak_bins.empty()) throw CalibrationError("no peaks in the pulse-height spectrum");

  std::size_t tallest = 0;
  for (std::size_t b : peak_bins) tallest = std::max(tallest, counts[b]);
  const double floor_count = min_prominence * static_cast<double>(tallest);
  std::erase_if(peak_bins, [&](std::size_t b) {
    return static_cast<double>(counts[b]) < floor_count;
  });
  if (peak_bins.size() < 2)
    throw CalibrationError("fewer than 2 peaks in the pulse-height spectrum");

  // Sub-bin refinement: count-weighted centroid over half a period around
  // the coarse maximum, recentered once. Symmetric windows keep the
  // centroid unbiased for an isolated comb tooth.
  std::vector<double> positions;
  const double half_window = 0.5 * period;
  for (std::size_t b : peak_bins) {
    double center = hist.center(b);
    for (int pass = 0; pass < 2; ++pass) {
      double weight = 0.0, moment = 0.0;
      for (std::size_t j = 0; j < n_bins; ++j) {
        const double c = hist.center(j);
        if (std::abs(c - center) > half_window) continue;
        weight += static_cast<double>(counts[j]);
        moment += static_cast<double>(counts[j]) * c;
      }
      if (weight <= 0.0) break;
      center = moment / weight;
    }
    positions.push_back(center);
  }

  // Keep the run of comb-consistent peaks around the tallest one. Where the
  // comb dissolves into sparse counts the surviving maxima are noise clumps
  // with spacings unrelated to the period; growing outward from the tallest
  // tooth and stopping at the first implausible spacing drops them without
  // touching the resolved part of the comb.
  std::size_t t_idx = 0;
  for (std::size_t i = 1; i < peak_bins.size(); ++i)
    if (counts[peak_bins[i]] > counts[peak_bins[t_idx]]) t_idx = i;
  const auto plausible = [&](double s) { return s > 0.6 * period && s < 1.4 * period; };
  std::size_t lo_keep = t_idx, hi_keep = t_idx;
  while (hi_keep + 1 < positions.size() && plausible(positions[hi_keep + 1] - positions[hi_keep]))
    ++hi_keep;
  while (lo_keep > 0 && plausible(positions[lo_keep] - positions[lo_keep - 1])) --lo_keep;

  CalibrationResult result;
  result.peak_positions.assign(positions.begin() + static_cast<std::ptrdiff_t>(lo_keep),
                               positions.begin() + static_cast<std::ptrdiff_t>(hi_keep) + 1);
  if (result.peak_positions.size() < 2)
    throw CalibrationError("fewer than 2 comb-consistent peaks in the pulse-height spectrum");

  double sum = 0.0;
  std::vector<double> spacings;
  spacings.reserve(result.peak_positions.size() - 1);
  for (std::size_t i = 1; i < result.peak_positions.size(); ++i) {
    const double s = result.peak_positions[i] - result.peak_positions[i - 1];
    spacings.push_back(s);
    sum += s;
  }
  const double mean_spacing = sum / static_cast<double>(spacings.size());
  if (!(mean_spacing > 0.0)) throw CalibrationError("non-increasing peak positions");
  if (spacings.size() >= 2) {
    double ss = 0.0;
    for (double s : spacings) ss += (s - mean_spacing) * (s - mean_spacing);
    const double cv =
        std::sqrt(ss / static_cast<double>(spacings.size() - 1)) / mean_spacing;
    if (cv > kSpacingCvLimit)
      throw CalibrationError("peak spacings inconsistent, not a photon-number comb");
  }

  result.gain = mean_spacing;
  result.n_peaks = static_cast<int>(result.peak_positions.size());
  return result;
}

std::vector<PhotonCount> volts_to_photons(const PulseTrace& trace, double gain) {
  if (!std::isfinite(gain) || gain <= 0.0) throw std::invalid_argument("gain must be > 0");
  std::vector<PhotonCount> counts;
  counts.reserve(trace.amplitudes.size());
  for (double a : trace.amplitudes) {
    const long m = std::lround(a / gain);
    counts.push_back(m < 0 ? 0 : static_cast<PhotonCount>(m));
  }
  return counts;
}

Histogram make_histogram(std::span<const double> values, double bin_width) {
  if (values.empty()) throw std::invalid_argument("histogram needs values");
  if (!std::isfinite(bin_width) || bin_width <= 0.0)
    throw std::invalid_argument("bin_width must be > 0");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  Histogram hist;
  hist.bin_width = bin_width;
  hist.lo = *lo_it - 0.5 * bin_width;
  const auto n_bins =
      static_cast<std::size_t>(std::floor((*hi_it - hist.lo) / bin_width)) + 1;
  hist.counts.assign(n_bins, 0);
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - hist.lo) / bin_width);
    if (b >= n_bins) b = n_bins - 1;
    ++hist.counts[b];
  }
  return hist;
}

void save_histogram_csv(const Histogram& hist, const std::filesystem::path& path,
                        std::span<const std::string> meta) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const std::string& line : meta) out << "# " << line << "\n";
  out << "bin_center,count\n";
  out << std::setprecision(10);
  for (std::size_t i = 0; i < hist.counts.size(); ++i)
    out << hist.center(i) << ',' << hist.counts[i] << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void save_trace_csv(const PulseTrace& trace, const std::filesystem::path& path,
                    std::span<const std::string> meta) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const std::string& line : meta) out << "# " << line << "\n";
  out << std::setprecision(10);
  for (double a : trace.amplitudes) out << a << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

PulseTrace load_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  PulseTrace trace;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    trace.amplitudes.push_back(std::stod(line));
  }
  if (trace.amplitudes.empty()) throw std::runtime_error("no amplitudes in " + path.string());
  return trace;
}

}  // namespace twb
