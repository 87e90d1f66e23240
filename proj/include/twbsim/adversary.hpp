#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "twbsim/estimators.hpp"

namespace twb {

enum class ResendMean { Exact, Estimated };
enum class ResendLaw { Poissonian };

struct AttackParams {
  double fraction = 0.0;  // share of a batch that is intercepted
  ResendMean mean_mode = ResendMean::Exact;
  ResendLaw law = ResendLaw::Poissonian;
  // True signal+noise mean, used in Exact mode. Estimated mode measures the
  // mean of the intercepted shots instead.
  double resend_mean = 0.0;
};

// Replaces m_signal of floor(fraction * n + 1/2) randomly chosen shots with
// a Poissonian resend of matched mean; m_idler is untouched, so attacked
// shots lose the arm correlation while the signal mean is preserved.
std::vector<ShotRecord> intercept_resend(std::span<const ShotRecord> shots,
                                         const AttackParams& attack, Rng& rng);

struct SweepPoint {
  double fraction = 0.0;
  double R_mean = 0.0;
  double R_std = 0.0;
  double flag_rate = 0.0;
};

struct DetectionReference {
  double R_ref = 0.0;
  double sigma = 0.0;
  double k = 2.0;
};

struct SweepOptions {
  ResendMean mean_mode = ResendMean::Exact;
  std::optional<DetectionReference> detection;  // enables the flag_rate column
  int threads = 1;
};

// For each interception fraction: n_realizations bootstrap batches of d_b
// shots, each attacked, each reduced to its R. flag_rate is NaN without a
// detection reference.
std::vector<SweepPoint> attack_sweep(const Dataset& dataset, std::span<const double> fractions,
                                     std::size_t d_b, std::size_t n_realizations, Rng& rng,
                                     const SweepOptions& options = {});

bool detect_attack(double R, double R_ref, double sigma, double k);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

LineFit fit_sweep_line(std::span<const SweepPoint> points);

// Fraction at which the fitted line reaches `target`.
double crossing_fraction(const LineFit& fit, double target);

// CSV with header fraction,R_mean,R_std,flag_rate.
void save_sweep_csv(std::span<const SweepPoint> points, const std::filesystem::path& path,
                    std::span<const std::string> meta = {});

}  // namespace twb
