#include "twbsim/sources.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace twb {

void validate(const SourceParams& params) {
  if (!std::isfinite(params.mean) || params.mean < 0.0)
    throw std::invalid_argument("SourceParams.mean must be finite and >= 0, got " +
                                std::to_string(params.mean));
  if (!std::isfinite(params.modes) || params.modes <= 0.0)
    throw std::invalid_argument("SourceParams.modes must be finite and > 0, got " +
                                std::to_string(params.modes));
}

double pmf_multimode_thermal(PhotonCount m, const SourceParams& params) {
  validate(params);
  if (m < 0) return 0.0;
  if (params.mean == 0.0) return m == 0 ? 1.0 : 0.0;
  const double mu = params.modes;
  const double mean = params.mean;
  // Negative binomial with shape mu, evaluated through lgamma so fractional
  // mode numbers are handled.
  const double logp = std::lgamma(m + mu) - std::lgamma(m + 1.0) - std::lgamma(mu) +
                      m * std::log(mean / (mean + mu)) + mu * std::log(mu / (mean + mu));
  return std::exp(logp);
}

PhotonCount sample_multimode_thermal(const SourceParams& params, Rng& rng) {
  validate(params);
  if (params.mean == 0.0) return 0;
  std::gamma_distribution<double> gamma(params.modes, params.mean / params.modes);
  const double intensity = gamma(rng);
  if (intensity <= 0.0) return 0;
  std::poisson_distribution<PhotonCount> poisson(intensity);
  return poisson(rng);
}

std::pair<PhotonCount, PhotonCount> sample_twb_incident(const SourceParams& params, Rng& rng) {
  const PhotonCount n = sample_multimode_thermal(params, rng);
  return {n, n};
}

PhotonCount sample_poisson(double mean, Rng& rng) {
  if (!std::isfinite(mean) || mean < 0.0)
    throw std::invalid_argument("Poisson mean must be finite and >= 0, got " + std::to_string(mean));
  if (mean == 0.0) return 0;
  std::poisson_distribution<PhotonCount> poisson(mean);
  return poisson(rng);
}

SourceParams fit_modes_by_moments(std::span<const PhotonCount> samples) {
  if (samples.size() < 2) throw std::invalid_argument("mode fit needs at least 2 samples");
  long double sum = 0.0L, sum2 = 0.0L;
  for (PhotonCount m : samples) {
    sum += m;
    sum2 += static_cast<long double>(m) * m;
  }
  const double n = static_cast<double>(samples.size());
  const double mean = static_cast<double>(sum / n);
  const double var = static_cast<double>((sum2 - sum * sum / n) / (n - 1.0));
  if (var <= mean)
    throw std::domain_error("samples are not super-Poissonian (variance <= mean), mode fit undefined");
  return SourceParams{mean, mean * mean / (var - mean)};
}

}  // namespace twb
