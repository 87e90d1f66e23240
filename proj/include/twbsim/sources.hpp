#pragma once

#include <span>
#include <utility>

#include "twbsim/rng.hpp"

namespace twb {

// Photon counts are non-negative; int keeps arithmetic on differences simple.
using PhotonCount = int;

// Multi-mode thermal light with mean photons per shot `mean` and effective
// mode number `modes` (need not be integer). The photon-number law is the
// negative binomial with shape `modes`; Fano factor 1 + mean/modes.
struct SourceParams {
  double mean = 0.0;
  double modes = 1.0;
};

void validate(const SourceParams& params);

double pmf_multimode_thermal(PhotonCount m, const SourceParams& params);

// Gamma-Poisson mixture: Lambda ~ Gamma(shape=modes, mean=mean), then
// Poisson(Lambda). Exact for non-integer mode numbers.
PhotonCount sample_multimode_thermal(const SourceParams& params, Rng& rng);

// Twin-beam emission: both arms carry the same photon number.
std::pair<PhotonCount, PhotonCount> sample_twb_incident(const SourceParams& params, Rng& rng);

PhotonCount sample_poisson(double mean, Rng& rng);

// Moment matching: mean = sample mean, modes = mean^2 / (var - mean).
// Requires super-Poissonian samples (var > mean).
SourceParams fit_modes_by_moments(std::span<const PhotonCount> samples);

}  // namespace twb
