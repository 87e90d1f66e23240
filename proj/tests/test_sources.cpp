#include <cmath>
#include <stdexcept>
#include <vector>

#include <doctest.h>

#include "twbsim/rng.hpp"
#include "twbsim/sources.hpp"

using namespace twb;

namespace {

double sample_mean(const std::vector<PhotonCount>& xs) {
  double s = 0.0;
  for (auto x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sample_var(const std::vector<PhotonCount>& xs) {
  const double m = sample_mean(xs);
  double s = 0.0;
  for (auto x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

// Geometric law: single-mode pmf has the closed form mean^m / (1+mean)^(m+1).
double geometric_pmf(int m, double mean) {
  return std::pow(mean, m) / std::pow(1.0 + mean, m + 1);
}

double poisson_pmf(int m, double mean) {
  return std::exp(-mean + m * std::log(mean) - std::lgamma(m + 1.0));
}

}  // namespace

TEST_CASE("single-mode pmf equals the geometric law") {
  CHECK(pmf_multimode_thermal(0, {1.0, 1.0}) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(pmf_multimode_thermal(2, {1.0, 1.0}) == doctest::Approx(0.125).epsilon(1e-12));
  for (int m = 0; m < 30; ++m) {
    CHECK(pmf_multimode_thermal(m, {0.176, 1.0}) ==
          doctest::Approx(geometric_pmf(m, 0.176)).epsilon(1e-10));
    CHECK(pmf_multimode_thermal(m, {3.44, 1.0}) ==
          doctest::Approx(geometric_pmf(m, 3.44)).epsilon(1e-10));
  }
}

TEST_CASE("large mode number approaches the Poisson law") {
  for (int m = 0; m < 20; ++m)
    CHECK(pmf_multimode_thermal(m, {3.44, 1e7}) ==
          doctest::Approx(poisson_pmf(m, 3.44)).epsilon(1e-5));
}

TEST_CASE("pmf normalizes to one") {
  for (SourceParams p : {SourceParams{3.44, 350.0}, SourceParams{7.0, 0.5},
                         SourceParams{0.381, 1.0}, SourceParams{12.0, 2.7}}) {
    double total = 0.0;
    for (int m = 0; m < 400; ++m) total += pmf_multimode_thermal(m, p);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("pmf edge cases") {
  CHECK(pmf_multimode_thermal(-1, {1.0, 1.0}) == 0.0);
  CHECK(pmf_multimode_thermal(0, {0.0, 1.0}) == 1.0);
  CHECK(pmf_multimode_thermal(3, {0.0, 1.0}) == 0.0);
}

TEST_CASE("parameter validation") {
  CHECK_NOTHROW(validate(SourceParams{0.0, 1.0}));
  CHECK_THROWS_AS(validate(SourceParams{-0.1, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(validate(SourceParams{1.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(validate(SourceParams{1.0, -2.0}), std::invalid_argument);
}

TEST_CASE("sampler reproduces mean and Fano factor") {
  const std::size_t n = 200000;
  SUBCASE("many modes") {
    const SourceParams p{3.44, 350.0};
    Rng rng = substream(11, tags::characterize, 0);
    std::vector<PhotonCount> xs(n);
    for (auto& x : xs) x = sample_multimode_thermal(p, rng);
    const double mean = sample_mean(xs);
    const double fano = sample_var(xs) / mean;
    // 5 sigma on the mean; the Fano target is 1 + mean/modes.
    CHECK(std::abs(mean - p.mean) < 5.0 * std::sqrt(p.mean * (1.0 + p.mean / p.modes) / n));
    CHECK(fano == doctest::Approx(1.0 + p.mean / p.modes).epsilon(0.01));
  }
  SUBCASE("single mode is strongly super-Poissonian") {
    const SourceParams p{2.0, 1.0};
    Rng rng = substream(12, tags::characterize, 0);
    std::vector<PhotonCount> xs(n);
    for (auto& x : xs) x = sample_multimode_thermal(p, rng);
    CHECK(sample_mean(xs) == doctest::Approx(2.0).epsilon(0.02));
    CHECK(sample_var(xs) / sample_mean(xs) == doctest::Approx(3.0).epsilon(0.05));
  }
}

TEST_CASE("sampler matches the pmf bin by bin") {
  const SourceParams p{2.0, 1.0};
  const std::size_t n = 200000;
  Rng rng = substream(13, tags::characterize, 0);
  std::vector<std::size_t> tally(60, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto m = static_cast<std::size_t>(sample_multimode_thermal(p, rng));
    if (m < tally.size()) ++tally[m];
  }
  for (std::size_t m = 0; m < 20; ++m) {
    const double emp = static_cast<double>(tally[m]) / static_cast<double>(n);
    CHECK(std::abs(emp - pmf_multimode_thermal(static_cast<PhotonCount>(m), p)) < 0.005);
  }
}

TEST_CASE("twin beams are perfectly correlated") {
  const SourceParams p{50.0, 100.0};
  Rng rng = substream(14, tags::characterize, 0);
  for (int i = 0; i < 1000; ++i) {
    const auto [n_s, n_i] = sample_twb_incident(p, rng);
    CHECK(n_s == n_i);
  }
}

TEST_CASE("poisson sampler moments") {
  Rng rng = substream(15, tags::characterize, 0);
  const std::size_t n = 200000;
  std::vector<PhotonCount> xs(n);
  for (auto& x : xs) x = sample_poisson(4.0, rng);
  CHECK(sample_mean(xs) == doctest::Approx(4.0).epsilon(0.01));
  CHECK(sample_var(xs) == doctest::Approx(4.0).epsilon(0.02));
  Rng rng2 = substream(15, tags::characterize, 0);
  CHECK(sample_poisson(0.0, rng2) == 0);
}

TEST_CASE("moment fit recovers source parameters") {
  const SourceParams p{5.0, 2.0};
  Rng rng = substream(16, tags::characterize, 0);
  std::vector<PhotonCount> xs(500000);
  for (auto& x : xs) x = sample_multimode_thermal(p, rng);
  const SourceParams fit = fit_modes_by_moments(xs);
  CHECK(fit.mean == doctest::Approx(5.0).epsilon(0.02));
  CHECK(fit.modes == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("moment fit rejects samples without excess noise") {
  const std::vector<PhotonCount> constant{3, 3, 3, 3};
  CHECK_THROWS_AS(fit_modes_by_moments(constant), std::domain_error);
}
