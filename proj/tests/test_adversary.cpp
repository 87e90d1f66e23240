#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include <doctest.h>

#include "twbsim/adversary.hpp"
#include "twbsim/estimators.hpp"

using namespace twb;

namespace {

ChannelParams reference_channel() {
  ChannelParams p;
  p.eta = 0.07;
  p.t = 0.467;
  p.twb = {7.37 / 0.07, 555.0};
  p.noise0 = {0.176, 1.0};
  p.noise1 = {0.381, 1.0};
  return p;
}

}  // namespace

TEST_CASE("zero fraction leaves the data untouched") {
  const Dataset ds = generate_dataset(reference_channel(), 0, 5000, 51);
  AttackParams attack;
  attack.fraction = 0.0;
  attack.resend_mean = 3.6;
  Rng rng = substream(51, tags::sweep, 0);
  const auto out = intercept_resend(ds.shots, attack, rng);
  REQUIRE(out.size() == ds.shots.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i].m_idler == ds.shots[i].m_idler);
    CHECK(out[i].m_signal == ds.shots[i].m_signal);
  }
}

TEST_CASE("attacked shot count follows the rounded fraction") {
  const Dataset ds = generate_dataset(reference_channel(), 0, 1000, 52);
  AttackParams attack;
  attack.fraction = 0.37;
  attack.resend_mean = 5000.0;  // resent counts are unmistakably larger
  Rng rng = substream(52, tags::sweep, 0);
  const auto out = intercept_resend(ds.shots, attack, rng);
  std::size_t replaced = 0;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i].m_signal > 1000) ++replaced;
  CHECK(replaced == 370);
  // Idler arm is never modified.
  for (std::size_t i = 0; i < out.size(); ++i)
    CHECK(out[i].m_idler == ds.shots[i].m_idler);
}

TEST_CASE("full replacement with exact mean restores R above one") {
  // Poissonian resend destroys the arm correlation: with the signal arm
  // independent of the idler, R = 1 + m_i (F_i - 1) / (m_i + m_s).
  const ChannelParams p = reference_channel();
  const Dataset ds = generate_dataset(p, 0, 300000, 53);
  AttackParams attack;
  attack.fraction = 1.0;
  attack.resend_mean = p.eta * p.t * p.twb.mean + p.noise0.mean;
  Rng rng = substream(53, tags::sweep, 0);
  Dataset hacked = ds;
  hacked.shots = intercept_resend(ds.shots, attack, rng);
  const BatchStats s = batch_stats(hacked.shots);
  const double mi = p.eta * p.twb.mean;
  const double expected = 1.0 + mi * (mi / p.twb.modes) / (mi + attack.resend_mean);
  CHECK(expected == doctest::Approx(1.008907).epsilon(1e-4));
  CHECK(s.R == doctest::Approx(expected).epsilon(0.004));
  CHECK(s.mean_signal == doctest::Approx(attack.resend_mean).epsilon(0.01));
}

TEST_CASE("estimated resend mean matches the intercepted subset") {
  const Dataset ds = generate_dataset(reference_channel(), 1, 100000, 54);
  AttackParams attack;
  attack.fraction = 1.0;
  attack.mean_mode = ResendMean::Estimated;
  Rng rng = substream(54, tags::sweep, 0);
  const auto out = intercept_resend(ds.shots, attack, rng);
  double before = 0.0, after = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    before += ds.shots[i].m_signal;
    after += out[i].m_signal;
  }
  CHECK(after / before == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("attack detection rule") {
  CHECK_FALSE(detect_attack(0.96, 0.955, 0.004, 2.0));
  CHECK(detect_attack(0.97, 0.955, 0.004, 2.0));
  CHECK_FALSE(detect_attack(0.955 + 2.0 * 0.004, 0.955, 0.004, 2.0));  // boundary not above
}

TEST_CASE("sweep validation") {
  const Dataset ds = generate_dataset(reference_channel(), 0, 10000, 55);
  Rng rng = substream(55, tags::sweep, 0);
  const std::vector<double> empty;
  CHECK_THROWS_AS(attack_sweep(ds, empty, 1000, 10, rng, {}), std::invalid_argument);
  const std::vector<double> bad{0.0, 1.2};
  CHECK_THROWS_AS(attack_sweep(ds, bad, 1000, 10, rng, {}), std::invalid_argument);
  const std::vector<double> ok{0.0, 0.5};
  CHECK_THROWS_AS(attack_sweep(ds, ok, 1, 10, rng, {}), std::invalid_argument);
  CHECK_THROWS_AS(attack_sweep(ds, ok, 1000, 1, rng, {}), std::invalid_argument);
}

TEST_CASE("sweep is deterministic and thread-count independent") {
  const Dataset ds = generate_dataset(reference_channel(), 0, 50000, 56);
  const std::vector<double> fractions{0.0, 0.3, 0.6, 1.0};
  SweepOptions opts1;
  opts1.threads = 1;
  SweepOptions opts3;
  opts3.threads = 3;
  Rng r1 = substream(56, tags::sweep, 0);
  Rng r2 = substream(56, tags::sweep, 0);
  const auto a = attack_sweep(ds, fractions, 2000, 30, r1, opts1);
  const auto b = attack_sweep(ds, fractions, 2000, 30, r2, opts3);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].R_mean == b[i].R_mean);
    CHECK(a[i].R_std == b[i].R_std);
  }
}

TEST_CASE("mean R rises linearly with the attacked fraction") {
  const Dataset ds = generate_dataset(reference_channel(), 0, 200000, 57);
  const std::vector<double> fractions{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  const std::size_t d_b = 40000;
  // Reference spread at the sweep's batch size, scaled from the full-sample
  // delta-method error.
  const double sigma =
      r_standard_error(ds.shots) * std::sqrt(static_cast<double>(ds.shots.size()) / d_b);
  SweepOptions opts;
  opts.detection = DetectionReference{batch_stats(ds.shots).R, sigma, 2.0};
  Rng rng = substream(57, tags::sweep, 0);
  const auto sweep = attack_sweep(ds, fractions, d_b, 200, rng, opts);
  REQUIRE(sweep.size() == fractions.size());

  const LineFit fit = fit_sweep_line(sweep);
  CHECK(fit.slope > 0.0);
  CHECK(fit.r2 > 0.98);
  // Endpoints anchor the line: R(0) near the unattacked value, R(1) above one.
  CHECK(sweep.front().R_mean == doctest::Approx(batch_stats(ds.shots).R).epsilon(0.01));
  CHECK(sweep.back().R_mean > 1.0);
  // Flag rate starts near the one-sided false-alarm level and saturates.
  CHECK(sweep.front().flag_rate < 0.10);
  CHECK(sweep.back().flag_rate > 0.99);

  const double cross = crossing_fraction(fit, 1.0);
  CHECK(cross > 0.0);
  CHECK(cross < 1.0);
}

TEST_CASE("line fit and crossing on exact synthetic points") {
  std::vector<SweepPoint> pts(5);
  for (int i = 0; i < 5; ++i) {
    pts[i].fraction = 0.25 * i;
    pts[i].R_mean = 0.9 + 0.08 * pts[i].fraction;
  }
  const LineFit fit = fit_sweep_line(pts);
  CHECK(fit.slope == doctest::Approx(0.08).epsilon(1e-12));
  CHECK(fit.intercept == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(fit.r2 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(crossing_fraction(fit, 1.0) == doctest::Approx(1.25).epsilon(1e-9));
  CHECK(crossing_fraction(fit, 0.94) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("sweep CSV format") {
  std::vector<SweepPoint> pts(2);
  pts[0] = {0.0, 0.95, 0.004, 0.02};
  pts[1] = {1.0, 1.01, 0.005, 1.0};
  const auto dir = std::filesystem::temp_directory_path() / "twbsim_test_sweep";
  std::filesystem::create_directories(dir);
  const auto path = dir / "sweep.csv";
  save_sweep_csv(pts, path, std::vector<std::string>{"config_hash=f seed=3"});
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "# config_hash=f seed=3");
  std::getline(in, line);
  CHECK(line == "fraction,R_mean,R_std,flag_rate");
  std::filesystem::remove_all(dir);
}
