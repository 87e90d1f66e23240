#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include <doctest.h>

#include "twbsim/channel.hpp"
#include "twbsim/estimators.hpp"

using namespace twb;

namespace {

ChannelParams reference_channel(double modes) {
  ChannelParams p;
  p.eta = 0.07;
  p.t = 0.467;
  p.twb = {7.37 / 0.07, modes};
  p.noise0 = {0.176, 1.0};
  p.noise1 = {0.381, 1.0};
  return p;
}

}  // namespace

TEST_CASE("channel parameter validation") {
  ChannelParams p = reference_channel(350.0);
  CHECK_NOTHROW(validate(p));
  p.eta = 0.0;
  CHECK_THROWS_AS(validate(p), std::invalid_argument);
  p = reference_channel(350.0);
  p.eta = 1.5;
  CHECK_THROWS_AS(validate(p), std::invalid_argument);
  p = reference_channel(350.0);
  p.t = 0.0;
  CHECK_THROWS_AS(validate(p), std::invalid_argument);
}

TEST_CASE("detection is binomial thinning") {
  Rng rng = substream(21, tags::characterize, 0);
  CHECK(detect(0, 0.5, rng) == 0);
  CHECK(detect(100, 0.0, rng) == 0);
  CHECK(detect(100, 1.0, rng) == 100);
  CHECK_THROWS_AS(detect(10, 1.5, rng), std::invalid_argument);
  CHECK_THROWS_AS(detect(10, -0.1, rng), std::invalid_argument);
  CHECK_THROWS_AS(detect(-1, 0.5, rng), std::invalid_argument);

  // Thinning a fixed n=100 at 0.3: mean 30, variance 100*0.3*0.7 = 21.
  const std::size_t n = 50000;
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = detect(100, 0.3, rng);
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  const double var = (s2 - s * s / n) / (n - 1.0);
  CHECK(mean == doctest::Approx(30.0).epsilon(0.005));
  CHECK(var == doctest::Approx(21.0).epsilon(0.05));
}

TEST_CASE("dataset generation basics") {
  const ChannelParams p = reference_channel(555.0);
  const Dataset ds = generate_dataset(p, 1, 1000, 99);
  CHECK(ds.shots.size() == 1000);
  CHECK(ds.bit == 1);
  CHECK(ds.seed == 99);
  CHECK_THROWS_AS(generate_dataset(p, 2, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(generate_dataset(p, 0, 0, 1), std::invalid_argument);
}

TEST_CASE("dataset generation is deterministic and thread-count independent") {
  const ChannelParams p = reference_channel(555.0);
  const Dataset a = generate_dataset(p, 0, 200000, 7, 1);
  const Dataset b = generate_dataset(p, 0, 200000, 7, 3);
  REQUIRE(a.shots.size() == b.shots.size());
  for (std::size_t i = 0; i < a.shots.size(); ++i) {
    CHECK(a.shots[i].m_idler == b.shots[i].m_idler);
    CHECK(a.shots[i].m_signal == b.shots[i].m_signal);
  }
  const Dataset c = generate_dataset(p, 0, 1000, 8, 1);
  bool all_equal = true;
  for (std::size_t i = 0; i < c.shots.size(); ++i)
    all_equal = all_equal && c.shots[i].m_idler == a.shots[i].m_idler;
  CHECK_FALSE(all_equal);
}

TEST_CASE("dataset moments match the channel model") {
  const ChannelParams p = reference_channel(555.0);
  const Dataset ds = generate_dataset(p, 0, 300000, 31);
  const BatchStats s = batch_stats(ds.shots);
  const double mi = p.eta * p.twb.mean;
  const double ms = p.eta * p.t * p.twb.mean + p.noise0.mean;
  CHECK(s.mean_idler == doctest::Approx(mi).epsilon(0.01));
  CHECK(s.mean_signal == doctest::Approx(ms).epsilon(0.01));
  CHECK(s.fano_idler == doctest::Approx(1.0 + mi / p.twb.modes).epsilon(0.005));
}

TEST_CASE("predicted R at reference operating points") {
  // Frozen values from the closed form, cross-checked against an
  // independent variance-component calculation.
  const ChannelParams p350 = reference_channel(350.0);
  CHECK(predict_R(7.37, p350, -1) == doctest::Approx(0.959510636).epsilon(1e-8));
  CHECK(predict_R(7.37, p350, 0) == doctest::Approx(0.962978315).epsilon(1e-8));
  CHECK(predict_R(7.37, p350, 1) == doctest::Approx(0.973858037).epsilon(1e-8));
  const ChannelParams p555 = reference_channel(555.0);
  CHECK(predict_R(7.37, p555, -1) == doctest::Approx(0.958004429).epsilon(1e-8));
  CHECK(predict_R(7.37, p555, 0) == doctest::Approx(0.961496234).epsilon(1e-8));
  CHECK(predict_R(7.37, p555, 1) == doctest::Approx(0.972403101).epsilon(1e-8));
}

TEST_CASE("predicted R closed-form limits") {
  // Balanced lossless channel: R = 1 - eta for any mean and mode number.
  ChannelParams p;
  p.eta = 0.085;
  p.t = 1.0;
  p.twb = {50.0, 123.4};
  CHECK(predict_R(0.085 * 50.0, p, -1) == doctest::Approx(0.915).epsilon(1e-12));
  // Poisson-limit source: R = 1 - 2 eta t / (1 + t).
  ChannelParams q;
  q.eta = 0.3;
  q.t = 0.6;
  q.twb = {40.0, 1e9};
  CHECK(predict_R(12.0, q, -1) ==
        doctest::Approx(1.0 - 2.0 * 0.3 * 0.6 / 1.6).epsilon(1e-6));
  CHECK_THROWS_AS(predict_R(-1.0, p, 0), std::invalid_argument);
}

TEST_CASE("noise bound restores R = 1") {
  for (double modes : {350.0, 555.0, 80.0}) {
    ChannelParams p = reference_channel(modes);
    const auto bound = max_noise_for_nonclassicality(7.37, p);
    REQUIRE(bound.has_value());
    p.noise0 = {*bound, 1.0};
    CHECK(predict_R(7.37, p, 0) == doctest::Approx(1.0).epsilon(1e-9));
  }
  // Strongly unbalanced channel with few modes: no admissible noise level.
  ChannelParams p;
  p.eta = 0.05;
  p.t = 0.01;
  p.twb = {700.0, 1.0};
  CHECK_FALSE(max_noise_for_nonclassicality(7.0, p).has_value());
}

TEST_CASE("detected Fano factor relation") {
  CHECK(fano_detected(1.19, 0.07) == doctest::Approx(1.0 + 0.07 * 0.19).epsilon(1e-12));
  CHECK(fano_detected(1.0, 0.5) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(fano_detected(-1.0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(fano_detected(1.0, 1.5), std::invalid_argument);
}

TEST_CASE("mode-number fit recovers the generating value") {
  const ChannelParams p = reference_channel(350.0);
  std::vector<RTarget> targets{{SourceParams{0.0, 1.0}, predict_R(7.37, p, -1)},
                               {p.noise0, predict_R(7.37, p, 0)},
                               {p.noise1, predict_R(7.37, p, 1)}};
  CHECK(fit_twb_modes(7.37, p, targets) == doctest::Approx(350.0).epsilon(1e-9));
}

TEST_CASE("mode-number fit agrees with a grid search") {
  const ChannelParams p = reference_channel(350.0);
  const std::vector<RTarget> targets{{SourceParams{0.0, 1.0}, 0.955},
                                     {p.noise0, 0.962},
                                     {p.noise1, 0.975}};
  const double fitted = fit_twb_modes(7.37, p, targets);
  CHECK(fitted == doctest::Approx(555.0).epsilon(0.001));

  auto sse = [&](double mu) {
    ChannelParams q = p;
    q.twb.modes = mu;
    double total = 0.0;
    const double pred[3] = {predict_R(7.37, q, -1), predict_R(7.37, q, 0),
                            predict_R(7.37, q, 1)};
    const double meas[3] = {0.955, 0.962, 0.975};
    for (int i = 0; i < 3; ++i) total += (pred[i] - meas[i]) * (pred[i] - meas[i]);
    return total;
  };
  double best_mu = 0.0, best = 1e9;
  for (double mu = 100.0; mu <= 2000.0; mu += 1.0)
    if (sse(mu) < best) best = sse(mu), best_mu = mu;
  CHECK(std::abs(fitted - best_mu) <= 1.0);
  CHECK(sse(fitted) <= sse(best_mu) + 1e-15);
}

TEST_CASE("mode-number fit degenerate cases") {
  ChannelParams p = reference_channel(350.0);
  // Inconsistent targets pushing 1/mu negative yield an infinite mode number.
  const std::vector<RTarget> low{{SourceParams{0.0, 1.0}, 0.2}};
  CHECK(std::isinf(fit_twb_modes(7.37, p, low)));
  CHECK_THROWS_AS(fit_twb_modes(7.37, p, std::span<const RTarget>{}), std::invalid_argument);
}

TEST_CASE("dataset CSV round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "twbsim_test_channel";
  std::filesystem::create_directories(dir);
  const ChannelParams p = reference_channel(555.0);
  const Dataset ds = generate_dataset(p, 1, 500, 77);
  const std::vector<std::string> meta{"config_hash=deadbeef seed=77"};
  const auto csv = dir / "ds.csv";
  save_dataset_csv(ds, csv, meta);

  std::ifstream in(csv);
  std::string first, second;
  std::getline(in, first);
  std::getline(in, second);
  CHECK(first == "# config_hash=deadbeef seed=77");
  CHECK(second == "shot,m_idler,m_signal");

  const Dataset back = load_dataset_csv(csv);
  REQUIRE(back.shots.size() == ds.shots.size());
  CHECK(back.bit == 1);
  CHECK(back.seed == 77);
  CHECK(back.params.eta == doctest::Approx(p.eta));
  CHECK(back.params.twb.modes == doctest::Approx(p.twb.modes));
  for (std::size_t i = 0; i < ds.shots.size(); ++i) {
    CHECK(back.shots[i].m_idler == ds.shots[i].m_idler);
    CHECK(back.shots[i].m_signal == ds.shots[i].m_signal);
  }

  std::filesystem::remove(dir / "ds.json");
  CHECK_THROWS_AS(load_dataset_csv(csv), std::runtime_error);
  std::filesystem::remove_all(dir);
}
