#include "twbsim/adversary.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "twbsim/parallel.hpp"
#include "twbsim/sources.hpp"

namespace twb {

namespace {

void validate(const AttackParams& attack) {
  if (!std::isfinite(attack.fraction) || attack.fraction < 0.0 || attack.fraction > 1.0)
    throw std::invalid_argument("attack fraction must be in [0, 1], got " +
                                std::to_string(attack.fraction));
  if (attack.mean_mode == ResendMean::Exact &&
      (!std::isfinite(attack.resend_mean) || attack.resend_mean < 0.0))
    throw std::invalid_argument("exact resend mode needs a resend_mean >= 0");
}

void apply_attack(std::vector<ShotRecord>& shots, const AttackParams& attack, Rng& rng) {
  const std::size_t n = shots.size();
  std::size_t n_attacked =
      static_cast<std::size_t>(std::floor(attack.fraction * static_cast<double>(n) + 0.5));
  if (n_attacked > n) n_attacked = n;
  if (n_attacked == 0) return;

  // Partial Fisher-Yates picks the intercepted subset uniformly.
  std::vector<std::uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  for (std::size_t i = 0; i < n_attacked; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }

  double resend_mean = attack.resend_mean;
  if (attack.mean_mode == ResendMean::Estimated) {
    unsigned long long sum = 0;
    for (std::size_t i = 0; i < n_attacked; ++i)
      sum += static_cast<unsigned long long>(shots[idx[i]].m_signal);
    resend_mean = static_cast<double>(sum) / static_cast<double>(n_attacked);
  }

  if (resend_mean <= 0.0) {
    for (std::size_t i = 0; i < n_attacked; ++i) shots[idx[i]].m_signal = 0;
    return;
  }
  std::poisson_distribution<PhotonCount> resend(resend_mean);
  for (std::size_t i = 0; i < n_attacked; ++i) shots[idx[i]].m_signal = resend(rng);
}

}  // namespace

std::vector<ShotRecord> intercept_resend(std::span<const ShotRecord> shots,
                                         const AttackParams& attack, Rng& rng) {
  validate(attack);
  std::vector<ShotRecord> out(shots.begin(), shots.end());
  apply_attack(out, attack, rng);
  return out;
}

std::vector<SweepPoint> attack_sweep(const Dataset& dataset, std::span<const double> fractions,
                                     std::size_t d_b, std::size_t n_realizations, Rng& rng,
                                     const SweepOptions& options) {
  if (fractions.empty()) throw std::invalid_argument("attack_sweep needs a fraction grid");
  for (double f : fractions)
    if (!std::isfinite(f) || f < 0.0 || f > 1.0)
      throw std::invalid_argument("fractions must lie in [0, 1]");
  if (dataset.shots.empty()) throw std::invalid_argument("dataset is empty");
  if (d_b < 2) throw std::invalid_argument("d_b must be >= 2");
  if (n_realizations < 2) throw std::invalid_argument("n_realizations must be >= 2");

  const ChannelParams& params = dataset.params;
  const double exact_mean =
      params.eta * params.t * params.twb.mean + params.noise(dataset.bit).mean;
  const std::uint64_t base = rng();
  const std::size_t n = dataset.shots.size();
  const ShotRecord* shots = dataset.shots.data();

  std::vector<double> R_all(fractions.size() * n_realizations);
  parallel_for(R_all.size(), options.threads, [&](std::size_t unit) {
    const std::size_t fi = unit / n_realizations;
    const std::size_t r = unit % n_realizations;
    Rng stream = substream(base, tags::sweep + fi, r);

    std::vector<ShotRecord> batch(d_b);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t i = 0; i < d_b; ++i) batch[i] = shots[pick(stream)];

    AttackParams attack;
    attack.fraction = fractions[fi];
    attack.mean_mode = options.mean_mode;
    attack.resend_mean = exact_mean;
    apply_attack(batch, attack, stream);
    R_all[unit] = batch_stats(batch).R;
  });

  std::vector<SweepPoint> out;
  out.reserve(fractions.size());
  for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
    const double* R = R_all.data() + fi * n_realizations;
    const double dn = static_cast<double>(n_realizations);
    double mean = 0.0;
    for (std::size_t r = 0; r < n_realizations; ++r) mean += R[r];
    mean /= dn;
    double ss = 0.0;
    std::size_t flags = 0;
    for (std::size_t r = 0; r < n_realizations; ++r) {
      const double d = R[r] - mean;
      ss += d * d;
      if (options.detection &&
          detect_attack(R[r], options.detection->R_ref, options.detection->sigma,
                        options.detection->k))
        ++flags;
    }
    SweepPoint point;
    point.fraction = fractions[fi];
    point.R_mean = mean;
    point.R_std = std::sqrt(ss / (dn - 1.0));
    point.flag_rate = options.detection ? static_cast<double>(flags) / dn
                                        : std::numeric_limits<double>::quiet_NaN();
    out.push_back(point);
  }
  return out;
}

bool detect_attack(double R, double R_ref, double sigma, double k) {
  if (!(sigma > 0.0) || !(k > 0.0))
    throw std::invalid_argument("detect_attack needs sigma > 0 and k > 0");
  return R > R_ref + k * sigma;
}

LineFit fit_sweep_line(std::span<const SweepPoint> points) {
  if (points.size() < 2) throw std::invalid_argument("line fit needs at least 2 points");
  const double n = static_cast<double>(points.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const SweepPoint& p : points) {
    sx += p.fraction;
    sy += p.R_mean;
    sxx += p.fraction * p.fraction;
    sxy += p.fraction * p.R_mean;
    syy += p.R_mean * p.R_mean;
  }
  const double var_x = sxx - sx * sx / n;
  if (var_x <= 0.0) throw std::invalid_argument("line fit needs distinct fractions");
  LineFit fit;
  fit.slope = (sxy - sx * sy / n) / var_x;
  fit.intercept = (sy - fit.slope * sx) / n;
  const double ss_tot = syy - sy * sy / n;
  double ss_res = 0.0;
  for (const SweepPoint& p : points) {
    const double e = p.R_mean - (fit.intercept + fit.slope * p.fraction);
    ss_res += e * e;
  }
  fit.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return fit;
}

double crossing_fraction(const LineFit& fit, double target) {
  return (target - fit.intercept) / fit.slope;
}

void save_sweep_csv(std::span<const SweepPoint> points, const std::filesystem::path& path,
                    std::span<const std::string> meta) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const std::string& line : meta) out << "# " << line << "\n";
  out << "fraction,R_mean,R_std,flag_rate\n";
  out << std::setprecision(10);
  for (const SweepPoint& p : points)
    out << p.fraction << ',' << p.R_mean << ',' << p.R_std << ',' << p.flag_rate << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace twb
