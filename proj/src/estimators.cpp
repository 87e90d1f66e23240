#include "twbsim/estimators.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <stdexcept>

#include "twbsim/parallel.hpp"
#include "twbsim/rng.hpp"

namespace twb {

namespace {

// Single-pass accumulator shared by batch_stats and the bootstrap loop.
// Integer sums stay exact; counts are small enough that the squared sums
// fit comfortably in 64 bits.
struct MomentAcc {
  unsigned long long s1 = 0, s2 = 0, s11 = 0, s22 = 0, sdd = 0;
  long long sd = 0;
  std::size_t n = 0;

  void add(const ShotRecord& rec) {
    const long long m1 = rec.m_idler, m2 = rec.m_signal;
    s1 += static_cast<unsigned long long>(m1);
    s2 += static_cast<unsigned long long>(m2);
    s11 += static_cast<unsigned long long>(m1 * m1);
    s22 += static_cast<unsigned long long>(m2 * m2);
    const long long d = m1 - m2;
    sd += d;
    sdd += static_cast<unsigned long long>(d * d);
    ++n;
  }

  BatchStats finish() const {
    if (n < 2) throw std::invalid_argument("batch statistics need at least 2 shots");
    const double dn = static_cast<double>(n);
    BatchStats out;
    out.batch_size = n;
    out.mean_idler = static_cast<double>(s1) / dn;
    out.mean_signal = static_cast<double>(s2) / dn;
    const double var_idler =
        (static_cast<double>(s11) - dn * out.mean_idler * out.mean_idler) / (dn - 1.0);
    const double var_signal =
        (static_cast<double>(s22) - dn * out.mean_signal * out.mean_signal) / (dn - 1.0);
    const double mean_diff = static_cast<double>(sd) / dn;
    const double var_diff = (static_cast<double>(sdd) - dn * mean_diff * mean_diff) / (dn - 1.0);
    out.fano_idler = out.mean_idler > 0.0 ? var_idler / out.mean_idler : 0.0;
    out.fano_signal = out.mean_signal > 0.0 ? var_signal / out.mean_signal : 0.0;
    const double shot_noise = out.mean_idler + out.mean_signal;
    if (shot_noise <= 0.0) throw std::domain_error("zero shot-noise level, R undefined");
    out.R = std::max(0.0, var_diff) / shot_noise;
    return out;
  }
};

}  // namespace

double field_value(const BatchStats& stats, Field field) {
  switch (field) {
    case Field::MeanIdler: return stats.mean_idler;
    case Field::MeanSignal: return stats.mean_signal;
    case Field::FanoIdler: return stats.fano_idler;
    case Field::FanoSignal: return stats.fano_signal;
    case Field::R: return stats.R;
  }
  throw std::invalid_argument("unknown field selector");
}

BatchStats batch_stats(std::span<const ShotRecord> shots) {
  MomentAcc acc;
  for (const ShotRecord& rec : shots) acc.add(rec);
  return acc.finish();
}

std::vector<BatchStats> bootstrap_batches(const Dataset& dataset, std::size_t batch_size,
                                          std::size_t n_batches, Rng& rng,
                                          const BootstrapOptions& options) {
  const std::size_t n = dataset.shots.size();
  if (n == 0) throw std::invalid_argument("dataset is empty");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (n_batches == 0) throw std::invalid_argument("n_batches must be >= 1");
  if (!options.with_replacement && batch_size > n)
    throw std::invalid_argument("batch_size exceeds dataset size for distinct-index sampling");

  const std::uint64_t base = rng();
  std::vector<BatchStats> out(n_batches);
  const ShotRecord* shots = dataset.shots.data();

  parallel_for(n_batches, options.threads, [&](std::size_t b) {
    Rng stream = substream(base, tags::bootstrap, b);
    MomentAcc acc;
    if (options.with_replacement) {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (std::size_t i = 0; i < batch_size; ++i) acc.add(shots[pick(stream)]);
    } else {
      std::vector<std::uint32_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0u);
      for (std::size_t i = 0; i < batch_size; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(stream)]);
        acc.add(shots[idx[i]]);
      }
    }
    out[b] = acc.finish();
  });
  return out;
}

std::vector<BatchStats> disjoint_batches(const Dataset& dataset, std::size_t n_parts) {
  const std::size_t n = dataset.shots.size();
  if (n_parts == 0) throw std::invalid_argument("n_parts must be >= 1");
  const std::size_t part = n / n_parts;
  if (part < 2) throw std::invalid_argument("dataset too small for " + std::to_string(n_parts) +
                                            " disjoint batches");
  std::vector<BatchStats> out;
  out.reserve(n_parts);
  for (std::size_t p = 0; p < n_parts; ++p)
    out.push_back(batch_stats(std::span(dataset.shots).subspan(p * part, part)));
  return out;
}

StatSummary summarize(std::span<const BatchStats> stats, Field field) {
  if (stats.size() < 2) throw std::invalid_argument("summary needs at least 2 batches");
  double sum = 0.0;
  for (const BatchStats& s : stats) sum += field_value(s, field);
  const double mean = sum / static_cast<double>(stats.size());
  double ss = 0.0;
  for (const BatchStats& s : stats) {
    const double d = field_value(s, field) - mean;
    ss += d * d;
  }
  StatSummary out;
  out.mean = mean;
  out.std_error = std::sqrt(ss / static_cast<double>(stats.size() - 1));
  out.n_batches = stats.size();
  return out;
}

double r_standard_error(std::span<const ShotRecord> shots) {
  const std::size_t n = shots.size();
  if (n < 2) throw std::invalid_argument("standard error needs at least 2 shots");
  const double dn = static_cast<double>(n);

  double sum_d = 0.0, sum_t = 0.0;
  for (const ShotRecord& rec : shots) {
    sum_d += rec.m_idler - rec.m_signal;
    sum_t += rec.m_idler + rec.m_signal;
  }
  const double mean_d = sum_d / dn;
  const double mean_t = sum_t / dn;
  if (mean_t <= 0.0) throw std::domain_error("zero shot-noise level, R undefined");

  // Central moments of the difference d and the total t, plus the covariance
  // between (d - <d>)^2 and t that couples numerator and denominator.
  double m2 = 0.0, m4 = 0.0, var_t = 0.0, cov = 0.0;
  for (const ShotRecord& rec : shots) {
    const double d = rec.m_idler - rec.m_signal - mean_d;
    const double t = rec.m_idler + rec.m_signal - mean_t;
    const double d2 = d * d;
    m2 += d2;
    m4 += d2 * d2;
    var_t += t * t;
    cov += d2 * t;
  }
  m2 /= dn;
  m4 /= dn;
  var_t /= dn;
  cov /= dn;

  const double R = m2 / mean_t;
  const double var_R =
      (m4 - m2 * m2 + R * R * var_t - 2.0 * R * cov) / (dn * mean_t * mean_t);
  return std::sqrt(std::max(0.0, var_R));
}

void save_batch_csv(std::span<const BatchStats> stats, const std::filesystem::path& path,
                    std::span<const std::string> meta) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const std::string& line : meta) out << "# " << line << "\n";
  out << "batch,mean_i,mean_s,fano_i,fano_s,R\n";
  out << std::setprecision(10);
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const BatchStats& s = stats[i];
    out << i << ',' << s.mean_idler << ',' << s.mean_signal << ',' << s.fano_idler << ','
        << s.fano_signal << ',' << s.R << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace twb
