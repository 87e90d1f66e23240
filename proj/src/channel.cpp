#include "twbsim/channel.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "twbsim/parallel.hpp"
#include "twbsim/serialization.hpp"

namespace twb {

void validate(const ChannelParams& params) {
  if (!std::isfinite(params.eta) || params.eta <= 0.0 || params.eta > 1.0)
    throw std::invalid_argument("ChannelParams.eta must be in (0, 1], got " +
                                std::to_string(params.eta));
  if (!std::isfinite(params.t) || params.t <= 0.0 || params.t > 1.0)
    throw std::invalid_argument("ChannelParams.t must be in (0, 1], got " +
                                std::to_string(params.t));
  validate(params.twb);
  validate(params.noise0);
  validate(params.noise1);
}

PhotonCount detect(PhotonCount n, double efficiency, Rng& rng) {
  if (!std::isfinite(efficiency) || efficiency < 0.0 || efficiency > 1.0)
    throw std::invalid_argument("detection efficiency must be in [0, 1], got " +
                                std::to_string(efficiency));
  if (n < 0) throw std::invalid_argument("photon count must be >= 0");
  if (n == 0 || efficiency == 0.0) return 0;
  if (efficiency == 1.0) return n;
  std::binomial_distribution<PhotonCount> thin(n, efficiency);
  return thin(rng);
}

Dataset generate_dataset(const ChannelParams& params, int bit, std::size_t n_shots,
                         std::uint64_t seed, int threads) {
  validate(params);
  if (bit != 0 && bit != 1) throw std::invalid_argument("bit must be 0 or 1");
  if (n_shots == 0) throw std::invalid_argument("n_shots must be >= 1");

  Dataset out;
  out.bit = bit;
  out.params = params;
  out.seed = seed;
  out.shots.resize(n_shots);

  constexpr std::size_t kChunk = 1 << 16;
  const std::size_t n_chunks = (n_shots + kChunk - 1) / kChunk;
  const SourceParams& noise = params.noise(bit);
  const double eta_signal = params.eta * params.t;

  parallel_for(n_chunks, threads, [&](std::size_t c) {
    Rng rng = substream(seed, tags::dataset + static_cast<std::uint64_t>(bit), c);
    const std::size_t lo = c * kChunk;
    const std::size_t hi = std::min(n_shots, lo + kChunk);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto [n, n2] = sample_twb_incident(params.twb, rng);
      (void)n2;
      ShotRecord rec;
      rec.m_idler = detect(n, params.eta, rng);
      rec.m_signal = detect(n, eta_signal, rng);
      if (noise.mean > 0.0) rec.m_signal += sample_multimode_thermal(noise, rng);
      out.shots[i] = rec;
    }
  });
  return out;
}

double predict_R(double mean_idler, const ChannelParams& params, int bit) {
  validate(params);
  if (!std::isfinite(mean_idler) || mean_idler <= 0.0)
    throw std::invalid_argument("mean_idler must be > 0, got " + std::to_string(mean_idler));
  const double m = mean_idler;
  const double t = params.t;
  const double mu = params.twb.modes;
  double noise_mean = 0.0, noise_modes = 1.0;
  if (bit >= 0) {
    const SourceParams& noise = params.noise(bit);
    noise_mean = noise.mean;
    noise_modes = noise.modes;
  }
  const double denom = (1.0 + t) * m + noise_mean;
  if (denom <= 0.0) throw std::domain_error("shot-noise level is zero, R undefined");
  return 1.0 - 2.0 * params.eta * t * m / denom + (1.0 - t) * (1.0 - t) * m * m / (mu * denom) +
         noise_mean * noise_mean / (noise_modes * denom);
}

std::optional<double> max_noise_for_nonclassicality(double mean_idler, const ChannelParams& params,
                                                    std::optional<double> noise_modes) {
  validate(params);
  if (!std::isfinite(mean_idler) || mean_idler <= 0.0)
    throw std::invalid_argument("mean_idler must be > 0");
  const double mu = params.twb.modes;
  const double t = params.t;
  const double mu_n = noise_modes.value_or(params.noise0.modes);
  const double inner = 2.0 * params.eta * t * mu - (1.0 - t) * (1.0 - t) * mean_idler;
  if (inner < 0.0) return std::nullopt;
  return std::sqrt(mu_n * inner * mean_idler / mu);
}

double fano_detected(double fano_incident, double eta) {
  if (!std::isfinite(fano_incident) || fano_incident < 0.0)
    throw std::invalid_argument("incident Fano factor must be >= 0");
  if (!std::isfinite(eta) || eta < 0.0 || eta > 1.0)
    throw std::invalid_argument("eta must be in [0, 1]");
  return eta * fano_incident + 1.0 - eta;
}

double detected_idler_mean(const ChannelParams& params) { return params.eta * params.twb.mean; }

double fit_twb_modes(double mean_idler, const ChannelParams& params,
                     std::span<const RTarget> targets) {
  if (targets.empty()) throw std::invalid_argument("mode fit needs at least one R target");
  if (!std::isfinite(mean_idler) || mean_idler <= 0.0)
    throw std::invalid_argument("mean_idler must be > 0");
  const double m = mean_idler;
  const double t = params.t;
  // R is affine in x = 1/mu: R = base + x * slope with
  //   base  = 1 - 2 eta t m / D + <m_N>^2/(mu_N D),  slope = (1-t)^2 m^2 / D.
  double num = 0.0, den = 0.0;
  for (const RTarget& target : targets) {
    validate(target.noise);
    const double mn = target.noise.mean;
    const double denom = (1.0 + t) * m + mn;
    if (denom <= 0.0) throw std::domain_error("degenerate shot-noise level in mode fit");
    const double base =
        1.0 - 2.0 * params.eta * t * m / denom + mn * mn / (target.noise.modes * denom);
    const double slope = (1.0 - t) * (1.0 - t) * m * m / denom;
    num += (target.R - base) * slope;
    den += slope * slope;
  }
  if (den == 0.0) return std::numeric_limits<double>::infinity();
  const double x = num / den;
  if (x <= 0.0) return std::numeric_limits<double>::infinity();
  return 1.0 / x;
}

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
  std::filesystem::path p = csv_path;
  p.replace_extension(".json");
  return p;
}

}  // namespace

void save_dataset_csv(const Dataset& dataset, const std::filesystem::path& csv_path,
                      std::span<const std::string> meta) {
  if (dataset.shots.empty()) throw std::invalid_argument("dataset is empty");
  std::ofstream out(csv_path);
  if (!out) throw std::runtime_error("cannot open " + csv_path.string() + " for writing");
  for (const std::string& line : meta) out << "# " << line << "\n";
  out << "shot,m_idler,m_signal\n";
  for (std::size_t i = 0; i < dataset.shots.size(); ++i)
    out << i << ',' << dataset.shots[i].m_idler << ',' << dataset.shots[i].m_signal << '\n';
  if (!out) throw std::runtime_error("write failed for " + csv_path.string());

  nlohmann::json sidecar{{"bit", dataset.bit},
                         {"seed", dataset.seed},
                         {"n_shots", dataset.shots.size()},
                         {"params", dataset.params}};
  std::ofstream js(sidecar_path(csv_path));
  if (!js) throw std::runtime_error("cannot open dataset sidecar for writing");
  js << sidecar.dump(2) << "\n";
}

Dataset load_dataset_csv(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open " + csv_path.string());
  Dataset dataset;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != "shot,m_idler,m_signal")
        throw std::runtime_error("unexpected dataset header: " + line);
      header_seen = true;
      continue;
    }
    std::istringstream row(line);
    std::string field;
    ShotRecord rec;
    std::getline(row, field, ',');  // shot index
    std::getline(row, field, ',');
    rec.m_idler = std::stoi(field);
    std::getline(row, field, ',');
    rec.m_signal = std::stoi(field);
    if (rec.m_idler < 0 || rec.m_signal < 0)
      throw std::runtime_error("negative photon count in " + csv_path.string());
    dataset.shots.push_back(rec);
  }
  if (!header_seen || dataset.shots.empty())
    throw std::runtime_error("no shot records in " + csv_path.string());

  std::ifstream js(sidecar_path(csv_path));
  if (!js) throw std::runtime_error("missing dataset sidecar " + sidecar_path(csv_path).string());
  nlohmann::json sidecar = nlohmann::json::parse(js);
  dataset.bit = sidecar.at("bit").get<int>();
  dataset.seed = sidecar.at("seed").get<std::uint64_t>();
  dataset.params = sidecar.at("params").get<ChannelParams>();
  return dataset;
}

}  // namespace twb
