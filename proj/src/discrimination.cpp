#include "twbsim/discrimination.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <stdexcept>

namespace twb {

namespace {

void require_finite(std::span<const double> scores, const char* what) {
  for (double s : scores)
    if (!std::isfinite(s)) throw std::invalid_argument(std::string(what) + " contains a non-finite score");
}

}  // namespace

int classify(double x, double x_th) {
  if (!std::isfinite(x) || !std::isfinite(x_th))
    throw std::invalid_argument("classify needs finite inputs");
  return x >= x_th ? 1 : 0;
}

double midpoint_threshold(double x0, double x1) {
  if (!std::isfinite(x0) || !std::isfinite(x1))
    throw std::invalid_argument("midpoint_threshold needs finite inputs");
  return 0.5 * (x0 + x1);
}

ConfusionCounts tally_scores(std::span<const double> scores_bit0,
                             std::span<const double> scores_bit1, double threshold) {
  ConfusionCounts counts;
  for (double s : scores_bit0) {
    if (classify(s, threshold) == 1)
      ++counts.fp;
    else
      ++counts.tn;
  }
  for (double s : scores_bit1) {
    if (classify(s, threshold) == 1)
      ++counts.tp;
    else
      ++counts.fn;
  }
  return counts;
}

double error_probability(const ConfusionCounts& counts) {
  const std::size_t positives = counts.tp + counts.fn;
  const std::size_t negatives = counts.fp + counts.tn;
  if (positives == 0 || negatives == 0)
    throw std::domain_error("error probability needs both classes present");
  const double fnr = static_cast<double>(counts.fn) / static_cast<double>(positives);
  const double fpr = static_cast<double>(counts.fp) / static_cast<double>(negatives);
  return 0.5 * (fnr + fpr);
}

std::vector<RocPoint> roc_curve(std::span<const double> scores_bit0,
                                std::span<const double> scores_bit1) {
  if (scores_bit0.empty() || scores_bit1.empty())
    throw std::invalid_argument("roc_curve needs scores for both bits");
  require_finite(scores_bit0, "scores_bit0");
  require_finite(scores_bit1, "scores_bit1");

  std::vector<double> s0(scores_bit0.begin(), scores_bit0.end());
  std::vector<double> s1(scores_bit1.begin(), scores_bit1.end());
  std::sort(s0.begin(), s0.end(), std::greater<>());
  std::sort(s1.begin(), s1.end(), std::greater<>());

  const double n0 = static_cast<double>(s0.size());
  const double n1 = static_cast<double>(s1.size());
  constexpr double inf = std::numeric_limits<double>::infinity();

  std::vector<RocPoint> points;
  points.push_back({inf, 0.0, 0.0});
  std::size_t i0 = 0, i1 = 0;
  while (i0 < s0.size() || i1 < s1.size()) {
    double th;
    if (i0 == s0.size())
      th = s1[i1];
    else if (i1 == s1.size())
      th = s0[i0];
    else
      th = std::max(s0[i0], s1[i1]);
    while (i0 < s0.size() && s0[i0] >= th) ++i0;
    while (i1 < s1.size() && s1[i1] >= th) ++i1;
    points.push_back({th, static_cast<double>(i0) / n0, static_cast<double>(i1) / n1});
  }
  points.push_back({-inf, 1.0, 1.0});
  return points;
}

double auc(std::span<const RocPoint> points) {
  if (points.size() < 2) throw std::invalid_argument("auc needs at least 2 points");
  std::vector<RocPoint> sorted(points.begin(), points.end());
  for (const RocPoint& p : sorted)
    if (p.fpr < 0.0 || p.fpr > 1.0 || p.tpr < 0.0 || p.tpr > 1.0)
      throw std::invalid_argument("roc rates must lie in [0, 1]");
  std::sort(sorted.begin(), sorted.end(), [](const RocPoint& a, const RocPoint& b) {
    return a.fpr != b.fpr ? a.fpr < b.fpr : a.tpr < b.tpr;
  });
  if (sorted.front().fpr != 0.0 || sorted.back().fpr != 1.0)
    throw std::invalid_argument("roc curve must span FPR 0 to 1");
  double area = 0.0;
  for (std::size_t i = 1; i < sorted.size(); ++i)
    area += (sorted[i].fpr - sorted[i - 1].fpr) * 0.5 * (sorted[i].tpr + sorted[i - 1].tpr);
  return area;
}

std::vector<KeyBit> decode_key(std::span<const int> truth_bits,
                               std::span<const BatchStats> stats, Strategy strategy,
                               const Thresholds& thresholds) {
  if (truth_bits.size() != stats.size())
    throw std::invalid_argument("decode_key needs one BatchStats per truth bit");
  std::vector<KeyBit> key;
  key.reserve(truth_bits.size());
  for (std::size_t i = 0; i < truth_bits.size(); ++i) {
    if (truth_bits[i] != 0 && truth_bits[i] != 1)
      throw std::invalid_argument("truth bits must be 0 or 1");
    const double score = strategy == Strategy::MeanSignal ? stats[i].mean_signal : stats[i].R;
    const double th =
        strategy == Strategy::MeanSignal ? thresholds.mean_th : thresholds.R_th;
    key.push_back({truth_bits[i], classify(score, th), false});
  }
  return key;
}

KeyBit hybrid_decide(const BatchStats& stats, double mean_th, double R_ref_0, double R_ref_1,
                     double sigma_R, double k) {
  if (!(sigma_R > 0.0) || !(k > 0.0))
    throw std::invalid_argument("hybrid_decide needs sigma_R > 0 and k > 0");
  KeyBit decision;
  decision.decoded = classify(stats.mean_signal, mean_th);
  decision.truth = decision.decoded;
  const double R_ref = decision.decoded == 1 ? R_ref_1 : R_ref_0;
  decision.security_flag = stats.R > R_ref + k * sigma_R || stats.R >= 1.0;
  return decision;
}

void save_roc_csv(std::span<const RocPoint> points, const std::filesystem::path& path,
                  std::span<const std::string> meta) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const std::string& line : meta) out << "# " << line << "\n";
  out << "threshold,fpr,tpr\n";
  out << std::setprecision(10);
  for (const RocPoint& p : points) out << p.threshold << ',' << p.fpr << ',' << p.tpr << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace twb
