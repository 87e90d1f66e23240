#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "twbsim/estimators.hpp"

namespace twb {

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct KeyBit {
  int truth = 0;
  int decoded = 0;
  bool security_flag = false;
};

// Which batch statistic carries the bit.
enum class Strategy { MeanSignal, NoiseReduction };

struct Thresholds {
  double mean_th = 0.0;
  double R_th = 0.0;
};

// Boundary goes to bit 1 (x >= x_th).
int classify(double x, double x_th);

double midpoint_threshold(double x0, double x1);

// Tally scores against a threshold; bit 1 is the positive class.
ConfusionCounts tally_scores(std::span<const double> scores_bit0,
                             std::span<const double> scores_bit1, double threshold);

// (FNR + FPR) / 2, the balanced error under equal priors.
double error_probability(const ConfusionCounts& counts);

// Threshold sweep over all distinct score values plus +/-inf sentinels.
// First point is (0, 0), last is (1, 1); both rates are non-increasing in
// the threshold.
std::vector<RocPoint> roc_curve(std::span<const double> scores_bit0,
                                std::span<const double> scores_bit1);

// Trapezoidal area under the curve. Points may arrive in any order; the
// sorted curve must span FPR 0 to 1.
double auc(std::span<const RocPoint> points);

std::vector<KeyBit> decode_key(std::span<const int> truth_bits,
                               std::span<const BatchStats> stats, Strategy strategy,
                               const Thresholds& thresholds);

// Decode-plus-security rule: the bit comes from the signal mean, the flag
// from R exceeding the decoded bit's reference by k sigma (or reaching 1).
// truth is unknown here and is set equal to decoded; callers that know the
// truth overwrite it.
KeyBit hybrid_decide(const BatchStats& stats, double mean_th, double R_ref_0, double R_ref_1,
                     double sigma_R, double k = 2.0);

// CSV with header threshold,fpr,tpr.
void save_roc_csv(std::span<const RocPoint> points, const std::filesystem::path& path,
                  std::span<const std::string> meta = {});

}  // namespace twb
