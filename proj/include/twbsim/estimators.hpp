#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "twbsim/channel.hpp"

namespace twb {

// Per-batch sample moments. Variances are the unbiased (n-1) kind
// throughout; R = Var(m_idler - m_signal) / (<m_idler> + <m_signal>).
struct BatchStats {
  double mean_idler = 0.0;
  double mean_signal = 0.0;
  double fano_idler = 0.0;
  double fano_signal = 0.0;
  double R = 0.0;
  std::size_t batch_size = 0;
};

enum class Field { MeanIdler, MeanSignal, FanoIdler, FanoSignal, R };

double field_value(const BatchStats& stats, Field field);

struct StatSummary {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n_batches = 0;
};

BatchStats batch_stats(std::span<const ShotRecord> shots);

struct BootstrapOptions {
  bool with_replacement = true;  // false: each batch is a distinct-index sample
  int threads = 1;
};

// n_batches resamples of batch_size shot pairs. Pairs are drawn whole, never
// split across arms. One substream per batch, so the result is identical for
// any thread count; rng is advanced once to derive the substream base.
std::vector<BatchStats> bootstrap_batches(const Dataset& dataset, std::size_t batch_size,
                                          std::size_t n_batches, Rng& rng,
                                          const BootstrapOptions& options = {});

// Contiguous split into n_parts equal batches (remainder shots dropped).
std::vector<BatchStats> disjoint_batches(const Dataset& dataset, std::size_t n_parts);

StatSummary summarize(std::span<const BatchStats> stats, Field field);

// Delta-method standard error of the R estimate over `shots`, from the
// sample's own fourth moment of the arm difference and its covariance with
// the shot-noise level.
double r_standard_error(std::span<const ShotRecord> shots);

// CSV with header batch,mean_i,mean_s,fano_i,fano_s,R.
void save_batch_csv(std::span<const BatchStats> stats, const std::filesystem::path& path,
                    std::span<const std::string> meta = {});

}  // namespace twb
