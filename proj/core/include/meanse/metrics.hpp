#pragma once

// Intrusive quality metrics and model comparison reports.

#include <span>
#include <string>
#include <vector>

#include "meanse/frontend.hpp"
#include "meanse/network.hpp"
#include "meanse/sampler.hpp"

namespace meanse::metrics {

/// Reported values are clamped to [-kSiSdrCap, kSiSdrCap].
inline constexpr double kSiSdrCap = 100.0;

/// Scale-invariant SDR in dB. Throws std::domain_error for a silent reference.
double si_sdr(std::span<const double> reference, std::span<const double> estimate);

/// RMS over frames and bins of 20 (log10 |S_ref| - log10 |S_est|), magnitudes
/// floored at 1e-8.
double log_spectral_distance(std::span<const double> reference, std::span<const double> estimate,
                             const frontend::StftConfig& cfg);

struct UtteranceScore {
  std::string id;
  double si_sdr_db = 0.0;
  double lsd_db = 0.0;
};

struct MetricRow {
  std::string model;
  std::size_t nfe = 0;  ///< 0 for the unprocessed input
  std::string split;
  double si_sdr_db = 0.0;  ///< arithmetic mean of the per-utterance values
  double lsd_db = 0.0;
  std::size_t n_utts = 0;
  std::vector<UtteranceScore> utterances;
};

struct ModelEntry {
  std::string name;
  const net::VelocityNetwork* network = nullptr;
};

struct EvalConfig {
  frontend::StftConfig stft;
  frontend::FeatureConfig features;
  double sigma = 0.5;
  std::uint64_t seed = 7;
  /// Adds a "noisy" row per split scoring the input itself.
  bool include_noisy = false;
};

/// One row per (model, nfe, split), in that nesting order, noisy rows first.
/// Utterance seeds depend only on the utterance position inside its split,
/// so every model sees the same prior draws.
std::vector<MetricRow> compare_models(std::span<const ModelEntry> models, const frontend::Corpus& corpus,
                                      std::span<const frontend::Split> splits, std::span<const std::size_t> nfe_list,
                                      const EvalConfig& cfg);

MetricRow score_split(const std::string& model, std::size_t nfe, frontend::Split split,
                      std::span<const frontend::Pair* const> pairs, const net::VelocityNetwork* network,
                      const EvalConfig& cfg);

/// Tab-separated: model, nfe, split, si_sdr_db, lsd_db, n_utts.
std::string format_tsv(std::span<const MetricRow> rows);
/// Column-aligned text table of the same fields.
std::string format_table(std::span<const MetricRow> rows);

}  // namespace meanse::metrics
