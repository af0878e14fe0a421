#include "meanse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace meanse::metrics {

double si_sdr(std::span<const double> ref, std::span<const double> est) {
  if (ref.size() != est.size()) throw std::invalid_argument("si_sdr: length mismatch");
  double rr = 0.0, er = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    rr += ref[i] * ref[i];
    er += est[i] * ref[i];
  }
  if (!(rr > 0.0)) throw std::domain_error("si_sdr: silent reference");
  const double alpha = er / rr;
  double target = 0.0, resid = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double s = alpha * ref[i];
    const double e = est[i] - s;
    target += s * s;
    resid += e * e;
  }
  if (target == 0.0) return -kSiSdrCap;
  if (resid == 0.0) return kSiSdrCap;
  return std::clamp(10.0 * std::log10(target / resid), -kSiSdrCap, kSiSdrCap);
}

double log_spectral_distance(std::span<const double> ref, std::span<const double> est,
                             const frontend::StftConfig& cfg) {
  if (ref.size() != est.size()) throw std::invalid_argument("log_spectral_distance: length mismatch");
  frontend::Stft stft(cfg);
  const auto a = stft.forward(ref);
  const auto b = stft.forward(est);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = 20.0 * (std::log10(std::max(std::abs(a.data[i]), 1e-8)) -
                             std::log10(std::max(std::abs(b.data[i]), 1e-8)));
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(a.data.size()));
}

MetricRow score_split(const std::string& model, std::size_t nfe, frontend::Split split,
                      std::span<const frontend::Pair* const> pairs, const net::VelocityNetwork* network,
                      const EvalConfig& cfg) {
  MetricRow row{model, nfe, frontend::to_string(split), 0.0, 0.0, pairs.size(), {}};
  frontend::Stft stft(cfg.stft);
  const sampler::SamplerConfig sc{std::max<std::size_t>(nfe, 1), cfg.seed, cfg.sigma};
  for (std::size_t u = 0; u < pairs.size(); ++u) {
    const auto& p = *pairs[u];
    frontend::Waveform est;
    if (network) {
      const auto res = sampler::enhance(*network, stft.forward(p.noisy), cfg.features, sc, u);
      est = stft.inverse(res.spectrogram, p.noisy.size());
    } else {
      est = p.noisy;
    }
    const UtteranceScore s{p.id, si_sdr(p.clean, est), log_spectral_distance(p.clean, est, cfg.stft)};
    row.si_sdr_db += s.si_sdr_db;
    row.lsd_db += s.lsd_db;
    row.utterances.push_back(s);
  }
  if (!pairs.empty()) {
    row.si_sdr_db /= static_cast<double>(pairs.size());
    row.lsd_db /= static_cast<double>(pairs.size());
  }
  return row;
}

std::vector<MetricRow> compare_models(std::span<const ModelEntry> models, const frontend::Corpus& corpus,
                                      std::span<const frontend::Split> splits, std::span<const std::size_t> nfe_list,
                                      const EvalConfig& cfg) {
  cfg.stft.validate();
  for (const auto& m : models) {
    if (!m.network) throw std::invalid_argument("model " + m.name + " has no network");
    const auto& nc = m.network->config();
    if (nc.n_bins != cfg.stft.n_bins() || nc.patch_frames != cfg.features.patch_frames)
      throw net::GeometryError("model " + m.name + " does not match the corpus STFT geometry");
  }
  for (auto n : nfe_list)
    if (n == 0) throw std::invalid_argument("nfe must be at least 1");

  std::vector<MetricRow> rows;
  for (auto split : splits) {
    const auto pairs = corpus.split(split);
    if (cfg.include_noisy) rows.push_back(score_split("noisy", 0, split, pairs, nullptr, cfg));
  }
  for (const auto& m : models)
    for (auto nfe : nfe_list)
      for (auto split : splits) rows.push_back(score_split(m.name, nfe, split, corpus.split(split), m.network, cfg));
  return rows;
}

std::string format_tsv(std::span<const MetricRow> rows) {
  std::ostringstream s;
  s << "model\tnfe\tsplit\tsi_sdr_db\tlsd_db\tn_utts\n";
  char buf[64];
  for (const auto& r : rows) {
    s << r.model << '\t' << r.nfe << '\t' << r.split << '\t';
    std::snprintf(buf, sizeof buf, "%.6f\t%.6f", r.si_sdr_db, r.lsd_db);
    s << buf << '\t' << r.n_utts << '\n';
  }
  return s.str();
}

std::string format_table(std::span<const MetricRow> rows) {
  std::size_t w = 5;
  for (const auto& r : rows) w = std::max(w, r.model.size());
  std::ostringstream s;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %4s  %-5s  %10s  %8s  %6s\n", static_cast<int>(w), "model", "nfe", "split",
                "si_sdr_db", "lsd_db", "n_utts");
  s << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %4zu  %-5s  %10.3f  %8.3f  %6zu\n", static_cast<int>(w), r.model.c_str(),
                  r.nfe, r.split.c_str(), r.si_sdr_db, r.lsd_db, r.n_utts);
    s << buf;
  }
  return s.str();
}

}  // namespace meanse::metrics
