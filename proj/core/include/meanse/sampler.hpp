#pragma once

// Inference on a uniform grid of N intervals [i/N, (i+1)/N], walked from
// t = 1 down to t = 0.
//
//   Euler (instantaneous field):  x <- x - (1/N) v(x, t_i, y)
//   interval (average field):     x <- x + (r_i - t_i) u(x, r_i, t_i, y)
//
// With N = 1 the interval sampler is the one-step map x1 - u(x1, 0, 1, y).

#include <cstdint>
#include <functional>

#include "meanse/autodiff.hpp"
#include "meanse/frontend.hpp"
#include "meanse/network.hpp"
#include "meanse/rng.hpp"

namespace meanse::sampler {

using ad::NdArray;

struct SamplerConfig {
  std::size_t nfe = 1;
  std::uint64_t seed = 0;
  double sigma = 0.5;

  void validate() const;
};

/// Field evaluated with one (r, t) for every row.
using FieldFn = std::function<NdArray(const NdArray& x, double r, double t, const NdArray& y)>;

/// Adapts a network; `calls`, when given, is incremented once per evaluation.
FieldFn network_field(const net::VelocityNetwork& net, std::size_t* calls = nullptr);

/// Deterministic integrators from a given start point x1.
NdArray euler_integrate(const FieldFn& v, NdArray x1, const NdArray& y, std::size_t nfe);
NdArray interval_integrate(const FieldFn& u, NdArray x1, const NdArray& y, std::size_t nfe);

/// x1 = y + sigma * eps.
NdArray draw_prior(const NdArray& y, double sigma, Rng& rng);

/// Draws x1 from `rng`, then integrates. Flow fields are queried with r = t.
NdArray euler_flow_sample(const FieldFn& v, const NdArray& y, const SamplerConfig& cfg, Rng& rng);
NdArray meanse_sample(const FieldFn& u, const NdArray& y, const SamplerConfig& cfg, Rng& rng);

struct EnhanceResult {
  frontend::Spectrogram spectrogram;
  std::size_t network_calls = 0;
};

/// Enhances one utterance. The sampler follows the network mode (flow uses
/// Euler, mean flow the interval sampler). The prior draw comes from
/// Rng::stream(cfg.seed, utterance), so reruns match and utterances differ.
EnhanceResult enhance(const net::VelocityNetwork& net, const frontend::Spectrogram& noisy,
                      const frontend::FeatureConfig& features, const SamplerConfig& cfg, std::uint64_t utterance);

}  // namespace meanse::sampler
