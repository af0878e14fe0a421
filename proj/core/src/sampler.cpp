#include "meanse/sampler.hpp"

#include <stdexcept>

namespace meanse::sampler {

namespace {

void axpy(NdArray& x, double a, const NdArray& d) {
  if (d.shape() != x.shape()) throw net::GeometryError("field output shape differs from its input");
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += a * d[i];
}

void check_nfe(std::size_t nfe) {
  if (nfe == 0) throw std::invalid_argument("nfe must be at least 1");
}

}  // namespace

void SamplerConfig::validate() const {
  check_nfe(nfe);
  if (!(sigma > 0.0)) throw std::invalid_argument("sampler sigma must be positive");
}

FieldFn network_field(const net::VelocityNetwork& net, std::size_t* calls) {
  return [&net, calls](const NdArray& x, double r, double t, const NdArray& y) {
    if (calls) ++*calls;
    return net.forward(x, r, t, y);
  };
}

NdArray euler_integrate(const FieldFn& v, NdArray x, const NdArray& y, std::size_t nfe) {
  check_nfe(nfe);
  const double n = static_cast<double>(nfe);
  for (std::size_t i = nfe; i-- > 0;) {
    const double t = static_cast<double>(i + 1) / n;
    axpy(x, -1.0 / n, v(x, t, t, y));
  }
  return x;
}

NdArray interval_integrate(const FieldFn& u, NdArray x, const NdArray& y, std::size_t nfe) {
  check_nfe(nfe);
  const double n = static_cast<double>(nfe);
  for (std::size_t i = nfe; i-- > 0;) {
    const double r = static_cast<double>(i) / n;
    const double t = static_cast<double>(i + 1) / n;
    axpy(x, r - t, u(x, r, t, y));
  }
  return x;
}

NdArray draw_prior(const NdArray& y, double sigma, Rng& rng) {
  NdArray x1(y.shape());
  for (std::size_t i = 0; i < x1.size(); ++i) x1[i] = y[i] + sigma * rng.normal();
  return x1;
}

NdArray euler_flow_sample(const FieldFn& v, const NdArray& y, const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  return euler_integrate(v, draw_prior(y, cfg.sigma, rng), y, cfg.nfe);
}

NdArray meanse_sample(const FieldFn& u, const NdArray& y, const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  return interval_integrate(u, draw_prior(y, cfg.sigma, rng), y, cfg.nfe);
}

EnhanceResult enhance(const net::VelocityNetwork& net, const frontend::Spectrogram& noisy,
                      const frontend::FeatureConfig& features, const SamplerConfig& cfg, std::uint64_t utterance) {
  cfg.validate();
  const auto& nc = net.config();
  if (noisy.bins != nc.n_bins || features.patch_frames != nc.patch_frames)
    throw net::GeometryError("spectrogram geometry (" + std::to_string(noisy.bins) + " bins, patch " +
                             std::to_string(features.patch_frames) + ") does not match the network (" +
                             std::to_string(nc.n_bins) + " bins, patch " + std::to_string(nc.patch_frames) + ")");
  const NdArray y = frontend::to_rows(noisy, features);
  Rng rng = Rng::stream(cfg.seed, utterance);
  EnhanceResult out;
  const FieldFn field = network_field(net, &out.network_calls);
  const NdArray x0 = net.mode() == net::Mode::flow ? euler_flow_sample(field, y, cfg, rng)
                                                   : meanse_sample(field, y, cfg, rng);
  out.spectrogram = frontend::from_rows(x0, noisy.frames, noisy.bins, features);
  return out;
}

}  // namespace meanse::sampler
