#include "meanse/network.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "meanse/rng.hpp"

namespace meanse::net {

std::string to_string(Mode mode) { return mode == Mode::flow ? "flow" : "meanflow"; }

Mode mode_from_string(const std::string& name) {
  if (name == "flow") return Mode::flow;
  if (name == "meanflow") return Mode::meanflow;
  throw std::invalid_argument("unknown network mode: " + name);
}

void NetworkConfig::validate() const {
  if (n_bins == 0 || patch_frames == 0 || hidden == 0 || embed_dim == 0)
    throw std::invalid_argument("network dimensions must be positive");
  if (embed_dim % 2 != 0) throw std::invalid_argument("embed_dim must be even");
  if (!(fourier_scale > 0.0) || !std::isfinite(fourier_scale))
    throw std::invalid_argument("fourier_scale must be positive");
}

bool NetworkConfig::same_geometry(const NetworkConfig& o) const {
  return n_bins == o.n_bins && patch_frames == o.patch_frames && hidden == o.hidden &&
         blocks == o.blocks && embed_dim == o.embed_dim;
}

std::size_t NetworkParams::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  throw std::out_of_range("no parameter named " + name);
}

std::size_t NetworkParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& a : arrays) n += a.size();
  return n;
}

namespace {

struct Layout {
  std::vector<std::string> names;
  std::vector<ad::Shape> shapes;
  std::vector<bool> zero;

  void add(std::string name, ad::Shape shape, bool zero_init = false) {
    names.push_back(std::move(name));
    shapes.push_back(std::move(shape));
    zero.push_back(zero_init);
  }
};

// Fixed order; forward() indexes by position.
Layout layout(const NetworkConfig& c, Mode mode) {
  const std::size_t K = c.embed_dim, H = c.hidden, D = c.data_dim();
  Layout l;
  l.add("time.weight", {K, K});
  l.add("time.bias", {K});
  if (mode == Mode::meanflow) {
    l.add("fuse.weight", {K, 2 * K});
    l.add("fuse.bias", {K});
  }
  l.add("input.weight", {H, 2 * D});
  l.add("input.bias", {H});
  for (std::size_t b = 0; b < c.blocks; ++b) {
    const std::string p = "block" + std::to_string(b);
    l.add(p + ".weight", {H, H});
    l.add(p + ".bias", {H});
    l.add(p + ".time.weight", {H, K});
    l.add(p + ".time.bias", {H});
  }
  l.add("output.weight", {D, H}, true);
  l.add("output.bias", {D}, true);
  l.add("skip.weight", {D, 2 * D}, true);
  l.add("skip.bias", {D}, true);
  return l;
}

}  // namespace

VelocityNetwork::VelocityNetwork(NetworkConfig config, Mode mode, std::uint64_t seed)
    : config_(config), mode_(mode) {
  config_.validate();
  Rng freq_rng = Rng::stream(seed, 0);
  const std::size_t half = config_.embed_dim / 2;
  frequencies_ = NdArray(ad::Shape{1, half});
  for (std::size_t i = 0; i < half; ++i) frequencies_[i] = config_.fourier_scale * freq_rng.normal();

  Rng rng = Rng::stream(seed, 1);
  const Layout l = layout(config_, mode_);
  for (std::size_t i = 0; i < l.names.size(); ++i) {
    NdArray a(l.shapes[i]);
    if (!l.zero[i]) {
      // fan-in is the weight's second dimension; biases share their weight's bound
      const bool is_bias = l.shapes[i].size() == 1;
      const std::size_t fan_in = is_bias ? l.shapes[i - 1][1] : l.shapes[i][1];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : a.values()) v = rng.uniform(-bound, bound);
    }
    params_.names.push_back(l.names[i]);
    params_.arrays.push_back(std::move(a));
  }
}

VelocityNetwork::VelocityNetwork(NetworkConfig config, Mode mode, NdArray frequencies, NetworkParams params)
    : config_(config), mode_(mode), frequencies_(std::move(frequencies)), params_(std::move(params)) {
  config_.validate();
  if (frequencies_.size() != config_.embed_dim / 2)
    throw GeometryError("frequency count does not match embed_dim");
  frequencies_ = NdArray(ad::Shape{1, config_.embed_dim / 2},
                         std::vector<double>(frequencies_.values().begin(), frequencies_.values().end()));
  const Layout l = layout(config_, mode_);
  if (l.names != params_.names) throw GeometryError("parameter names do not match the network layout");
  for (std::size_t i = 0; i < l.names.size(); ++i)
    if (params_.arrays[i].shape() != l.shapes[i])
      throw GeometryError("parameter " + l.names[i] + " has shape " + ad::shape_string(params_.arrays[i].shape()) +
                          ", expected " + ad::shape_string(l.shapes[i]));
}

std::vector<Var> VelocityNetwork::bind(Tape& tape, bool track) const {
  std::vector<Var> out;
  out.reserve(params_.arrays.size());
  for (const auto& a : params_.arrays) out.push_back(track ? tape.variable(a) : tape.constant(a));
  return out;
}

Var VelocityNetwork::embed(Tape& tape, std::span<const Var> p, Var s) const {
  Var freq = tape.constant(frequencies_);
  Var angle = ad::scale(ad::matmul(s, freq), 2.0 * std::numbers::pi);
  Var feat = ad::concat_cols(ad::sin(angle), ad::cos(angle));
  return ad::affine(feat, p[0], p[1]);
}

Var VelocityNetwork::forward(Tape& tape, std::span<const Var> p, Var x, Var r, Var t, Var y) const {
  if (p.size() != params_.arrays.size()) throw ad::ContractError("wrong number of bound parameters");
  std::size_t k = 2;
  Var e;
  if (mode_ == Mode::meanflow) {
    Var er = embed(tape, p, r);
    Var et = embed(tape, p, t);
    e = ad::affine(ad::concat_cols(er, et), p[k], p[k + 1]);
    k += 2;
  } else {
    e = embed(tape, p, t);
  }
  Var xy = ad::concat_cols(x, y);
  Var h = ad::silu(ad::affine(xy, p[k], p[k + 1]));
  k += 2;
  for (std::size_t b = 0; b < config_.blocks; ++b, k += 4) {
    Var pre = ad::add(ad::affine(h, p[k], p[k + 1]), ad::affine(e, p[k + 2], p[k + 3]));
    h = ad::add(h, ad::silu(pre));
  }
  return ad::add(ad::affine(h, p[k], p[k + 1]), ad::affine(xy, p[k + 2], p[k + 3]));
}

void VelocityNetwork::check_input(const NdArray& x, const NdArray& y) const {
  const std::size_t D = config_.data_dim();
  if (x.rank() != 2 || x.cols() != D || y.shape() != x.shape())
    throw GeometryError("network input must be (n x " + std::to_string(D) + "), got " +
                        ad::shape_string(x.shape()) + " and " + ad::shape_string(y.shape()));
}

NdArray VelocityNetwork::forward(const NdArray& x, std::span<const double> r, std::span<const double> t,
                                 const NdArray& y) const {
  check_input(x, y);
  const std::size_t n = x.rows();
  if (r.size() != n || t.size() != n) throw ad::ContractError("one (r, t) pair per row required");
  Tape tape(false);
  auto p = bind(tape, false);
  Var rv = tape.constant(NdArray(ad::Shape{n, 1}, std::vector<double>(r.begin(), r.end())));
  Var tv = tape.constant(NdArray(ad::Shape{n, 1}, std::vector<double>(t.begin(), t.end())));
  return forward(tape, p, tape.constant(x.detached()), rv, tv, tape.constant(y.detached())).value().detached();
}

NdArray VelocityNetwork::forward(const NdArray& x, double r, double t, const NdArray& y) const {
  check_input(x, y);
  const std::vector<double> rs(x.rows(), r), ts(x.rows(), t);
  return forward(x, rs, ts, y);
}

NdArray VelocityNetwork::fourier_features(double s) const {
  const std::size_t half = config_.embed_dim / 2;
  NdArray out(ad::Shape{1, config_.embed_dim});
  for (std::size_t i = 0; i < half; ++i) {
    const double a = 2.0 * std::numbers::pi * frequencies_[i] * s;
    out[i] = std::sin(a);
    out[half + i] = std::cos(a);
  }
  return out;
}

NdArray VelocityNetwork::embed_time(double s) const {
  Tape tape(false);
  auto p = bind(tape, false);
  return embed(tape, p, tape.constant(NdArray(ad::Shape{1, 1}, s))).value().detached();
}

NdArray VelocityNetwork::fuse_times(double r, double t) const {
  if (r > t) throw std::invalid_argument("fuse_times requires r <= t");
  if (mode_ == Mode::flow) return embed_time(t);
  Tape tape(false);
  auto p = bind(tape, false);
  Var er = embed(tape, p, tape.constant(NdArray(ad::Shape{1, 1}, r)));
  Var et = embed(tape, p, tape.constant(NdArray(ad::Shape{1, 1}, t)));
  return ad::affine(ad::concat_cols(er, et), p[2], p[3]).value().detached();
}

VelocityNetwork flowse_init(const VelocityNetwork& flow, const NetworkConfig& expected,
                            std::optional<std::span<const double>> expected_frequencies) {
  if (flow.mode() != Mode::flow) throw GeometryError("flowse_init needs a flow-mode network");
  if (!flow.config().same_geometry(expected)) throw GeometryError("flow network geometry differs from target");
  if (expected_frequencies) {
    const auto f = flow.frequencies().values();
    if (expected_frequencies->size() != f.size() ||
        !std::equal(f.begin(), f.end(), expected_frequencies->begin()))
      throw GeometryError("flow network Fourier frequencies differ from target");
  }
  const std::size_t K = flow.config().embed_dim;
  NdArray fuse_w(ad::Shape{K, 2 * K});
  for (std::size_t i = 0; i < K; ++i) fuse_w.at(i, K + i) = 1.0;

  NetworkParams out;
  const auto& src = flow.params();
  for (std::size_t i = 0; i < src.names.size(); ++i) {
    out.names.push_back(src.names[i]);
    out.arrays.push_back(src.arrays[i]);
    if (src.names[i] == "time.bias") {
      out.names.push_back("fuse.weight");
      out.arrays.push_back(fuse_w);
      out.names.push_back("fuse.bias");
      out.arrays.push_back(NdArray(ad::Shape{K}));
    }
  }
  NetworkConfig cfg = flow.config();
  return VelocityNetwork(cfg, Mode::meanflow, flow.frequencies(), std::move(out));
}

}  // namespace meanse::net
