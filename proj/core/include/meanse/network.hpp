#pragma once

// Compact conditional velocity network u(x_t, r, t, y).
//
// Rows are flattened spectrogram patches (P frames x F bins x {re, im}).
//
//   time:   s -> [sin(2 pi f s), cos(2 pi f s)] -> affine          (K)
//   fuse:   [e(r) | e(t)] -> affine                                (K, mean-flow only)
//   input:  h0 = silu(affine([x | y]))                             (H)
//   blocks: h <- h + silu(affine(h) + affine(e))                   (H, L times)
//   output: affine(h) + affine([x | y])                            (D)
//
// In flow mode the fused vector is e(t) and r is ignored, so the same network
// also serves as v(x_t, t, y). The output and skip layers start at zero, so a
// freshly constructed network is the zero field.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "meanse/autodiff.hpp"

namespace meanse::net {

using ad::NdArray;
using ad::Tape;
using ad::Var;

enum class Mode : std::uint8_t { flow = 0, meanflow = 1 };

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& name);

struct NetworkConfig {
  std::size_t n_bins = 64;        ///< STFT bins per frame
  std::size_t patch_frames = 1;   ///< frames per patch
  std::size_t hidden = 256;
  std::size_t blocks = 3;
  std::size_t embed_dim = 128;    ///< K, even
  double fourier_scale = 16.0;

  /// Width of one flattened patch row.
  std::size_t data_dim() const { return patch_frames * n_bins * 2; }
  void validate() const;
  bool same_geometry(const NetworkConfig& other) const;
};

/// Raised when two networks (or a network and a corpus) disagree on shape.
class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered, named trainable arrays.
struct NetworkParams {
  std::vector<std::string> names;
  std::vector<NdArray> arrays;

  std::size_t index_of(const std::string& name) const;
  NdArray& at(const std::string& name) { return arrays[index_of(name)]; }
  const NdArray& at(const std::string& name) const { return arrays[index_of(name)]; }
  std::size_t scalar_count() const;
};

/// Anything that can be evaluated as a field u(x, r, t, y) on a tape.
/// Implemented by VelocityNetwork; tests plug in hand-written stubs.
class Field {
 public:
  virtual ~Field() = default;
  /// Places the trainable arrays on `tape`, tracked when `track` is set.
  virtual std::vector<Var> bind(Tape& tape, bool track) const = 0;
  /// x, y: (n x D); r, t: (n x 1). `params` come from bind() on the same tape.
  virtual Var forward(Tape& tape, std::span<const Var> params, Var x, Var r, Var t, Var y) const = 0;
};

class VelocityNetwork final : public Field {
 public:
  /// Random initialization; frequencies are drawn from N(0, fourier_scale^2).
  VelocityNetwork(NetworkConfig config, Mode mode, std::uint64_t seed);
  /// Reassembles a network from stored parts (checkpoint loading).
  VelocityNetwork(NetworkConfig config, Mode mode, NdArray frequencies, NetworkParams params);

  const NetworkConfig& config() const noexcept { return config_; }
  Mode mode() const noexcept { return mode_; }
  const NdArray& frequencies() const noexcept { return frequencies_; }
  const NetworkParams& params() const noexcept { return params_; }
  NetworkParams& params() noexcept { return params_; }

  /// Bound arrays follow params().names order.
  std::vector<Var> bind(Tape& tape, bool track) const override;
  Var forward(Tape& tape, std::span<const Var> params, Var x, Var r, Var t, Var y) const override;

  /// Plain evaluation with per-row times.
  NdArray forward(const NdArray& x, std::span<const double> r, std::span<const double> t, const NdArray& y) const;
  /// Plain evaluation with one (r, t) for every row.
  NdArray forward(const NdArray& x, double r, double t, const NdArray& y) const;

  /// Pre-linear Fourier features of a scalar time.
  NdArray fourier_features(double s) const;
  /// Time embedding (Fourier features through the shared affine layer).
  NdArray embed_time(double s) const;
  /// Fused (r, t) vector; flow networks return embed_time(t).
  NdArray fuse_times(double r, double t) const;

 private:
  Var embed(Tape& tape, std::span<const Var> params, Var s) const;
  void check_input(const NdArray& x, const NdArray& y) const;

  NetworkConfig config_;
  Mode mode_;
  NdArray frequencies_;
  NetworkParams params_;
};

/// Builds a mean-flow network that reproduces `flow` exactly for every r.
/// The fusion layer is set to weight [0 | I] (e(r) block first, e(t) second)
/// and zero bias; every other array is copied.
///
/// Throws GeometryError when `flow` is not a flow-mode network, when its
/// geometry differs from `expected`, or when `expected_frequencies` is given
/// and differs from the flow network's frozen frequencies.
VelocityNetwork flowse_init(const VelocityNetwork& flow, const NetworkConfig& expected,
                            std::optional<std::span<const double>> expected_frequencies = std::nullopt);

}  // namespace meanse::net
