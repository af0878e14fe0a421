#pragma once

// Shared helpers for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "meanse/autodiff.hpp"
#include "meanse/network.hpp"
#include "meanse/rng.hpp"

namespace meanse::testing {

using ad::NdArray;

inline NdArray random_array(ad::Shape shape, Rng& rng, double scale = 1.0) {
  NdArray a(std::move(shape));
  for (auto& v : a.values()) v = scale * rng.normal();
  return a;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

/// |a - b| / max(|a|, |b|, floor).
inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of a scalar function of one coordinate.
inline double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// A small network, quick enough for finite differences.
inline net::NetworkConfig tiny_config() {
  net::NetworkConfig c;
  c.n_bins = 3;
  c.patch_frames = 1;
  c.hidden = 8;
  c.blocks = 2;
  c.embed_dim = 4;
  c.fourier_scale = 1.0;
  return c;
}

/// Randomizes every parameter (the output layers start at zero otherwise).
inline void perturb(net::VelocityNetwork& net, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  for (auto& a : net.params().arrays)
    for (auto& v : a.values()) v += scale * rng.normal();
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("meanse-" + tag + "-" + std::to_string(Rng(std::random_device{}()).next() % 1000000000));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace meanse::testing
