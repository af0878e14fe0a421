#pragma once

// Gaussian conditional probability path between clean speech (t = 0) and the
// noisy-speech prior N(y, sigma^2 I) (t = 1).
//
// With mu_t = (1 - t) x0 + t y and sigma_t = t sigma the general expressions
//   x_t = sigma_t / sigma_1 (x1 - mu_1) + mu_t
//   v_t = sigma_t' / sigma_t (x_t - mu_t) + mu_t'
// reduce to
//   x_t = t (x1 - y) + (1 - t) x0 + t y
//   v_t = (x_t - mu_t) / t + (y - x0),
// which for fixed (x0, y, x1) is exactly d x_t / dt = x1 - x0.

#include <span>
#include <stdexcept>

#include "meanse/autodiff.hpp"
#include "meanse/rng.hpp"

namespace meanse::path {

using ad::NdArray;

struct PathConfig {
  double sigma = 0.5;
  double t_floor = 1e-5;

  /// Throws std::invalid_argument unless sigma > 0 and 0 < t_floor <= 1e-3.
  void validate() const;
};

/// t below the floor where sigma_t' / sigma_t = 1 / t blows up.
class SingularTimeError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Mean and standard-deviation schedules of a Gaussian path.
class Schedule {
 public:
  virtual ~Schedule() = default;
  /// Coefficients (a, b) with mu_t = a x0 + b y.
  virtual std::pair<double, double> mean_coeffs(double t) const = 0;
  virtual std::pair<double, double> mean_coeffs_dt(double t) const = 0;
  virtual double std(double t) const = 0;
  virtual double std_dt(double t) const = 0;
};

/// mu_t = (1 - t) x0 + t y, sigma_t = t sigma.
class LinearSchedule final : public Schedule {
 public:
  explicit LinearSchedule(double sigma) : sigma_(sigma) {}
  std::pair<double, double> mean_coeffs(double t) const override { return {1.0 - t, t}; }
  std::pair<double, double> mean_coeffs_dt(double) const override { return {-1.0, 1.0}; }
  double std(double t) const override { return t * sigma_; }
  double std_dt(double) const override { return sigma_; }

 private:
  double sigma_;
};

/// One drawn training tuple for a pair (x0, y).
struct PathSample {
  NdArray x_t;
  double t = 1.0;
  NdArray v_target;
  NdArray x1;
};

NdArray mean_schedule(const NdArray& x0, const NdArray& y, double t);
double std_schedule(double t, const PathConfig& cfg);

/// x1 = y + sigma * eps with eps ~ N(0, I).
NdArray sample_prior(const NdArray& y, const PathConfig& cfg, Rng& rng);

NdArray sample_xt(const NdArray& x0, const NdArray& y, const NdArray& x1, double t, const PathConfig& cfg);
NdArray conditional_velocity(const NdArray& x_t, const NdArray& x0, const NdArray& y, double t,
                             const PathConfig& cfg);

/// General-form variants evaluated through an arbitrary schedule.
NdArray sample_xt(const NdArray& x0, const NdArray& y, const NdArray& x1, double t, const Schedule& schedule);
NdArray conditional_velocity(const NdArray& x_t, const NdArray& x0, const NdArray& y, double t,
                             const Schedule& schedule);

/// Row-batched forms for matrices whose row i belongs to time t[i].
NdArray sample_xt_rows(const NdArray& x0, const NdArray& y, const NdArray& x1, std::span<const double> t,
                       const PathConfig& cfg);
NdArray conditional_velocity_rows(const NdArray& x_t, const NdArray& x0, const NdArray& y,
                                  std::span<const double> t, const PathConfig& cfg);

/// t ~ U(t_floor, 1].
double sample_time(Rng& rng, const PathConfig& cfg);

/// Draws t, x1, x_t and the conditional velocity for one pair.
PathSample draw(const NdArray& x0, const NdArray& y, const PathConfig& cfg, Rng& rng);

}  // namespace meanse::path
