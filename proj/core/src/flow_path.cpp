#include "meanse/flow_path.hpp"

#include <string>

namespace meanse::path {

namespace {

void require_same_shape(const NdArray& a, const NdArray& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ad::ContractError(std::string(what) + ": shape mismatch " + ad::shape_string(a.shape()) + " vs " +
                            ad::shape_string(b.shape()));
  }
}

void require_unit_interval(double t, const char* what) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument(std::string(what) + ": t outside [0, 1]");
}

void require_above_floor(double t, const PathConfig& cfg, const char* what) {
  if (!(t >= cfg.t_floor)) {
    throw SingularTimeError(std::string(what) + ": t=" + std::to_string(t) + " below floor " +
                            std::to_string(cfg.t_floor));
  }
  require_unit_interval(t, what);
}

void require_rows(const NdArray& a, std::span<const double> t, const char* what) {
  if (a.rank() != 2 || a.rows() != t.size()) {
    throw ad::ContractError(std::string(what) + ": expected one time per row");
  }
}

}  // namespace

void PathConfig::validate() const {
  if (!(sigma > 0.0)) throw std::invalid_argument("PathConfig: sigma must be positive");
  if (!(t_floor > 0.0 && t_floor <= 1e-3)) throw std::invalid_argument("PathConfig: t_floor must lie in (0, 1e-3]");
}

NdArray mean_schedule(const NdArray& x0, const NdArray& y, double t) {
  require_same_shape(x0, y, "mean_schedule");
  require_unit_interval(t, "mean_schedule");
  NdArray out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - t) * x0[i] + t * y[i];
  return out;
}

double std_schedule(double t, const PathConfig& cfg) {
  require_unit_interval(t, "std_schedule");
  return t * cfg.sigma;
}

NdArray sample_prior(const NdArray& y, const PathConfig& cfg, Rng& rng) {
  NdArray x1(y.shape());
  for (std::size_t i = 0; i < x1.size(); ++i) x1[i] = y[i] + cfg.sigma * rng.normal();
  return x1;
}

NdArray sample_xt(const NdArray& x0, const NdArray& y, const NdArray& x1, double t, const PathConfig& cfg) {
  require_same_shape(x0, y, "sample_xt");
  require_same_shape(x0, x1, "sample_xt");
  require_above_floor(t, cfg, "sample_xt");
  NdArray out(x0.shape());
  // t (x1 - y) + (1 - t) x0 + t y with the y terms cancelled, so both ends are exact.
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = t * x1[i] + (1.0 - t) * x0[i];
  return out;
}

NdArray conditional_velocity(const NdArray& x_t, const NdArray& x0, const NdArray& y, double t,
                             const PathConfig& cfg) {
  require_same_shape(x_t, x0, "conditional_velocity");
  require_same_shape(x0, y, "conditional_velocity");
  require_above_floor(t, cfg, "conditional_velocity");
  NdArray out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double mu = (1.0 - t) * x0[i] + t * y[i];
    out[i] = (x_t[i] - mu) / t + (y[i] - x0[i]);
  }
  return out;
}

NdArray sample_xt(const NdArray& x0, const NdArray& y, const NdArray& x1, double t, const Schedule& schedule) {
  require_same_shape(x0, y, "sample_xt");
  require_same_shape(x0, x1, "sample_xt");
  const auto [a1, b1] = schedule.mean_coeffs(1.0);
  const auto [a, b] = schedule.mean_coeffs(t);
  const double ratio = schedule.std(t) / schedule.std(1.0);
  NdArray out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double mu1 = a1 * x0[i] + b1 * y[i];
    out[i] = ratio * (x1[i] - mu1) + a * x0[i] + b * y[i];
  }
  return out;
}

NdArray conditional_velocity(const NdArray& x_t, const NdArray& x0, const NdArray& y, double t,
                             const Schedule& schedule) {
  require_same_shape(x_t, x0, "conditional_velocity");
  require_same_shape(x0, y, "conditional_velocity");
  const double s = schedule.std(t);
  if (!(s > 0.0)) throw SingularTimeError("conditional_velocity: sigma_t vanishes");
  const double gain = schedule.std_dt(t) / s;
  const auto [a, b] = schedule.mean_coeffs(t);
  const auto [da, db] = schedule.mean_coeffs_dt(t);
  NdArray out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = gain * (x_t[i] - (a * x0[i] + b * y[i])) + da * x0[i] + db * y[i];
  }
  return out;
}

NdArray sample_xt_rows(const NdArray& x0, const NdArray& y, const NdArray& x1, std::span<const double> t,
                       const PathConfig& cfg) {
  require_same_shape(x0, y, "sample_xt_rows");
  require_same_shape(x0, x1, "sample_xt_rows");
  require_rows(x0, t, "sample_xt_rows");
  const std::size_t cols = x0.cols();
  NdArray out(x0.shape());
  for (std::size_t r = 0; r < t.size(); ++r) {
    require_above_floor(t[r], cfg, "sample_xt_rows");
    const double tr = t[r];
    for (std::size_t c = r * cols; c < (r + 1) * cols; ++c) {
      out[c] = tr * x1[c] + (1.0 - tr) * x0[c];
    }
  }
  return out;
}

NdArray conditional_velocity_rows(const NdArray& x_t, const NdArray& x0, const NdArray& y,
                                  std::span<const double> t, const PathConfig& cfg) {
  require_same_shape(x_t, x0, "conditional_velocity_rows");
  require_same_shape(x0, y, "conditional_velocity_rows");
  require_rows(x0, t, "conditional_velocity_rows");
  const std::size_t cols = x0.cols();
  NdArray out(x0.shape());
  for (std::size_t r = 0; r < t.size(); ++r) {
    require_above_floor(t[r], cfg, "conditional_velocity_rows");
    const double tr = t[r];
    for (std::size_t c = r * cols; c < (r + 1) * cols; ++c) {
      const double mu = (1.0 - tr) * x0[c] + tr * y[c];
      out[c] = (x_t[c] - mu) / tr + (y[c] - x0[c]);
    }
  }
  return out;
}

double sample_time(Rng& rng, const PathConfig& cfg) {
  // 1 - u lies in (0, 1], so t lies in (t_floor, 1].
  return cfg.t_floor + (1.0 - cfg.t_floor) * (1.0 - rng.uniform());
}

PathSample draw(const NdArray& x0, const NdArray& y, const PathConfig& cfg, Rng& rng) {
  PathSample s;
  s.t = sample_time(rng, cfg);
  s.x1 = sample_prior(y, cfg, rng);
  s.x_t = sample_xt(x0, y, s.x1, s.t, cfg);
  s.v_target = conditional_velocity(s.x_t, x0, y, s.t, cfg);
  return s;
}

}  // namespace meanse::path
