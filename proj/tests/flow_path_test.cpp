#include <doctest.h>

#include <cmath>

#include "meanse/flow_path.hpp"
#include "support.hpp"

using namespace meanse;
using namespace meanse::path;
using meanse::testing::max_abs_diff;
using meanse::testing::random_array;

TEST_CASE("path endpoints") {
  Rng rng(1);
  const PathConfig cfg;
  const auto x0 = random_array({1, 6}, rng), y = random_array({1, 6}, rng), x1 = random_array({1, 6}, rng);
  CHECK(sample_xt(x0, y, x1, 1.0, cfg) == x1);
  double gap = 0.0;
  for (std::size_t i = 0; i < 6; ++i) gap += (x1[i] - y[i]) * (x1[i] - y[i]);
  const double bound = cfg.t_floor * (std::sqrt(gap) + cfg.sigma);
  CHECK(max_abs_diff(sample_xt(x0, y, x1, cfg.t_floor, cfg).values(), x0.values()) <= bound);
}

TEST_CASE("hand-evaluated path values") {
  const PathConfig cfg;
  const NdArray x0(ad::Shape{1, 1}, std::vector<double>{0.0});
  const NdArray y(ad::Shape{1, 1}, std::vector<double>{1.0});
  const NdArray x1(ad::Shape{1, 1}, std::vector<double>{1.3});
  const auto xt = sample_xt(x0, y, x1, 0.5, cfg);
  CHECK(xt[0] == doctest::Approx(0.65).epsilon(1e-15));
  CHECK(conditional_velocity(xt, x0, y, 0.5, cfg)[0] == doctest::Approx(1.3).epsilon(1e-14));
  // On the mean the first term vanishes.
  CHECK(conditional_velocity(mean_schedule(x0, y, 0.3), x0, y, 0.3, cfg)[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("finite-difference velocity oracle") {
  Rng rng(7);
  const PathConfig cfg;
  const auto x0 = random_array({1, 4}, rng), y = random_array({1, 4}, rng), x1 = random_array({1, 4}, rng);
  for (double t : {0.01, 0.3, 0.77}) {
    const auto v = conditional_velocity(sample_xt(x0, y, x1, t, cfg), x0, y, t, cfg);
    const auto up = sample_xt(x0, y, x1, t + 1e-6, cfg), dn = sample_xt(x0, y, x1, t - 1e-6, cfg);
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(testing::rel_err((up[i] - dn[i]) / 2e-6, v[i]) <= 1e-6);
  }
}

TEST_CASE("prior draws") {
  Rng rng(8);
  const PathConfig cfg;
  const NdArray y(ad::Shape{1, 1}, std::vector<double>{1.0});
  const int n = 100000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = sample_prior(y, cfg, rng)[0];
    s += v;
    s2 += v * v;
  }
  const double mean = s / n;
  CHECK(std::abs(mean - 1.0) <= 0.01);
  CHECK(std::abs(std::sqrt(s2 / n - mean * mean) - 0.5) <= 0.01);
}

TEST_CASE("conditional velocity is the time derivative of the path") {
  Rng rng(2);
  const PathConfig cfg;
  for (int probe = 0; probe < 50; ++probe) {
    const auto x0 = random_array({1, 5}, rng), y = random_array({1, 5}, rng), x1 = random_array({1, 5}, rng);
    const double t = 0.01 + 0.98 * rng.uniform();
    const auto v = conditional_velocity(sample_xt(x0, y, x1, t, cfg), x0, y, t, cfg);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(v[i] - (x1[i] - x0[i])) <= 1e-8);
  }
}

TEST_CASE("general schedule form agrees with the reduced form") {
  Rng rng(3);
  const PathConfig cfg{0.7, 1e-5};
  const LinearSchedule sched(cfg.sigma);
  for (int probe = 0; probe < 20; ++probe) {
    const auto x0 = random_array({2, 4}, rng), y = random_array({2, 4}, rng);
    const auto x1 = sample_prior(y, cfg, rng);
    const double t = sample_time(rng, cfg);
    const auto xa = sample_xt(x0, y, x1, t, cfg), xb = sample_xt(x0, y, x1, t, sched);
    CHECK(max_abs_diff(xa.values(), xb.values()) <= 1e-12);
    CHECK(max_abs_diff(conditional_velocity(xa, x0, y, t, cfg).values(),
                       conditional_velocity(xa, x0, y, t, sched).values()) <= 1e-9);
  }
}

TEST_CASE("row-batched forms agree with per-row evaluation") {
  Rng rng(4);
  const PathConfig cfg;
  const auto x0 = random_array({3, 4}, rng), y = random_array({3, 4}, rng), x1 = random_array({3, 4}, rng);
  const std::vector<double> t{0.1, 0.5, 1.0};
  const auto xt = sample_xt_rows(x0, y, x1, t, cfg);
  const auto v = conditional_velocity_rows(xt, x0, y, t, cfg);
  for (std::size_t r = 0; r < 3; ++r) {
    auto row = [&](const NdArray& a) {
      NdArray out(ad::Shape{1, 4});
      for (std::size_t c = 0; c < 4; ++c) out[c] = a.at(r, c);
      return out;
    };
    const auto xr = sample_xt(row(x0), row(y), row(x1), t[r], cfg);
    const auto vr = conditional_velocity(xr, row(x0), row(y), t[r], cfg);
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(xt.at(r, c) == xr[c]);
      CHECK(v.at(r, c) == vr[c]);
    }
  }
}

TEST_CASE("Monte-Carlo moments of x_t") {
  Rng rng(5);
  const PathConfig cfg;
  const NdArray x0(ad::Shape{1, 1}, std::vector<double>{0.3});
  const NdArray y(ad::Shape{1, 1}, std::vector<double>{-1.1});
  const double t = 0.6;
  const int n = 20000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = sample_xt(x0, y, sample_prior(y, cfg, rng), t, cfg)[0];
    s += v;
    s2 += v * v;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  const double sd = t * cfg.sigma;
  CHECK(std::abs(mean - ((1 - t) * 0.3 + t * -1.1)) <= 4.0 * sd / std::sqrt(n));
  CHECK(std::abs(std::sqrt(var) - sd) <= 4.0 * sd / std::sqrt(2.0 * n));
}

TEST_CASE("time domain guards") {
  Rng rng(6);
  const PathConfig cfg;
  const auto a = random_array({1, 2}, rng);
  CHECK_THROWS_AS(conditional_velocity(a, a, a, 0.0, cfg), SingularTimeError);
  CHECK_THROWS_AS(conditional_velocity(a, a, a, 1e-6, cfg), SingularTimeError);
  CHECK_THROWS_AS(sample_xt(a, a, a, 1.5, cfg), std::invalid_argument);
  CHECK_THROWS_AS(sample_xt(a, a, a, 0.0, cfg), SingularTimeError);
  CHECK_THROWS_AS(sample_xt(a, random_array({1, 3}, rng), a, 0.5, cfg), ad::ContractError);
  CHECK_THROWS(PathConfig{0.0, 1e-5}.validate());
  CHECK_THROWS(PathConfig{0.5, 0.1}.validate());
  for (int i = 0; i < 10000; ++i) {
    const double t = sample_time(rng, cfg);
    CHECK((t > cfg.t_floor && t <= 1.0));
  }
}

TEST_CASE("schedules") {
  const NdArray x0(ad::Shape{1, 1}, std::vector<double>{2.0});
  const NdArray y(ad::Shape{1, 1}, std::vector<double>{0.0});
  CHECK(mean_schedule(x0, y, 0.0) == x0);
  CHECK(mean_schedule(x0, y, 1.0) == y);
  CHECK(mean_schedule(x0, y, 0.25)[0] == 1.5);
  const PathConfig cfg;
  CHECK(std_schedule(0.0, cfg) == 0.0);
  CHECK(std_schedule(1.0, cfg) == 0.5);
  CHECK(std_schedule(0.4, cfg) == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("a vanishing prior width returns y") {
  Rng rng(9);
  const auto y = random_array({2, 3}, rng);
  const auto x1 = sample_prior(y, PathConfig{1e-300, 1e-5}, rng);
  CHECK(max_abs_diff(x1.values(), y.values()) <= 1e-290);
}

TEST_CASE("on-mean velocity is y minus x0") {
  Rng rng(10);
  const PathConfig cfg;
  const auto x0 = random_array({1, 5}, rng), y = random_array({1, 5}, rng);
  const auto v = conditional_velocity(mean_schedule(x0, y, 0.37), x0, y, 0.37, cfg);
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(v[i] - (y[i] - x0[i])) <= 1e-14);
}
