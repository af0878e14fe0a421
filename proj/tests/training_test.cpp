#include <doctest.h>

#include <cmath>

#include "meanse/training.hpp"
#include "support.hpp"

using namespace meanse;
using namespace meanse::train;
using meanse::testing::max_abs_diff;
using meanse::testing::random_array;
using meanse::testing::tiny_config;

namespace {

Batch random_batch(std::size_t rows, std::uint64_t seed) {
  Rng rng(seed);
  return {random_array({rows, 6}, rng, 0.5), random_array({rows, 6}, rng, 0.5)};
}

net::VelocityNetwork perturbed(net::Mode mode, std::uint64_t seed) {
  net::VelocityNetwork n(tiny_config(), mode, seed);
  testing::perturb(n, seed + 100);
  return n;
}

double loss_value(const net::VelocityNetwork& net, const Batch& b, std::uint64_t seed, double ratio, double width,
                  bool meanflow) {
  Tape tape(false);
  const auto params = net.bind(tape, false);
  Rng rng(seed);
  const path::PathConfig pc;
  return (meanflow ? mf_loss(tape, net, params, b, rng, pc, ratio, width) : cfm_loss(tape, net, params, b, rng, pc))
      .value()
      .item();
}

TrainData small_data() {
  // Clean rows are a fixed linear function of the noisy rows.
  Rng rng(9);
  TrainData d{{NdArray(ad::Shape{64, 6}), random_array({64, 6}, rng, 0.5)},
              {NdArray(ad::Shape{16, 6}), random_array({16, 6}, rng, 0.5)}};
  for (auto* b : {&d.train, &d.val})
    for (std::size_t i = 0; i < b->y.size(); ++i) b->x0[i] = 0.6 * b->y[i];
  return d;
}

TrainConfig small_cfg() {
  TrainConfig c;
  c.batch_size = 16;
  c.steps = 60;
  c.val_every = 20;
  c.lr_scratch = 3e-3;
  c.lr_finetune = 1e-3;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("flow ratio one reduces the mean-flow loss to flow matching") {
  const auto net = perturbed(net::Mode::meanflow, 1);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto b = random_batch(8, s);
    CHECK(std::abs(loss_value(net, b, s, 1.0, 1.0, true) - loss_value(net, b, s, 1.0, 1.0, false)) <= 1e-10);
  }
}

TEST_CASE("interval sampling respects the width bound and the flow ratio") {
  const path::PathConfig pc;
  Rng rng(2);
  for (double w : {0.2, 0.6, 1.0}) {
    std::size_t collapsed = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      const auto iv = sample_interval(rng, 0.75, w, pc);
      REQUIRE(iv.r >= 0.0);
      REQUIRE(iv.r <= iv.t);
      REQUIRE(iv.t - iv.r <= w);
      collapsed += iv.collapsed();
    }
    CHECK(std::abs(static_cast<double>(collapsed) / n - 0.75) < 0.02);
  }
  CHECK(sample_interval(rng, 1.0, 1.0, pc).collapsed());
}

TEST_CASE("mean-flow target matches a finite-difference total derivative") {
  const auto net = perturbed(net::Mode::meanflow, 3);
  Rng rng(3);
  const auto x = random_array({4, 6}, rng), y = random_array({4, 6}, rng), v = random_array({4, 6}, rng);
  const std::vector<double> r{0.1, 0.3, 0.5, 0.7}, t{0.6, 0.9, 0.5, 0.95};
  const auto target = mf_target(net, net.params().arrays, x, r, t, y, v);
  const double h = 1e-6;
  auto shifted = [&](double eps) {
    NdArray xs = x;
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] += eps * v[i];
    std::vector<double> ts = t;
    for (auto& ti : ts) ti += eps;
    return net.forward(xs, r, ts, y);
  };
  const auto up = shifted(h), dn = shifted(-h);
  for (std::size_t row = 0; row < 4; ++row)
    for (std::size_t c = 0; c < 6; ++c) {
      const std::size_t i = row * 6 + c;
      const double dudt = (up[i] - dn[i]) / (2 * h);
      const double expected = row == 2 ? v[i] : v[i] - (t[row] - r[row]) * dudt;
      CHECK(std::abs(target[i] - expected) <= 1e-6);
    }
}

TEST_CASE("no gradient flows through the mean-flow target") {
  // d/dtheta of the loss must equal the gradient of ||u_theta - T||^2 / n with T frozen.
  const auto net = perturbed(net::Mode::meanflow, 4);
  const auto b = random_batch(6, 4);
  const path::PathConfig pc;

  Tape tape(true);
  const auto params = net.bind(tape, true);
  Rng rng(11);
  Var loss = mf_loss(tape, net, params, b, rng, pc, 0.0, 1.0);
  tape.backward(loss);

  // Rebuild the same draws to freeze the target.
  Rng replay(11);
  const std::size_t n = b.rows();
  const auto x1 = path::sample_prior(b.y, pc, replay);
  std::vector<double> t(n), r(n);
  for (auto& ti : t) ti = path::sample_time(replay, pc);
  for (std::size_t i = 0; i < n; ++i) {
    replay.uniform();  // flow-ratio coin
    r[i] = replay.uniform(std::max(0.0, t[i] - 1.0), t[i]);
  }
  const auto xt = path::sample_xt_rows(b.x0, b.y, x1, t, pc);
  const auto v = path::conditional_velocity_rows(xt, b.x0, b.y, t, pc);
  const auto frozen = mf_target(net, net.params().arrays, xt, r, t, b.y, v);

  const auto reference = ad::grad(
      [&](Tape& tp, std::span<const Var> p) {
        Var u = net.forward(tp, p, tp.constant(xt), tp.constant(NdArray(ad::Shape{n, 1}, r)),
                            tp.constant(NdArray(ad::Shape{n, 1}, t)), tp.constant(b.y));
        return scale(sum(square(sub(u, tp.constant(frozen)))), 1.0 / static_cast<double>(n));
      },
      net.params().arrays);
  for (std::size_t k = 0; k < params.size(); ++k)
    CHECK(max_abs_diff(tape.grad(params[k]).values(), reference[k].values()) <= 1e-10);
}

TEST_CASE("AdamW matches a hand-computed update") {
  net::NetworkParams p{{"w"}, {NdArray(ad::Shape{2}, std::vector<double>{1.0, -2.0})}};
  AdamW opt(p, 0.1, 0.01);
  const std::vector<NdArray> g{NdArray(ad::Shape{2}, std::vector<double>{0.5, 0.0})};
  opt.step(p, g);
  // Step one: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps).
  CHECK(p.arrays[0][0] == doctest::Approx(1.0 * (1 - 0.1 * 0.01) - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  CHECK(p.arrays[0][1] == doctest::Approx(-2.0 * (1 - 0.1 * 0.01)).epsilon(1e-14));
  CHECK(opt.steps() == 1);
}

TEST_CASE("flow training lowers the validation loss and is deterministic") {
  const auto data = small_data();
  const auto cfg = small_cfg();
  std::vector<MetricsRow> rows;
  const auto a = train::train(net::Mode::flow, data, cfg, tiny_config(), {}, std::nullopt, nullptr,
                       [&](const MetricsRow& r) { rows.push_back(r); });
  REQUIRE(rows.size() == 3);
  CHECK(rows.back().val_loss < rows.front().val_loss);
  CHECK(a.reports.size() == 1);
  CHECK(a.final.meta.stage == -1);

  const auto b = train::train(net::Mode::flow, data, cfg, tiny_config(), {});
  CHECK(ckpt::serialize(a.final) == ckpt::serialize(b.final));
}

TEST_CASE("curriculum stages respect their widths") {
  const auto data = small_data();
  auto cfg = small_cfg();
  const auto flow = train::train(net::Mode::flow, data, cfg, tiny_config(), {});
  CurriculumSchedule sched;
  sched.steps_per_stage = 10;
  cfg.val_every = 5;
  const auto mean = train::train(net::Mode::meanflow, data, cfg, tiny_config(), {}, sched, &flow.final);
  REQUIRE(mean.stages.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(mean.reports[i].intervals.max_width <= sched.stages[i]);
    CHECK(mean.stages[i].meta.stage == static_cast<int>(i));
    CHECK(mean.stages[i].meta.max_width == sched.stages[i]);
    CHECK(mean.stages[i].network.mode() == net::Mode::meanflow);
  }
  CHECK_THROWS(train::train(net::Mode::meanflow, data, cfg, tiny_config(), {}, sched, nullptr));
}

TEST_CASE("the divergence guard trips on runaway training") {
  const auto data = small_data();
  auto cfg = small_cfg();
  cfg.lr_scratch = 1e3;
  cfg.divergence_factor = 10.0;
  cfg.divergence_patience = 3;
  cfg.steps = 200;
  CHECK_THROWS_AS(train::train(net::Mode::flow, data, cfg, tiny_config(), {}), DivergenceError);
}

TEST_CASE("configuration validation") {
  TrainConfig c;
  c.flow_ratio = 1.5;
  CHECK_THROWS(c.validate());
  CurriculumSchedule s;
  s.stages = {0.2, 0.1, 1.0};
  CHECK_THROWS(s.validate());
  s.stages = {0.5, 0.9};
  CHECK_THROWS(s.validate());
}

namespace {

// Stub fields without parameters; outputs may carry hand-written tangents.
class StubField final : public net::Field {
 public:
  using Fn = std::function<NdArray(const NdArray& x, const NdArray& r, const NdArray& t)>;
  explicit StubField(Fn fn) : fn_(std::move(fn)) {}
  std::vector<Var> bind(Tape&, bool) const override { return {}; }
  Var forward(Tape& tape, std::span<const Var>, Var x, Var r, Var t, Var) const override {
    return tape.constant(fn_(x.value(), r.value(), t.value()));
  }

 private:
  Fn fn_;
};

NdArray column(std::initializer_list<double> v) { return NdArray(ad::Shape{v.size(), 1}, std::vector<double>(v)); }

// u = a x, with the matching tangent a dx.
StubField linear_stub(double a) {
  return StubField([a](const NdArray& x, const NdArray&, const NdArray&) {
    NdArray out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i];
    if (x.has_tangent()) {
      std::vector<double> d(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) d[i] = a * x.tangent()[i];
      out.set_tangent(std::move(d));
    }
    return out;
  });
}

// u = x / t row-wise; the exact field of the path when x0 = y = 0.
StubField ratio_stub() {
  return StubField([](const NdArray& x, const NdArray&, const NdArray& t) {
    const std::size_t c = x.cols();
    NdArray out(x.shape());
    std::vector<double> d(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double ti = t[i / c];
      out[i] = x[i] / ti;
      if (x.has_tangent() || t.has_tangent()) {
        const double dx = x.has_tangent() ? x.tangent()[i] : 0.0;
        const double dt = t.has_tangent() ? t.tangent()[i / c] : 0.0;
        d[i] = dx / ti - x[i] * dt / (ti * ti);
      }
    }
    if (x.has_tangent() || t.has_tangent()) out.set_tangent(std::move(d));
    return out;
  });
}

double stub_loss(const net::Field& f, const Batch& b, std::uint64_t seed, double ratio, bool meanflow) {
  Tape tape(false);
  Rng rng(seed);
  const path::PathConfig pc;
  return (meanflow ? mf_loss(tape, f, {}, b, rng, pc, ratio, 1.0) : cfm_loss(tape, f, {}, b, rng, pc)).value().item();
}

}  // namespace

TEST_CASE("mean-flow targets of hand-differentiated stubs") {
  const NdArray one(ad::Shape{1, 1}, std::vector<double>{1.0});
  const std::vector<double> r{0.3}, t{0.8};
  // u = 2x, v = 1: 1 - 0.5 * 2 = 0
  CHECK(mf_target(linear_stub(2.0), {}, one, r, t, one, one)[0] == doctest::Approx(0.0).epsilon(1e-15));

  const StubField time_only([](const NdArray&, const NdArray&, const NdArray& tt) {
    NdArray out = tt.detached();
    out.set_tangent(tt.tangent_array());
    return out;
  });
  CHECK(mf_target(time_only, {}, one, r, t, one, one)[0] == doctest::Approx(1.0 - 0.5).epsilon(1e-15));
  CHECK(mf_target(time_only, {}, one, t, t, one, one)[0] == 1.0);
}

TEST_CASE("losses vanish for fields that match their targets") {
  const Batch zero{NdArray(ad::Shape{5, 3}), NdArray(ad::Shape{5, 3})};
  const auto stub = ratio_stub();
  CHECK(stub_loss(stub, zero, 1, 0.0, false) <= 1e-24);
  CHECK(stub_loss(stub, zero, 2, 0.0, true) <= 1e-24);
  CHECK(stub_loss(stub, zero, 3, 0.75, true) <= 1e-24);
}

TEST_CASE("zero field flow-matching loss is the squared target") {
  const StubField zero([](const NdArray& x, const NdArray&, const NdArray&) { return NdArray(x.shape()); });
  const Batch b{NdArray(ad::Shape{1, 1}, std::vector<double>{0.4}), NdArray(ad::Shape{1, 1}, std::vector<double>{-0.2})};
  const path::PathConfig pc;
  Rng replay(21);
  const auto x1 = path::sample_prior(b.y, pc, replay);
  const double t = path::sample_time(replay, pc);
  const double v = path::conditional_velocity(path::sample_xt(b.x0, b.y, x1, t, pc), b.x0, b.y, t, pc)[0];
  CHECK(stub_loss(zero, b, 21, 1.0, false) == doctest::Approx(v * v).epsilon(1e-12));
}

TEST_CASE("losses are non-negative") {
  const auto net = perturbed(net::Mode::meanflow, 6);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto b = random_batch(4, 1000 + s);
    CHECK(loss_value(net, b, s, 0.0, 1.0, false) >= 0.0);
    CHECK(loss_value(net, b, s, 0.5, 0.6, true) >= 0.0);
  }
}

TEST_CASE("interval sampler statistics at 1e5 draws") {
  const path::PathConfig pc;
  Rng rng(31);
  const int n = 100000;
  double widest = 0.0;
  std::size_t collapsed = 0;
  for (int i = 0; i < n; ++i) {
    const auto iv = sample_interval(rng, 0.0, 0.2, pc);
    widest = std::max(widest, iv.t - iv.r);
    collapsed += iv.collapsed();
  }
  CHECK(widest <= 0.2);
  CHECK(collapsed == 0);
  collapsed = 0;
  for (int i = 0; i < n; ++i) collapsed += sample_interval(rng, 0.75, 1.0, pc).collapsed();
  CHECK(std::abs(static_cast<double>(collapsed) / n - 0.75) <= 0.01);
  for (int i = 0; i < 1000; ++i) CHECK(sample_interval(rng, 1.0, 0.4, pc).collapsed());
}

TEST_CASE("flow training fits a single pair") {
  Rng rng(41);
  const auto x0 = random_array({1, 6}, rng, 0.5), y = random_array({1, 6}, rng, 0.5);
  TrainData d{{NdArray(ad::Shape{32, 6}), NdArray(ad::Shape{32, 6})}, {NdArray(ad::Shape{64, 6}), NdArray(ad::Shape{64, 6})}};
  for (auto* b : {&d.train, &d.val})
    for (std::size_t r = 0; r < b->rows(); ++r)
      for (std::size_t c = 0; c < 6; ++c) {
        b->x0.at(r, c) = x0[c];
        b->y.at(r, c) = y[c];
      }
  auto cfg = small_cfg();
  cfg.steps = 600;
  cfg.val_every = 600;
  cfg.lr_scratch = 1e-2;
  cfg.batch_size = 32;
  cfg.val_rows = 64;
  auto geo = tiny_config();
  geo.hidden = 32;
  const auto untrained = net::VelocityNetwork(geo, net::Mode::flow, cfg.seed);
  std::vector<MetricsRow> rows;
  train::train(net::Mode::flow, d, cfg, geo, {}, std::nullopt, nullptr, [&](const MetricsRow& r) { rows.push_back(r); });
  const double before = [&] {
    Tape tape(false);
    const auto p = untrained.bind(tape, false);
    Rng vr(Rng::mix(Rng::mix(cfg.seed, 1), 2));
    return cfm_loss(tape, untrained, p, d.val, vr, cfg.path()).value().item();
  }();
  REQUIRE(rows.size() == 1);
  CHECK(rows.back().val_loss * 10.0 <= before);
}

TEST_CASE("mean-flow training from scratch with no flow samples terminates") {
  const auto data = small_data();
  auto cfg = small_cfg();
  cfg.flow_ratio = 0.0;
  bool finished = false;
  try {
    const auto res = train::train(net::Mode::meanflow, data, cfg, tiny_config(), {});
    finished = res.stages.size() == 1;
  } catch (const DivergenceError& e) {
    finished = e.flow_ratio() == 0.0;
  }
  CHECK(finished);
}
