#include "meanse/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace meanse::train {

namespace {

NdArray column(std::span<const double> v) { return NdArray(ad::Shape{v.size(), 1}, std::vector<double>(v.begin(), v.end())); }

double frobenius(const NdArray& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return std::sqrt(s);
}

NdArray take_rows(const NdArray& a, std::span<const std::size_t> rows) {
  const std::size_t c = a.cols();
  NdArray out(ad::Shape{rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(a.data() + rows[i] * c, c, out.data() + i * c);
  return out;
}

Batch head_rows(const Batch& b, std::size_t n) {
  n = std::min(n, b.rows());
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return {take_rows(b.x0, idx), take_rows(b.y, idx)};
}

void check_batch(const Batch& b) {
  if (b.x0.rank() != 2 || b.x0.shape() != b.y.shape()) throw ad::ContractError("batch x0 and y must be equal-shape matrices");
  if (b.rows() == 0) throw ad::ContractError("empty batch");
}

// ||field(x_t, r, t, y) - target||^2 summed, divided by the row count.
// The target enters as a tape constant, which reverse mode never differentiates.
Var regression(Tape& tape, const net::Field& field, std::span<const Var> params, const NdArray& x_t,
               std::span<const double> r, std::span<const double> t, const NdArray& y, const NdArray& target) {
  try {
    Var out = field.forward(tape, params, tape.constant(x_t), tape.constant(column(r)), tape.constant(column(t)),
                            tape.constant(y));
    Var diff = ad::sub(out, tape.constant(target));
    return ad::scale(ad::sum(ad::square(diff)), 1.0 / static_cast<double>(x_t.rows()));
  } catch (const ad::NumericError& e) {
    throw LossError(e.what(), std::vector<double>(t.begin(), t.end()), frobenius(target));
  }
}

struct PathDraw {
  NdArray x_t;
  NdArray v;
  std::vector<double> t;
};

PathDraw draw_path(const Batch& batch, Rng& rng, const path::PathConfig& cfg) {
  PathDraw d;
  const NdArray x1 = path::sample_prior(batch.y, cfg, rng);
  d.t.resize(batch.rows());
  for (auto& t : d.t) t = path::sample_time(rng, cfg);
  d.x_t = path::sample_xt_rows(batch.x0, batch.y, x1, d.t, cfg);
  d.v = path::conditional_velocity_rows(d.x_t, batch.x0, batch.y, d.t, cfg);
  return d;
}

TimeInterval interval_given_t(Rng& rng, double t, double flow_ratio, double max_width) {
  const double coin = rng.uniform();
  if (coin < flow_ratio) return {t, t};
  const double lo = std::max(0.0, t - max_width);
  return {lo + (t - lo) * rng.uniform(), t};
}

}  // namespace

void CurriculumSchedule::validate() const {
  if (stages.empty()) throw std::invalid_argument("curriculum needs at least one stage");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (!(stages[i] > 0.0 && stages[i] <= 1.0)) throw std::invalid_argument("curriculum widths must lie in (0, 1]");
    if (i > 0 && !(stages[i] > stages[i - 1])) throw std::invalid_argument("curriculum widths must increase strictly");
  }
  if (stages.back() != 1.0) throw std::invalid_argument("last curriculum width must be 1");
  if (steps_per_stage == 0) throw std::invalid_argument("steps_per_stage must be positive");
}

void TrainConfig::validate() const {
  path().validate();
  if (!(flow_ratio >= 0.0 && flow_ratio <= 1.0)) throw std::invalid_argument("flow_ratio must lie in [0, 1]");
  if (!(lr_scratch >= 0.0) || !(lr_finetune >= 0.0)) throw std::invalid_argument("learning rates must be non-negative");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (steps == 0) throw std::invalid_argument("steps must be positive");
  if (val_every == 0 || val_rows == 0) throw std::invalid_argument("val_every and val_rows must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0))
    throw std::invalid_argument("invalid Adam hyperparameters");
  if (!(divergence_factor > 1.0) || divergence_patience == 0) throw std::invalid_argument("invalid divergence guard");
}

void IntervalStats::merge(const IntervalStats& o) {
  max_width = std::max(max_width, o.max_width);
  collapsed += o.collapsed;
  spread += o.spread;
}

LossError::LossError(const std::string& what, std::vector<double> t, double target_norm)
    : std::runtime_error([&] {
        std::ostringstream s;
        s << "non-finite loss (" << what << "); target norm " << target_norm << ", t =";
        for (std::size_t i = 0; i < std::min<std::size_t>(t.size(), 8); ++i) s << ' ' << t[i];
        if (t.size() > 8) s << " ...";
        return s.str();
      }()),
      t_(std::move(t)),
      target_norm_(target_norm) {}

DivergenceError::DivergenceError(const std::string& reason, int stage, double flow_ratio, std::size_t step)
    : std::runtime_error("training diverged at stage " + std::to_string(stage) + ", flow ratio " +
                         std::to_string(flow_ratio) + ", step " + std::to_string(step) + ": " + reason),
      stage_(stage),
      flow_ratio_(flow_ratio),
      step_(step) {}

TimeInterval sample_interval(Rng& rng, double flow_ratio, double max_width, const path::PathConfig& cfg) {
  if (!(max_width > 0.0 && max_width <= 1.0)) throw std::invalid_argument("max_width must lie in (0, 1]");
  const double t = path::sample_time(rng, cfg);
  return interval_given_t(rng, t, flow_ratio, max_width);
}

Var cfm_loss(Tape& tape, const net::Field& field, std::span<const Var> params, const Batch& batch, Rng& rng,
             const path::PathConfig& cfg) {
  check_batch(batch);
  const PathDraw d = draw_path(batch, rng, cfg);
  return regression(tape, field, params, d.x_t, d.t, d.t, batch.y, d.v);
}

NdArray mf_target(const net::Field& field, std::span<const NdArray> param_values, const NdArray& x_t,
                  std::span<const double> r, std::span<const double> t, const NdArray& y, const NdArray& v) {
  const std::size_t n = x_t.rows();
  if (r.size() != n || t.size() != n || v.shape() != x_t.shape() || y.shape() != x_t.shape())
    throw ad::ContractError("mf_target: inconsistent row counts or shapes");
  std::vector<std::size_t> spread;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(r[i] >= 0.0 && r[i] <= t[i] && t[i] <= 1.0)) throw std::invalid_argument("mf_target: need 0 <= r <= t <= 1");
    if (r[i] < t[i]) spread.push_back(i);
  }
  NdArray target = v.detached();
  if (spread.empty()) return target;

  // Only rows with r < t need the directional derivative.
  Tape tape(false);
  std::vector<Var> p;
  p.reserve(param_values.size());
  for (const auto& a : param_values) p.push_back(tape.constant(a.detached()));
  NdArray xs = take_rows(x_t, spread);
  const NdArray vs = take_rows(v, spread);
  xs.set_tangent(vs);
  std::vector<double> rs, ts;
  for (auto i : spread) {
    rs.push_back(r[i]);
    ts.push_back(t[i]);
  }
  NdArray tcol = column(ts);
  tcol.set_tangent(std::vector<double>(ts.size(), 1.0));
  const Var out = field.forward(tape, p, tape.constant(std::move(xs)), tape.constant(column(rs)),
                                tape.constant(std::move(tcol)), tape.constant(take_rows(y, spread)));
  const auto du = out.value().tangent();
  const std::size_t c = x_t.cols();
  for (std::size_t k = 0; k < spread.size(); ++k) {
    const std::size_t i = spread[k];
    const double w = t[i] - r[i];
    for (std::size_t j = 0; j < c; ++j) target[i * c + j] = v[i * c + j] - w * du[k * c + j];
  }
  return target;
}

Var mf_loss(Tape& tape, const net::Field& field, std::span<const Var> params, const Batch& batch, Rng& rng,
            const path::PathConfig& cfg, double flow_ratio, double max_width, IntervalStats* stats) {
  check_batch(batch);
  if (!(max_width > 0.0 && max_width <= 1.0)) throw std::invalid_argument("max_width must lie in (0, 1]");
  const PathDraw d = draw_path(batch, rng, cfg);
  std::vector<double> r(d.t.size());
  IntervalStats local;
  for (std::size_t i = 0; i < d.t.size(); ++i) {
    r[i] = interval_given_t(rng, d.t[i], flow_ratio, max_width).r;
    if (r[i] == d.t[i]) {
      ++local.collapsed;
    } else {
      ++local.spread;
      local.max_width = std::max(local.max_width, d.t[i] - r[i]);
    }
  }
  if (stats) stats->merge(local);

  std::vector<NdArray> values;
  values.reserve(params.size());
  for (Var p : params) values.push_back(p.value().detached());
  NdArray target;
  try {
    target = mf_target(field, values, d.x_t, r, d.t, batch.y, d.v);
  } catch (const ad::NumericError& e) {
    throw LossError(e.what(), d.t, frobenius(d.v));
  }
  return regression(tape, field, params, d.x_t, r, d.t, batch.y, target);
}

AdamW::AdamW(const net::NetworkParams& like, double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& a : like.arrays) {
    m_.emplace_back(a.size(), 0.0);
    v_.emplace_back(a.size(), 0.0);
  }
}

void AdamW::step(net::NetworkParams& params, std::span<const NdArray> grads) {
  if (grads.size() != params.arrays.size()) throw ad::ContractError("AdamW: one gradient per parameter required");
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < grads.size(); ++k) {
    auto p = params.arrays[k].values();
    const auto g = grads[k].values();
    if (g.size() != p.size()) throw ad::ContractError("AdamW: gradient shape mismatch");
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] *= 1.0 - lr_ * wd_;
      m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
      v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

std::string metrics_header() { return "step\tstage\tloss\tval_loss\twall_ms\n"; }

std::string format_metrics(const MetricsRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu\t%d\t%.9e\t%.9e\t%.1f\n", row.step, row.stage, row.loss, row.val_loss,
                row.wall_ms);
  return buf;
}

namespace {

struct StagePlan {
  int stage;
  double width;
  std::size_t steps;
  double lr;
  bool meanflow;
};

class Trainer {
 public:
  Trainer(const TrainData& data, const TrainConfig& cfg, const MetricsSink& sink)
      : data_(data), cfg_(cfg), sink_(sink), val_(head_rows(data.val, cfg.val_rows)),
        start_(std::chrono::steady_clock::now()) {}

  // Runs one stage in place on `net` and leaves the selected parameters there.
  StageReport run(net::VelocityNetwork& net, const StagePlan& plan) {
    const std::uint64_t base = Rng::mix(cfg_.seed, static_cast<std::uint64_t>(plan.stage + 2));
    Rng batch_rng = Rng::stream(base, 0);
    Rng loss_rng = Rng::stream(base, 1);
    const std::uint64_t val_seed = Rng::mix(base, 2);
    const auto pc = cfg_.path();

    AdamW opt(net.params(), plan.lr, cfg_.weight_decay, cfg_.beta1, cfg_.beta2, cfg_.adam_eps);
    StageReport rep;
    rep.stage = plan.stage;
    rep.width = plan.width;
    rep.steps = plan.steps;

    net::NetworkParams best = net.params();
    rep.best_val_loss = validate(net, plan, val_seed);
    rep.best_step = 0;

    double first_loss = 0.0, running = 0.0;
    std::size_t over = 0, since_log = 0;
    for (std::size_t step = 1; step <= plan.steps; ++step) {
      Batch batch = draw_batch(batch_rng);
      Tape tape(true);
      const auto params = net.bind(tape, true);
      double loss_value;
      std::vector<NdArray> grads;
      try {
        Var loss = plan.meanflow
                       ? mf_loss(tape, net, params, batch, loss_rng, pc, cfg_.flow_ratio, plan.width, &rep.intervals)
                       : cfm_loss(tape, net, params, batch, loss_rng, pc);
        loss_value = loss.value().item();
        tape.backward(loss);
        grads.reserve(params.size());
        for (Var p : params) grads.push_back(tape.grad(p));
      } catch (const LossError& e) {
        throw DivergenceError(e.what(), plan.stage, cfg_.flow_ratio, step);
      } catch (const ad::NumericError& e) {
        throw DivergenceError(e.what(), plan.stage, cfg_.flow_ratio, step);
      }
      for (const auto& g : grads)
        if (!g.all_finite()) throw DivergenceError("non-finite gradient", plan.stage, cfg_.flow_ratio, step);
      opt.step(net.params(), grads);

      if (step == 1) first_loss = loss_value;
      over = loss_value > cfg_.divergence_factor * first_loss ? over + 1 : 0;
      if (over >= cfg_.divergence_patience)
        throw DivergenceError("loss above " + std::to_string(cfg_.divergence_factor) + "x its initial value for " +
                                  std::to_string(over) + " steps",
                              plan.stage, cfg_.flow_ratio, step);

      running += loss_value;
      ++since_log;
      if (step % cfg_.val_every == 0 || step == plan.steps) {
        double val;
        try {
          val = validate(net, plan, val_seed);
        } catch (const LossError& e) {
          throw DivergenceError(e.what(), plan.stage, cfg_.flow_ratio, step);
        }
        if (val < rep.best_val_loss) {
          rep.best_val_loss = val;
          rep.best_step = step;
          best = net.params();
        }
        if (sink_) {
          const double ms =
              std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
          sink_(MetricsRow{step, plan.stage, running / static_cast<double>(since_log), val, ms});
        }
        running = 0.0;
        since_log = 0;
      }
    }
    net.params() = std::move(best);
    return rep;
  }

 private:
  Batch draw_batch(Rng& rng) const {
    std::vector<std::size_t> idx(cfg_.batch_size);
    for (auto& i : idx) i = rng.below(data_.train.rows());
    return {take_rows(data_.train.x0, idx), take_rows(data_.train.y, idx)};
  }

  // Same draws every call, so values are comparable within a stage.
  double validate(const net::VelocityNetwork& net, const StagePlan& plan, std::uint64_t seed) const {
    Rng rng(seed);
    Tape tape(false);
    const auto params = net.bind(tape, false);
    const auto pc = cfg_.path();
    Var loss = plan.meanflow ? mf_loss(tape, net, params, val_, rng, pc, cfg_.flow_ratio, plan.width)
                             : cfm_loss(tape, net, params, val_, rng, pc);
    return loss.value().item();
  }

  const TrainData& data_;
  const TrainConfig& cfg_;
  const MetricsSink& sink_;
  Batch val_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

TrainResult train(net::Mode mode, const TrainData& data, const TrainConfig& cfg, const net::NetworkConfig& geometry,
                  const ckpt::CheckpointMeta& meta, const std::optional<CurriculumSchedule>& schedule,
                  const ckpt::NetworkCheckpoint* init, const MetricsSink& sink) {
  cfg.validate();
  geometry.validate();
  check_batch(data.train);
  check_batch(data.val);
  if (data.train.x0.cols() != geometry.data_dim() || data.val.x0.cols() != geometry.data_dim())
    throw net::GeometryError("training rows do not match the network input width");
  if (init && !init->network.config().same_geometry(geometry))
    throw net::GeometryError("initial checkpoint geometry differs from the configured network");

  std::optional<net::VelocityNetwork> net;
  std::vector<StagePlan> plans;
  if (mode == net::Mode::flow) {
    if (schedule) throw std::invalid_argument("a curriculum applies only to mean-flow training");
    if (init && init->network.mode() != net::Mode::flow)
      throw net::GeometryError("flow training needs a flow-mode initial checkpoint");
    net.emplace(init ? init->network : net::VelocityNetwork(geometry, net::Mode::flow, cfg.seed));
    plans.push_back({-1, 1.0, cfg.steps, init ? cfg.lr_finetune : cfg.lr_scratch, false});
  } else {
    if (init) {
      net.emplace(init->network.mode() == net::Mode::flow
                      ? net::flowse_init(init->network, geometry)
                      : init->network);
    } else {
      if (schedule) throw std::invalid_argument("curriculum training needs an initial checkpoint");
      net.emplace(geometry, net::Mode::meanflow, cfg.seed);
    }
    if (schedule) {
      schedule->validate();
      for (std::size_t i = 0; i < schedule->stages.size(); ++i)
        plans.push_back({static_cast<int>(i), schedule->stages[i], schedule->steps_per_stage, cfg.lr_finetune, true});
    } else {
      plans.push_back({-1, 1.0, cfg.steps, init ? cfg.lr_finetune : cfg.lr_scratch, true});
    }
  }

  Trainer trainer(data, cfg, sink);
  TrainResult result{ckpt::NetworkCheckpoint{*net, meta}, {}, {}};
  for (const auto& plan : plans) {
    StageReport rep = trainer.run(*net, plan);
    ckpt::CheckpointMeta m = meta;
    m.seed = cfg.seed;
    m.stage = plan.stage;
    m.max_width = plan.meanflow ? plan.width : 0.0;
    m.flow_ratio = plan.meanflow ? cfg.flow_ratio : 1.0;
    m.val_loss = rep.best_val_loss;
    m.sigma = cfg.sigma;
    m.step = rep.best_step;
    result.stages.push_back(ckpt::NetworkCheckpoint{*net, m});
    result.reports.push_back(rep);
  }
  result.final = result.stages.back();
  return result;
}

}  // namespace meanse::train
