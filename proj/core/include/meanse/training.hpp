#pragma once

// Training objectives and the optimizer loop.
//
// A training row is one flattened spectrogram patch; batches are row blocks.
// Randomness for a loss evaluation is consumed in a fixed order so that the
// flow-matching and mean-flow losses see identical draws when every interval
// collapses to r = t:
//
//   1. x1 noise for every element (row-major)
//   2. t for every row
//   3. (mean flow only) per row: the mix-up coin, then r if the coin
//      selected an interval

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "meanse/autodiff.hpp"
#include "meanse/checkpoint.hpp"
#include "meanse/flow_path.hpp"
#include "meanse/network.hpp"
#include "meanse/rng.hpp"

namespace meanse::train {

using ad::NdArray;
using ad::Tape;
using ad::Var;

struct TimeInterval {
  double r = 1.0;
  double t = 1.0;
  bool collapsed() const { return r == t; }
};

struct CurriculumSchedule {
  std::vector<double> stages{0.2, 0.4, 0.6, 0.8, 1.0};
  std::size_t steps_per_stage = 1500;

  /// Widths strictly increasing inside (0, 1], last equal to 1.
  void validate() const;
};

struct TrainConfig {
  double flow_ratio = 0.75;
  double lr_scratch = 1e-4;
  double lr_finetune = 1e-5;
  double weight_decay = 1e-6;
  std::size_t batch_size = 2;
  double sigma = 0.5;
  double t_floor = 1e-5;
  std::uint64_t seed = 0;

  /// Steps of a single-stage run (flow mode, or mean flow without curriculum).
  std::size_t steps = 3000;
  std::size_t val_every = 100;
  /// Leading validation rows used for the validation loss.
  std::size_t val_rows = 256;

  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  /// Abort when the loss exceeds factor x the stage's first loss for
  /// `divergence_patience` consecutive steps.
  double divergence_factor = 1e3;
  std::size_t divergence_patience = 100;

  void validate() const;
  path::PathConfig path() const { return {sigma, t_floor}; }
};

/// Row blocks of clean and noisy patches.
struct Batch {
  NdArray x0;
  NdArray y;
  std::size_t rows() const { return x0.rows(); }
};

struct TrainData {
  Batch train;
  Batch val;
};

/// Interval draws seen by the loss, for curriculum instrumentation.
struct IntervalStats {
  double max_width = 0.0;
  std::size_t collapsed = 0;
  std::size_t spread = 0;

  void merge(const IntervalStats& other);
};

/// Raised when a loss turns non-finite; carries the times of the offending batch.
class LossError : public std::runtime_error {
 public:
  LossError(const std::string& what, std::vector<double> t, double target_norm);
  const std::vector<double>& times() const noexcept { return t_; }
  double target_norm() const noexcept { return target_norm_; }

 private:
  std::vector<double> t_;
  double target_norm_;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& reason, int stage, double flow_ratio, std::size_t step);
  int stage() const noexcept { return stage_; }
  double flow_ratio() const noexcept { return flow_ratio_; }
  std::size_t step() const noexcept { return step_; }

 private:
  int stage_;
  double flow_ratio_;
  std::size_t step_;
};

/// With probability flow_ratio returns (t, t); otherwise r ~ U(max(0, t - w), t).
/// Consumes t then the coin then (if spread) r from `rng`.
TimeInterval sample_interval(Rng& rng, double flow_ratio, double max_width, const path::PathConfig& cfg);

/// Flow-matching loss: mean over rows of ||v_theta(x_t, t, y) - v||^2.
/// `params` are `field`'s arrays bound to `tape`.
Var cfm_loss(Tape& tape, const net::Field& field, std::span<const Var> params, const Batch& batch, Rng& rng,
             const path::PathConfig& cfg);

/// v - (t - r) * d/dt u along (v, 0, 1), evaluated with `param_values` held fixed.
/// Rows with r = t return v unchanged.
NdArray mf_target(const net::Field& field, std::span<const NdArray> param_values, const NdArray& x_t,
                  std::span<const double> r, std::span<const double> t, const NdArray& y, const NdArray& v);

/// Mean-flow loss: mean over rows of ||u_theta(x_t, r, t, y) - sg(target)||^2.
/// The target is computed on a separate non-recording tape, so no gradient can
/// reach the parameters through it.
Var mf_loss(Tape& tape, const net::Field& field, std::span<const Var> params, const Batch& batch, Rng& rng,
            const path::PathConfig& cfg, double flow_ratio, double max_width, IntervalStats* stats = nullptr);

/// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(const net::NetworkParams& like, double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8);
  void step(net::NetworkParams& params, std::span<const NdArray> grads);
  std::size_t steps() const noexcept { return t_; }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct MetricsRow {
  std::size_t step = 0;
  int stage = -1;
  double loss = 0.0;      ///< mean training loss since the previous row
  double val_loss = 0.0;
  double wall_ms = 0.0;
};
using MetricsSink = std::function<void(const MetricsRow&)>;

/// Header line and row formatting for the tab-separated metrics log.
std::string metrics_header();
std::string format_metrics(const MetricsRow& row);

struct StageReport {
  int stage = -1;
  double width = 1.0;
  IntervalStats intervals;
  std::size_t steps = 0;
  std::size_t best_step = 0;
  double best_val_loss = 0.0;
};

struct TrainResult {
  /// Selected checkpoint of the last stage.
  ckpt::NetworkCheckpoint final;
  /// One per curriculum stage (a single entry for single-stage runs).
  std::vector<ckpt::NetworkCheckpoint> stages;
  std::vector<StageReport> reports;
};

/// Runs the optimizer.
///
/// Flow mode: one stage of cfg.steps with lr_scratch (lr_finetune when `init` is given).
/// Mean-flow mode with a schedule: needs `init`; a flow checkpoint is converted
/// with flowse_init. Each stage runs steps_per_stage with lr_finetune and hands
/// its lowest-validation-loss parameters to the next.
/// Mean-flow mode without a schedule: one stage of width 1.
///
/// `meta` supplies the frontend fields stamped into every checkpoint.
TrainResult train(net::Mode mode, const TrainData& data, const TrainConfig& cfg, const net::NetworkConfig& geometry,
                  const ckpt::CheckpointMeta& meta, const std::optional<CurriculumSchedule>& schedule = std::nullopt,
                  const ckpt::NetworkCheckpoint* init = nullptr, const MetricsSink& sink = {});

}  // namespace meanse::train
