#pragma once

// Pipeline commands behind the `meanse` executable.
//
// Each command writes config.json (the resolved configuration) and VERSION
// into its output directory and never modifies its inputs.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "meanse/app/config.hpp"
#include "meanse/checkpoint.hpp"
#include "meanse/frontend.hpp"
#include "meanse/metrics.hpp"
#include "meanse/training.hpp"

namespace meanse::app {

namespace fs = std::filesystem;

std::string version();

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kDiverged = 3,
  kThresholdFailed = 4,
};

/// Where commands report progress; null silences them.
struct Console {
  std::ostream* out = nullptr;
};

fs::path cmd_gen_corpus(const RunConfig& cfg, const fs::path& out_dir, const Console& console = {});

/// Patches of the train and val splits, scaled as configured.
train::TrainData make_train_data(const frontend::Corpus& corpus, const RunConfig& cfg);

/// Frontend fields stamped into checkpoints.
ckpt::CheckpointMeta frontend_meta(const RunConfig& cfg);

/// Throws net::GeometryError when the checkpoint was trained for another frontend.
void check_compatible(const ckpt::NetworkCheckpoint& ckpt, const RunConfig& cfg);

fs::path cmd_train_flow(const RunConfig& cfg, const fs::path& corpus_dir, const fs::path& out_dir,
                        const Console& console = {});

/// Writes stage<i>_w<width>.ckpt per curriculum stage, meanflow.ckpt (last
/// stage's selection), stages.tsv and metrics.tsv.
fs::path cmd_train_meanflow(const RunConfig& cfg, const fs::path& corpus_dir, const fs::path& flow_ckpt,
                            const fs::path& out_dir, const Console& console = {});

/// Stage checkpoint file name for curriculum stage `index` of width `width`.
std::string stage_file_name(std::size_t index, double width);

struct EnhanceSummary {
  std::size_t utterances = 0;
  std::vector<std::size_t> calls;  ///< network calls per utterance
};

EnhanceSummary cmd_enhance(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& corpus_dir,
                           frontend::Split split, const fs::path& out_dir, const Console& console = {});

struct CheckResult {
  Check check;
  bool applicable = false;
  bool passed = false;
  double delta_db = 0.0;
};

struct EvalSummary {
  std::vector<metrics::MetricRow> rows;
  std::vector<CheckResult> checks;
  bool all_passed() const;
};

std::vector<CheckResult> run_checks(const std::vector<Check>& checks, const std::vector<metrics::MetricRow>& rows);

/// `models` maps a report name to a checkpoint path. Writes report.tsv,
/// report.txt and checks.tsv.
EvalSummary cmd_eval(const RunConfig& cfg, const std::map<std::string, fs::path>& models, const fs::path& corpus_dir,
                     const fs::path& out_dir, const Console& console = {});

struct AblationRow {
  double ratio = 0.0;
  bool diverged = false;
  std::string note;
  std::vector<metrics::MetricRow> rows;  ///< NFE 1, one per ablation split
};

/// Trains one curriculum model per ratio from the same flow checkpoint and
/// seed, evaluates each at NFE 1, and writes ablation.tsv sorted by ratio.
std::vector<AblationRow> cmd_ablate_flow_ratio(const RunConfig& cfg, const fs::path& corpus_dir,
                                               const fs::path& flow_ckpt, const fs::path& out_dir,
                                               const Console& console = {});

std::string format_ablation(const std::vector<AblationRow>& rows);

}  // namespace meanse::app
