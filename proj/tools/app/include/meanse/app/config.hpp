#pragma once

// Declarative run configuration read from JSON.
//
// Every section and key is optional; absent values take the defaults below.
// Unknown keys are rejected. Commands write the fully resolved configuration
// next to their outputs.

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "meanse/flow_path.hpp"
#include "meanse/frontend.hpp"
#include "meanse/network.hpp"
#include "meanse/training.hpp"

namespace meanse::app {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One acceptance gate evaluated by `eval`: d = score(a) - score(b) must
/// reach min_db (strictly when `strict`) and, when max_db is set, stay at or
/// below it.
struct Check {
  std::string name;
  std::string a;
  std::size_t a_nfe = 1;
  std::string b;
  std::size_t b_nfe = 1;
  std::string split = "test";
  double min_db = 0.0;
  bool strict = false;
  std::optional<double> max_db;
};

struct RunConfig {
  path::PathConfig path;
  frontend::StftConfig stft;
  frontend::FeatureConfig features;
  frontend::CorpusConfig corpus;
  net::NetworkConfig network;
  train::TrainConfig train;
  train::CurriculumSchedule curriculum;

  std::size_t nfe = 1;                         ///< enhance
  std::vector<std::size_t> nfe_list{1, 2, 5};  ///< eval
  std::uint64_t sampler_seed = 7;

  std::vector<frontend::Split> eval_splits{frontend::Split::test, frontend::Split::ood};
  bool include_noisy = true;
  std::vector<Check> checks;

  std::vector<double> ablation_ratios{0.0, 0.25, 0.5, 0.75};
  std::vector<frontend::Split> ablation_splits{frontend::Split::test};

  /// Desk-scale defaults used when no file is given.
  static RunConfig defaults();

  /// Cross-section consistency (bins vs n_fft, sigma shared, ...).
  void validate() const;
};

RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

}  // namespace meanse::app
