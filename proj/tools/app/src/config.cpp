#include "meanse/app/config.hpp"

#include <fstream>
#include <set>

namespace meanse::app {

using nlohmann::json;

namespace {

// Reads keys out of one JSON object and rejects whatever is left over.
class Section {
 public:
  Section(const json& j, std::string where) : where_(std::move(where)) {
    if (j.is_null()) return;
    if (!j.is_object()) throw ConfigError(label() + " must be an object");
    obj_ = &j;
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!obj_) return;
    seen_.insert(key);
    const auto it = obj_->find(key);
    if (it == obj_->end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(label(key) + ": " + e.what());
    }
  }

  template <class T, class Parse>
  void get_as(const char* key, T& out, Parse parse) {
    std::string s;
    const bool present = obj_ && obj_->contains(key);
    get(key, s);
    if (!present) return;
    try {
      out = parse(s);
    } catch (const std::exception& e) {
      throw ConfigError(label(key) + ": " + e.what());
    }
  }

  const json& child(const char* key) {
    static const json null;
    if (!obj_) return null;
    seen_.insert(key);
    const auto it = obj_->find(key);
    return it == obj_->end() ? null : *it;
  }

  std::string label(const char* key = nullptr) const {
    const std::string base = where_.empty() ? "config" : where_;
    return key ? base + "." + key : base;
  }

  void finish() const {
    if (!obj_) return;
    for (const auto& [k, v] : obj_->items())
      if (!seen_.count(k)) throw ConfigError("unknown key " + label(k.c_str()));
  }

 private:
  std::string where_;
  const json* obj_ = nullptr;
  std::set<std::string> seen_;
};

std::vector<frontend::Split> parse_splits(Section& s, const char* key, std::vector<frontend::Split> fallback) {
  std::vector<std::string> names;
  for (auto sp : fallback) names.push_back(frontend::to_string(sp));
  s.get(key, names);
  std::vector<frontend::Split> out;
  try {
    for (const auto& n : names) out.push_back(frontend::split_from_string(n));
  } catch (const std::exception& e) {
    throw ConfigError(s.label(key) + ": " + e.what());
  }
  return out;
}

std::vector<std::string> split_names(const std::vector<frontend::Split>& v) {
  std::vector<std::string> out;
  for (auto s : v) out.push_back(frontend::to_string(s));
  return out;
}

std::vector<Check> default_checks() {
  return {
      {"meanse_nfe1_beats_flowse_nfe1_by_1db", "meanse", 1, "flowse", 1, "test", 1.0, false},
      {"meanse_nfe1_within_2db_of_meanse_nfe5", "meanse", 1, "meanse", 5, "test", -2.0, false, 2.0},
      {"ood_meanse_beats_flowse_nfe1", "meanse", 1, "flowse", 1, "ood", 0.0, true},
      {"ood_meanse_beats_flowse_nfe2", "meanse", 2, "flowse", 2, "ood", 0.0, true},
      {"ood_meanse_beats_flowse_nfe5", "meanse", 5, "flowse", 5, "ood", 0.0, true},
  };
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.features.spec_scale = 0.3;
  c.train.lr_scratch = 1e-3;
  c.train.lr_finetune = 1e-4;
  c.train.batch_size = 64;
  c.train.steps = 3000;
  c.train.seed = 1;
  // Smooth time features keep du/dt, and with it the mean-flow target, well behaved.
  c.network.fourier_scale = 1.0;
  c.curriculum.steps_per_stage = 1500;
  c.checks = default_checks();
  c.network.n_bins = c.stft.n_bins();
  c.network.patch_frames = c.features.patch_frames;
  return c;
}

void RunConfig::validate() const {
  try {
    path.validate();
    stft.validate();
    corpus.validate();
    network.validate();
    train.validate();
    curriculum.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(features.spec_scale > 0.0) || features.patch_frames == 0)
    throw ConfigError("features.spec_scale and features.patch_frames must be positive");
  if (network.n_bins != stft.n_bins() || network.patch_frames != features.patch_frames)
    throw ConfigError("network geometry disagrees with the STFT and feature settings");
  if (corpus.synth.sample_rate_hz != stft.sample_rate_hz) throw ConfigError("corpus and STFT sample rates differ");
  const auto n = static_cast<std::size_t>(corpus.duration_s * corpus.synth.sample_rate_hz);
  if (n < stft.n_fft) throw ConfigError("corpus.duration_s is shorter than one STFT frame");
  if (nfe == 0 || nfe_list.empty()) throw ConfigError("sampler nfe values must be positive");
  for (auto v : nfe_list)
    if (v == 0) throw ConfigError("sampler.nfe_list entries must be positive");
  for (double r : ablation_ratios)
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("ablation.ratios must lie in [0, 1]");
  for (const auto& c : checks)
    if (c.a_nfe == 0 || c.b_nfe == 0) throw ConfigError("check " + c.name + " has a zero nfe");
}

RunConfig parse_config(const json& j) {
  RunConfig c = RunConfig::defaults();
  Section root(j, "");

  {
    Section s(root.child("path"), "path");
    s.get("sigma", c.path.sigma);
    s.get("t_floor", c.path.t_floor);
    s.finish();
  }
  {
    Section s(root.child("stft"), "stft");
    s.get("n_fft", c.stft.n_fft);
    s.get("hop", c.stft.hop);
    s.get_as("window", c.stft.window, frontend::window_from_string);
    s.get("sample_rate_hz", c.stft.sample_rate_hz);
    s.finish();
  }
  {
    Section s(root.child("features"), "features");
    s.get("spec_scale", c.features.spec_scale);
    s.get("patch_frames", c.features.patch_frames);
    s.finish();
  }
  {
    Section s(root.child("corpus"), "corpus");
    s.get("seed", c.corpus.seed);
    s.get("duration_s", c.corpus.duration_s);
    s.get("train_pool", c.corpus.train_pool);
    s.get("test_count", c.corpus.test_count);
    s.get("ood_count", c.corpus.ood_count);
    s.get("train_snrs", c.corpus.train_snrs);
    s.get("test_snrs", c.corpus.test_snrs);
    s.get_as("train_noise", c.corpus.train_noise, frontend::noise_family_from_string);
    s.get_as("ood_noise", c.corpus.ood_noise, frontend::noise_family_from_string);
    s.get("f0_min", c.corpus.synth.f0_min);
    s.get("f0_max", c.corpus.synth.f0_max);
    s.get("partials_min", c.corpus.synth.partials_min);
    s.get("partials_max", c.corpus.synth.partials_max);
    s.get("partial_decay", c.corpus.synth.partial_decay);
    s.get("peak", c.corpus.synth.peak);
    s.finish();
  }
  {
    Section s(root.child("network"), "network");
    s.get("hidden", c.network.hidden);
    s.get("blocks", c.network.blocks);
    s.get("embed_dim", c.network.embed_dim);
    s.get("fourier_scale", c.network.fourier_scale);
    s.finish();
  }
  {
    Section s(root.child("train"), "train");
    s.get("seed", c.train.seed);
    s.get("flow_ratio", c.train.flow_ratio);
    s.get("lr_scratch", c.train.lr_scratch);
    s.get("lr_finetune", c.train.lr_finetune);
    s.get("weight_decay", c.train.weight_decay);
    s.get("batch_size", c.train.batch_size);
    s.get("steps", c.train.steps);
    s.get("val_every", c.train.val_every);
    s.get("val_rows", c.train.val_rows);
    s.get("beta1", c.train.beta1);
    s.get("beta2", c.train.beta2);
    s.get("adam_eps", c.train.adam_eps);
    s.get("divergence_factor", c.train.divergence_factor);
    s.get("divergence_patience", c.train.divergence_patience);
    s.finish();
  }
  {
    Section s(root.child("curriculum"), "curriculum");
    s.get("stages", c.curriculum.stages);
    s.get("steps_per_stage", c.curriculum.steps_per_stage);
    s.finish();
  }
  {
    Section s(root.child("sampler"), "sampler");
    s.get("nfe", c.nfe);
    s.get("nfe_list", c.nfe_list);
    s.get("seed", c.sampler_seed);
    s.finish();
  }
  {
    Section s(root.child("eval"), "eval");
    c.eval_splits = parse_splits(s, "splits", c.eval_splits);
    s.get("include_noisy", c.include_noisy);
    const json& checks = s.child("checks");
    if (!checks.is_null()) {
      if (!checks.is_array()) throw ConfigError("eval.checks must be an array");
      c.checks.clear();
      for (std::size_t i = 0; i < checks.size(); ++i) {
        Section k(checks[i], "eval.checks[" + std::to_string(i) + "]");
        Check ch;
        k.get("name", ch.name);
        k.get("a", ch.a);
        k.get("a_nfe", ch.a_nfe);
        k.get("b", ch.b);
        k.get("b_nfe", ch.b_nfe);
        k.get("split", ch.split);
        k.get("min_db", ch.min_db);
        k.get("strict", ch.strict);
        const json& max_db = k.child("max_db");
        if (!max_db.is_null()) {
          if (!max_db.is_number()) throw ConfigError(k.label("max_db") + " must be a number or null");
          ch.max_db = max_db.get<double>();
        }
        k.finish();
        if (ch.name.empty() || ch.a.empty() || ch.b.empty())
          throw ConfigError(k.label() + " needs name, a and b");
        c.checks.push_back(ch);
      }
    }
    s.finish();
  }
  {
    Section s(root.child("ablation"), "ablation");
    s.get("ratios", c.ablation_ratios);
    c.ablation_splits = parse_splits(s, "splits", c.ablation_splits);
    s.finish();
  }
  root.finish();

  c.train.sigma = c.path.sigma;
  c.train.t_floor = c.path.t_floor;
  c.corpus.synth.sample_rate_hz = c.stft.sample_rate_hz;
  c.network.n_bins = c.stft.n_bins();
  c.network.patch_frames = c.features.patch_frames;
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json to_json(const RunConfig& c) {
  json checks = json::array();
  for (const auto& k : c.checks)
    checks.push_back({{"name", k.name}, {"a", k.a}, {"a_nfe", k.a_nfe}, {"b", k.b}, {"b_nfe", k.b_nfe},
                      {"split", k.split}, {"min_db", k.min_db}, {"strict", k.strict},
                      {"max_db", k.max_db ? json(*k.max_db) : json(nullptr)}});
  return json{
      {"path", {{"sigma", c.path.sigma}, {"t_floor", c.path.t_floor}}},
      {"stft",
       {{"n_fft", c.stft.n_fft}, {"hop", c.stft.hop}, {"window", frontend::to_string(c.stft.window)},
        {"sample_rate_hz", c.stft.sample_rate_hz}}},
      {"features", {{"spec_scale", c.features.spec_scale}, {"patch_frames", c.features.patch_frames}}},
      {"corpus",
       {{"seed", c.corpus.seed},
        {"duration_s", c.corpus.duration_s},
        {"train_pool", c.corpus.train_pool},
        {"test_count", c.corpus.test_count},
        {"ood_count", c.corpus.ood_count},
        {"train_snrs", c.corpus.train_snrs},
        {"test_snrs", c.corpus.test_snrs},
        {"train_noise", frontend::to_string(c.corpus.train_noise)},
        {"ood_noise", frontend::to_string(c.corpus.ood_noise)},
        {"f0_min", c.corpus.synth.f0_min},
        {"f0_max", c.corpus.synth.f0_max},
        {"partials_min", c.corpus.synth.partials_min},
        {"partials_max", c.corpus.synth.partials_max},
        {"partial_decay", c.corpus.synth.partial_decay},
        {"peak", c.corpus.synth.peak}}},
      {"network",
       {{"hidden", c.network.hidden},
        {"blocks", c.network.blocks},
        {"embed_dim", c.network.embed_dim},
        {"fourier_scale", c.network.fourier_scale}}},
      {"train",
       {{"seed", c.train.seed},
        {"flow_ratio", c.train.flow_ratio},
        {"lr_scratch", c.train.lr_scratch},
        {"lr_finetune", c.train.lr_finetune},
        {"weight_decay", c.train.weight_decay},
        {"batch_size", c.train.batch_size},
        {"steps", c.train.steps},
        {"val_every", c.train.val_every},
        {"val_rows", c.train.val_rows},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"adam_eps", c.train.adam_eps},
        {"divergence_factor", c.train.divergence_factor},
        {"divergence_patience", c.train.divergence_patience}}},
      {"curriculum", {{"stages", c.curriculum.stages}, {"steps_per_stage", c.curriculum.steps_per_stage}}},
      {"sampler", {{"nfe", c.nfe}, {"nfe_list", c.nfe_list}, {"seed", c.sampler_seed}}},
      {"eval", {{"splits", split_names(c.eval_splits)}, {"include_noisy", c.include_noisy}, {"checks", checks}}},
      {"ablation", {{"ratios", c.ablation_ratios}, {"splits", split_names(c.ablation_splits)}}},
  };
}

}  // namespace meanse::app
