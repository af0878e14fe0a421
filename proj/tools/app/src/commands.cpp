#include "meanse/app/commands.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "meanse/binary_io.hpp"
#include "meanse/sampler.hpp"

#ifndef MEANSE_VERSION
#define MEANSE_VERSION "0.0.0"
#endif

namespace meanse::app {

namespace {

void say(const Console& c, const std::string& line) {
  if (c.out) *c.out << line << '\n' << std::flush;
}

void write_run_files(const RunConfig& cfg, const fs::path& dir) {
  io::write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");
  io::write_text(dir / "VERSION", version() + "\n");
}

frontend::Corpus load_corpus(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.tsv")) throw frontend::CorpusError("no corpus manifest in " + dir.string());
  return frontend::read_corpus(dir);
}

ad::NdArray stack_rows(const std::vector<ad::NdArray>& parts) {
  if (parts.empty()) throw frontend::CorpusError("split is empty");
  std::size_t rows = 0;
  for (const auto& p : parts) rows += p.rows();
  ad::NdArray out(ad::Shape{rows, parts.front().cols()});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out.data() + off);
    off += p.size();
  }
  return out;
}

train::Batch split_rows(const frontend::Corpus& corpus, frontend::Split split, const RunConfig& cfg,
                        frontend::Stft& stft) {
  std::vector<ad::NdArray> x0, y;
  for (const auto* p : corpus.split(split)) {
    const auto sp = frontend::to_spectro(*p, stft);
    x0.push_back(frontend::to_rows(sp.clean, cfg.features));
    y.push_back(frontend::to_rows(sp.noisy, cfg.features));
  }
  return {stack_rows(x0), stack_rows(y)};
}

// Appends metrics rows to a file as they arrive.
class MetricsFile {
 public:
  explicit MetricsFile(const fs::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    out_ << train::metrics_header();
  }
  train::MetricsSink sink(const Console& console) {
    return [this, &console](const train::MetricsRow& row) {
      out_ << train::format_metrics(row) << std::flush;
      char buf[160];
      std::snprintf(buf, sizeof buf, "  stage %2d step %6zu  loss %.5f  val %.5f", row.stage, row.step, row.loss,
                    row.val_loss);
      say(console, buf);
    };
  }
  void note(const std::string& line) { out_ << "# " << line << '\n' << std::flush; }

 private:
  std::ofstream out_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_wav(const fs::path& path, const frontend::Waveform& w, std::uint32_t rate) {
  io::ByteWriter b;
  const auto data_bytes = static_cast<std::uint32_t>(w.size() * 4);
  b.put_raw("RIFF", 4);
  b.put<std::uint32_t>(36 + data_bytes);
  b.put_raw("WAVEfmt ", 8);
  b.put<std::uint32_t>(16);
  b.put<std::uint16_t>(3);  // IEEE float
  b.put<std::uint16_t>(1);
  b.put<std::uint32_t>(rate);
  b.put<std::uint32_t>(rate * 4);
  b.put<std::uint16_t>(4);
  b.put<std::uint16_t>(32);
  b.put_raw("data", 4);
  b.put<std::uint32_t>(data_bytes);
  for (double v : w) b.put(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  io::write_file(path, b.bytes());
}

// "MSESPEC\0", u32 version, u64 frames, u64 bins, f64 (re, im) pairs frame-major.
void write_spectrogram(const fs::path& path, const frontend::Spectrogram& s) {
  io::ByteWriter b;
  b.put_raw("MSESPEC", 8);
  b.put<std::uint32_t>(1);
  b.put<std::uint64_t>(s.frames);
  b.put<std::uint64_t>(s.bins);
  for (const auto& c : s.data) {
    b.put_f64(c.real());
    b.put_f64(c.imag());
  }
  io::write_file(path, b.bytes());
}

metrics::EvalConfig eval_config(const RunConfig& cfg) {
  metrics::EvalConfig e;
  e.stft = cfg.stft;
  e.features = cfg.features;
  e.sigma = cfg.path.sigma;
  e.seed = cfg.sampler_seed;
  e.include_noisy = cfg.include_noisy;
  return e;
}

double r_independence_gap(const net::VelocityNetwork& mean, const train::Batch& probe) {
  const std::size_t n = probe.rows();
  std::vector<double> t(n), r0(n, 0.0), r1(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = 0.05 + 0.9 * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(n - 1, 1));
    r1[i] = 0.5 * t[i];
  }
  const auto a = mean.forward(probe.x0, r0, t, probe.y);
  const auto b = mean.forward(probe.x0, r1, t, probe.y);
  const auto c = mean.forward(probe.x0, t, t, probe.y);
  double gap = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) gap = std::max({gap, std::abs(a[i] - b[i]), std::abs(a[i] - c[i])});
  return gap;
}

train::Batch head(const train::Batch& b, std::size_t n) {
  n = std::min(n, b.rows());
  const std::size_t c = b.x0.cols();
  train::Batch out{ad::NdArray(ad::Shape{n, c}), ad::NdArray(ad::Shape{n, c})};
  std::copy_n(b.x0.data(), n * c, out.x0.data());
  std::copy_n(b.y.data(), n * c, out.y.data());
  return out;
}

ckpt::NetworkCheckpoint load_flow(const fs::path& path, const RunConfig& cfg) {
  auto flow = ckpt::load(path);
  check_compatible(flow, cfg);
  if (flow.network.mode() != net::Mode::flow) throw net::GeometryError(path.string() + " is not a flow checkpoint");
  return flow;
}

struct CurriculumOutcome {
  std::optional<train::TrainResult> result;
  bool diverged = false;
  std::string note;
};

CurriculumOutcome run_curriculum(const RunConfig& cfg, const train::TrainData& data,
                                 const ckpt::NetworkCheckpoint& flow, const fs::path& out_dir, const Console& console,
                                 bool rethrow) {
  fs::create_directories(out_dir);
  write_run_files(cfg, out_dir);
  MetricsFile log(out_dir / "metrics.tsv");

  const auto init = net::flowse_init(flow.network, cfg.network, flow.network.frequencies().values());
  const double gap = r_independence_gap(init, head(data.val, 32));
  log.note("flowse_init max |u(r1) - u(r2)| = " + fmt("%.3e", gap));
  say(console, "flowse_init r-independence gap " + fmt("%.3e", gap));

  CurriculumOutcome out;
  try {
    out.result = train::train(net::Mode::meanflow, data, cfg.train, cfg.network, frontend_meta(cfg), cfg.curriculum,
                              &flow, log.sink(console));
  } catch (const train::DivergenceError& e) {
    log.note(std::string("diverged: ") + e.what());
    if (rethrow) throw;
    out.diverged = true;
    out.note = e.what();
    return out;
  }

  std::ostringstream stages;
  stages << "stage\twidth\tmax_sampled_width\tcollapsed\tspread\tbest_step\tbest_val_loss\tfile\n";
  const auto& res = *out.result;
  for (std::size_t i = 0; i < res.stages.size(); ++i) {
    const auto& rep = res.reports[i];
    const auto name = stage_file_name(i, rep.width);
    ckpt::save(out_dir / name, res.stages[i]);
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d\t%.6f\t%.17g\t%zu\t%zu\t%zu\t%.9e\t%s\n", rep.stage, rep.width,
                  rep.intervals.max_width, rep.intervals.collapsed, rep.intervals.spread, rep.best_step,
                  rep.best_val_loss, name.c_str());
    stages << buf;
  }
  io::write_text(out_dir / "stages.tsv", stages.str());
  ckpt::save(out_dir / "meanflow.ckpt", res.final);
  return out;
}

}  // namespace

std::string version() { return std::string("meanse ") + MEANSE_VERSION; }

fs::path cmd_gen_corpus(const RunConfig& cfg, const fs::path& out_dir, const Console& console) {
  cfg.validate();
  const auto corpus = frontend::build_corpus(cfg.corpus);
  fs::create_directories(out_dir);
  const auto manifest = frontend::write_corpus(corpus, out_dir);
  write_run_files(cfg, out_dir);
  for (auto s : {frontend::Split::train, frontend::Split::val, frontend::Split::test, frontend::Split::ood})
    say(console, frontend::to_string(s) + ": " + std::to_string(corpus.split(s).size()) + " pairs");
  return manifest;
}

train::TrainData make_train_data(const frontend::Corpus& corpus, const RunConfig& cfg) {
  frontend::Stft stft(cfg.stft);
  return {split_rows(corpus, frontend::Split::train, cfg, stft), split_rows(corpus, frontend::Split::val, cfg, stft)};
}

ckpt::CheckpointMeta frontend_meta(const RunConfig& cfg) {
  ckpt::CheckpointMeta m;
  m.sigma = cfg.path.sigma;
  m.n_fft = static_cast<std::uint32_t>(cfg.stft.n_fft);
  m.hop = static_cast<std::uint32_t>(cfg.stft.hop);
  m.sample_rate_hz = cfg.stft.sample_rate_hz;
  m.spec_scale = cfg.features.spec_scale;
  return m;
}

void check_compatible(const ckpt::NetworkCheckpoint& c, const RunConfig& cfg) {
  const auto& m = c.meta;
  if (m.n_fft != cfg.stft.n_fft || m.hop != cfg.stft.hop || m.sample_rate_hz != cfg.stft.sample_rate_hz ||
      m.spec_scale != cfg.features.spec_scale || m.sigma != cfg.path.sigma)
    throw net::GeometryError("checkpoint frontend (n_fft " + std::to_string(m.n_fft) + ", hop " +
                             std::to_string(m.hop) + ", spec_scale " + fmt("%g", m.spec_scale) +
                             ") does not match the configuration");
  if (!c.network.config().same_geometry(cfg.network))
    throw net::GeometryError("checkpoint network geometry does not match the configuration");
}

fs::path cmd_train_flow(const RunConfig& cfg, const fs::path& corpus_dir, const fs::path& out_dir,
                        const Console& console) {
  cfg.validate();
  const auto data = make_train_data(load_corpus(corpus_dir), cfg);
  fs::create_directories(out_dir);
  write_run_files(cfg, out_dir);
  MetricsFile log(out_dir / "metrics.tsv");
  say(console, "flow training on " + std::to_string(data.train.rows()) + " patches");
  std::optional<train::TrainResult> res;
  try {
    res = train::train(net::Mode::flow, data, cfg.train, cfg.network, frontend_meta(cfg), std::nullopt, nullptr,
                       log.sink(console));
  } catch (const train::DivergenceError& e) {
    log.note(std::string("diverged: ") + e.what());
    throw;
  }
  const auto path = out_dir / "flow.ckpt";
  ckpt::save(path, res->final);
  return path;
}

std::string stage_file_name(std::size_t index, double width) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "stage%zu_w%.2f.ckpt", index, width);
  return buf;
}

fs::path cmd_train_meanflow(const RunConfig& cfg, const fs::path& corpus_dir, const fs::path& flow_ckpt,
                            const fs::path& out_dir, const Console& console) {
  cfg.validate();
  const auto data = make_train_data(load_corpus(corpus_dir), cfg);
  const auto flow = load_flow(flow_ckpt, cfg);
  run_curriculum(cfg, data, flow, out_dir, console, true);
  return out_dir / "meanflow.ckpt";
}

EnhanceSummary cmd_enhance(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& corpus_dir,
                           frontend::Split split, const fs::path& out_dir, const Console& console) {
  cfg.validate();
  const auto c = ckpt::load(checkpoint);
  check_compatible(c, cfg);
  const auto corpus = load_corpus(corpus_dir);
  fs::create_directories(out_dir);
  write_run_files(cfg, out_dir);
  frontend::Stft stft(cfg.stft);
  const sampler::SamplerConfig sc{cfg.nfe, cfg.sampler_seed, cfg.path.sigma};
  EnhanceSummary sum;
  std::ostringstream log;
  log << "id\tmode\tnfe\tnetwork_calls\n";
  const auto pairs = corpus.split(split);
  for (std::size_t u = 0; u < pairs.size(); ++u) {
    const auto& p = *pairs[u];
    const auto res = sampler::enhance(c.network, stft.forward(p.noisy), cfg.features, sc, u);
    write_spectrogram(out_dir / (p.id + ".spec"), res.spectrogram);
    write_wav(out_dir / (p.id + ".wav"), stft.inverse(res.spectrogram, p.noisy.size()), cfg.stft.sample_rate_hz);
    log << p.id << '\t' << net::to_string(c.network.mode()) << '\t' << cfg.nfe << '\t' << res.network_calls << '\n';
    sum.calls.push_back(res.network_calls);
  }
  sum.utterances = pairs.size();
  io::write_text(out_dir / "enhance.tsv", log.str());
  say(console, "enhanced " + std::to_string(sum.utterances) + " utterances with " + net::to_string(c.network.mode()) +
                   " sampler, nfe " + std::to_string(cfg.nfe));
  return sum;
}

bool EvalSummary::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return !c.applicable || c.passed; });
}

std::vector<CheckResult> run_checks(const std::vector<Check>& checks, const std::vector<metrics::MetricRow>& rows) {
  auto find = [&](const std::string& model, std::size_t nfe, const std::string& split) -> const metrics::MetricRow* {
    for (const auto& r : rows)
      if (r.model == model && r.nfe == nfe && r.split == split) return &r;
    return nullptr;
  };
  std::vector<CheckResult> out;
  for (const auto& c : checks) {
    CheckResult res{c, false, false, 0.0};
    const auto* a = find(c.a, c.a_nfe, c.split);
    const auto* b = find(c.b, c.b_nfe, c.split);
    if (a && b) {
      res.applicable = true;
      res.delta_db = a->si_sdr_db - b->si_sdr_db;
      res.passed = c.strict ? res.delta_db > c.min_db : res.delta_db >= c.min_db;
      if (c.max_db) res.passed = res.passed && res.delta_db <= *c.max_db;
    }
    out.push_back(res);
  }
  return out;
}

EvalSummary cmd_eval(const RunConfig& cfg, const std::map<std::string, fs::path>& models, const fs::path& corpus_dir,
                     const fs::path& out_dir, const Console& console) {
  cfg.validate();
  if (models.empty()) throw ConfigError("eval needs at least one model");
  std::vector<ckpt::NetworkCheckpoint> loaded;
  loaded.reserve(models.size());
  for (const auto& [name, path] : models) {
    loaded.push_back(ckpt::load(path));
    check_compatible(loaded.back(), cfg);
  }
  std::vector<metrics::ModelEntry> entries;
  std::size_t i = 0;
  for (const auto& [name, path] : models) entries.push_back({name, &loaded[i++].network});

  const auto corpus = load_corpus(corpus_dir);
  fs::create_directories(out_dir);
  write_run_files(cfg, out_dir);
  EvalSummary sum;
  sum.rows = metrics::compare_models(entries, corpus, cfg.eval_splits, cfg.nfe_list, eval_config(cfg));
  sum.checks = run_checks(cfg.checks, sum.rows);
  io::write_text(out_dir / "report.tsv", metrics::format_tsv(sum.rows));
  io::write_text(out_dir / "report.txt", metrics::format_table(sum.rows));

  std::ostringstream chk;
  chk << "check\tdelta_db\tmin_db\tmax_db\tstatus\n";
  for (const auto& c : sum.checks) {
    const char* status = !c.applicable ? "skipped" : c.passed ? "pass" : "fail";
    chk << c.check.name << '\t' << (c.applicable ? fmt("%.6f", c.delta_db) : "nan") << '\t'
        << fmt("%.6f", c.check.min_db) << '\t' << (c.check.max_db ? fmt("%.6f", *c.check.max_db) : "none") << '\t'
        << status << '\n';
  }
  io::write_text(out_dir / "checks.tsv", chk.str());
  if (console.out) *console.out << metrics::format_table(sum.rows) << chk.str() << std::flush;
  return sum;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream s;
  s << "ratio\tnfe\tsplit\tsi_sdr_db\tlsd_db\tn_utts\tstatus\n";
  for (const auto& r : rows) {
    for (const auto& m : r.rows) {
      s << fmt("%.2f", r.ratio) << '\t' << m.nfe << '\t' << m.split << '\t';
      if (r.diverged)
        s << "nan\tnan\t";
      else
        s << fmt("%.6f", m.si_sdr_db) << '\t' << fmt("%.6f", m.lsd_db) << '\t';
      s << m.n_utts << '\t' << (r.diverged ? "diverged" : "ok") << '\n';
    }
  }
  return s.str();
}

std::vector<AblationRow> cmd_ablate_flow_ratio(const RunConfig& cfg, const fs::path& corpus_dir,
                                               const fs::path& flow_ckpt, const fs::path& out_dir,
                                               const Console& console) {
  cfg.validate();
  const auto corpus = load_corpus(corpus_dir);
  const auto data = make_train_data(corpus, cfg);
  const auto flow = load_flow(flow_ckpt, cfg);
  fs::create_directories(out_dir);
  write_run_files(cfg, out_dir);

  auto ratios = cfg.ablation_ratios;
  std::sort(ratios.begin(), ratios.end());
  ratios.erase(std::unique(ratios.begin(), ratios.end()), ratios.end());

  const auto ecfg = eval_config(cfg);
  std::vector<AblationRow> out;
  for (double ratio : ratios) {
    RunConfig rc = cfg;
    rc.train.flow_ratio = ratio;
    say(console, "flow ratio " + fmt("%.2f", ratio));
    const auto dir = out_dir / ("ratio_" + fmt("%.2f", ratio));
    auto outcome = run_curriculum(rc, data, flow, dir, console, false);
    AblationRow row{ratio, outcome.diverged, outcome.note, {}};
    for (auto split : cfg.ablation_splits) {
      const auto pairs = corpus.split(split);
      if (outcome.diverged) {
        metrics::MetricRow m{"meanse", 1, frontend::to_string(split), std::nan(""), std::nan(""), pairs.size(), {}};
        row.rows.push_back(m);
      } else {
        row.rows.push_back(metrics::score_split("meanse", 1, split, pairs, &outcome.result->final.network, ecfg));
      }
    }
    out.push_back(std::move(row));
  }
  const auto text = format_ablation(out);
  io::write_text(out_dir / "ablation.tsv", text);
  if (console.out) *console.out << text << std::flush;
  return out;
}

}  // namespace meanse::app
