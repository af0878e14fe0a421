// meanse: corpus generation, training, enhancement and evaluation.
//
// Flags name files and directories only; everything else comes from --config.

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "meanse/app/commands.hpp"
#include "meanse/flow_path.hpp"

namespace app = meanse::app;
namespace fs = std::filesystem;

namespace {

app::RunConfig resolve(const std::string& path) {
  return path.empty() ? app::RunConfig::defaults() : app::load_config(path);
}

std::map<std::string, fs::path> parse_models(const std::vector<std::string>& specs) {
  std::map<std::string, fs::path> out;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size())
      throw app::ConfigError("--model expects name=path, got '" + s + "'");
    if (!out.emplace(s.substr(0, eq), s.substr(eq + 1)).second)
      throw app::ConfigError("duplicate model name '" + s.substr(0, eq) + "'");
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Flow-matching speech enhancement on synthetic signals"};
  cli.set_version_flag("--version", app::version());
  cli.require_subcommand(1);

  std::string config, out, corpus, flow, checkpoint, split = "test";
  std::vector<std::string> models;
  auto add_config = [&](CLI::App* c) { c->add_option("--config", config, "JSON run configuration")->check(CLI::ExistingFile); };

  auto* gen = cli.add_subcommand("gen-corpus", "Synthesize the paired corpus");
  add_config(gen);
  gen->add_option("--out", out, "output directory")->required();

  auto* tf = cli.add_subcommand("train-flow", "Train the flow baseline");
  add_config(tf);
  tf->add_option("--corpus", corpus)->required();
  tf->add_option("--out", out)->required();

  auto* tm = cli.add_subcommand("train-meanflow", "Fine-tune a mean-flow model through the curriculum");
  add_config(tm);
  tm->add_option("--corpus", corpus)->required();
  tm->add_option("--flow", flow, "flow checkpoint")->required()->check(CLI::ExistingFile);
  tm->add_option("--out", out)->required();

  auto* en = cli.add_subcommand("enhance", "Enhance one split with a checkpoint");
  add_config(en);
  en->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  en->add_option("--corpus", corpus)->required();
  en->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test", "ood"}));
  en->add_option("--out", out)->required();

  auto* ev = cli.add_subcommand("eval", "Score models and apply the configured checks");
  add_config(ev);
  ev->add_option("--model", models, "name=checkpoint, repeatable")->required();
  ev->add_option("--corpus", corpus)->required();
  ev->add_option("--out", out)->required();

  auto* ab = cli.add_subcommand("ablate-flow-ratio", "Retrain the curriculum per flow ratio and score at NFE 1");
  add_config(ab);
  ab->add_option("--corpus", corpus)->required();
  ab->add_option("--flow", flow)->required()->check(CLI::ExistingFile);
  ab->add_option("--out", out)->required();

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = cli.exit(e);
    return rc == 0 ? app::kOk : app::kConfigError;
  }

  const app::Console console{&std::cout};
  try {
    const auto cfg = resolve(config);
    if (*gen) {
      app::cmd_gen_corpus(cfg, out, console);
    } else if (*tf) {
      app::cmd_train_flow(cfg, corpus, out, console);
    } else if (*tm) {
      app::cmd_train_meanflow(cfg, corpus, flow, out, console);
    } else if (*en) {
      app::cmd_enhance(cfg, checkpoint, corpus, meanse::frontend::split_from_string(split), out, console);
    } else if (*ev) {
      const auto sum = app::cmd_eval(cfg, parse_models(models), corpus, out, console);
      if (!sum.all_passed()) {
        std::cerr << "meanse: one or more checks failed (see " << (fs::path(out) / "checks.tsv").string() << ")\n";
        return app::kThresholdFailed;
      }
    } else if (*ab) {
      app::cmd_ablate_flow_ratio(cfg, corpus, flow, out, console);
    }
  } catch (const app::ConfigError& e) {
    std::cerr << "meanse: config: " << e.what() << '\n';
    return app::kConfigError;
  } catch (const meanse::train::DivergenceError& e) {
    std::cerr << "meanse: diverged: " << e.what() << '\n';
    return app::kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "meanse: " << e.what() << '\n';
    return app::kFailure;
  }
  return app::kOk;
}
