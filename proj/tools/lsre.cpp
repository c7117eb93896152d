// lsre: command-line front end for the pipeline stages.
//
// Exit status: 0 success, 2 invalid input or configuration, 1 runtime failure.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lsre/pipeline.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 1;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool plot = false;
};

lsre::RunConfig load_config(const Globals& g) {
  lsre::RunConfig cfg;
  if (!g.config_path.empty()) {
    std::string text;
    try {
      text = lsre::read_text(g.config_path);
    } catch (const lsre::IoError& e) {
      throw lsre::ValidationError(e.what());
    }
    cfg = lsre::config_from_text(text);
  }
  if (g.seed) cfg.seed = *g.seed;
  lsre::validate(cfg);
  return cfg;
}

std::string out_or(const Globals& g, const char* fallback) { return g.out.empty() ? fallback : g.out; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent semantic-risk estimation pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config_path, "JSON run configuration (defaults apply when omitted)");
  app.add_option("--seed", g.seed, "Override the configuration seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--plot", g.plot, "Also write SVG plots (monitor)");

  auto* gen = app.add_subcommand("gen", "Generate episode sets (default --out data)");

  std::string data_dir = "data";
  auto* label = app.add_subcommand("label", "Label every episode set with the simulated oracle");
  label->add_option("--data", data_dir, "Dataset directory");

  auto* train = app.add_subcommand("train", "Train world model and margin heads (default --out model)");
  train->add_option("--data", data_dir, "Dataset directory");

  std::string ckpt = "model/lsre.ckpt";
  std::string episodes;
  std::string head = "in_distribution";
  auto* monitor = app.add_subcommand("monitor", "Write per-episode risk traces (default --out traces)");
  monitor->add_option("--ckpt", ckpt, "Model checkpoint");
  monitor->add_option("--episodes", episodes, "Episode JSONL file")->required();
  monitor->add_option("--head", head, "Classifier head: in_distribution or few_shot");

  bool force = false;
  auto* eval = app.add_subcommand("eval", "Compute metric reports (default --out report)");
  eval->add_option("--ckpt", ckpt, "Model checkpoint");
  eval->add_option("--data", data_dir, "Dataset directory");
  eval->add_flag("--force", force, "Evaluate even if config hashes disagree");

  int n = 100;
  int warmup = 10;
  auto* bench = app.add_subcommand("bench", "Time the per-frame monitor step (default --out bench)");
  bench->add_option("--ckpt", ckpt, "Model checkpoint");
  bench->add_option("-n", n, "Timed iterations");
  bench->add_option("--warmup", warmup, "Untimed iterations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    const lsre::RunConfig cfg = load_config(g);
    if (gen->parsed()) {
      const std::string out = out_or(g, "data");
      const auto m = lsre::cmd_gen(cfg, out);
      std::cout << "wrote " << m.artifacts.size() << " episode files to " << out << " (config " << m.config_hash
                << ")\n";
    } else if (label->parsed()) {
      const auto m = lsre::cmd_label(cfg, data_dir);
      std::cout << "wrote " << m.artifacts.size() << " label files under " << data_dir << "/labels\n";
    } else if (train->parsed()) {
      const std::string out = out_or(g, "model");
      const auto r = lsre::cmd_train(cfg, data_dir, out);
      if (r.world_model_reused) std::cout << "world model checkpoint matches the config; stage 1 skipped\n";
      for (const char* key : {"classifier", "classifier_fewshot"})
        for (const auto& w : r.log.at(key).at("warnings")) std::cerr << "warning: " << key << ": " << w << "\n";
      std::cout << "wrote " << out << "/lsre.ckpt\n";
    } else if (monitor->parsed()) {
      const std::string out = out_or(g, "traces");
      const auto b = lsre::load_bundle(ckpt);
      const auto count = lsre::cmd_monitor(b, cfg.monitor, ckpt, episodes, out, g.plot, head);
      std::cout << "wrote " << count << " trace(s) to " << out << "\n";
    } else if (eval->parsed()) {
      const std::string out = out_or(g, "report");
      const auto r = lsre::cmd_eval(cfg, ckpt, data_dir, out, force);
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
      std::cout << r.table;
    } else if (bench->parsed()) {
      const std::string out = out_or(g, "bench");
      const auto r = lsre::cmd_bench(cfg, ckpt, out, n, warmup);
      std::cout << r.report.dump(2) << "\n";
    }
  } catch (const lsre::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
