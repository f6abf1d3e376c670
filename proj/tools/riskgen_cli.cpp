#include "riskgen/binio.hpp"
#include "riskgen/pipeline.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace {

using riskgen::RunConfig;
using riskgen::RunStage;

RunConfig load_config(const std::string& config_path, std::optional<std::uint64_t> seed) {
  RunConfig cfg;
  if (!config_path.empty()) {
    cfg = RunConfig::load(config_path);
  } else {
    cfg.validate();
  }
  if (seed) {
    cfg.master_seed = *seed;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformity-constrained risky-sample generation pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "runs/default";
  std::optional<std::uint64_t> seed;
  bool fresh = false;
  app.add_option("--config", config_path, "Run config JSON (defaults used when omitted)");
  app.add_option("--out", out_dir, "Output directory for cached stages and reports");
  app.add_option("--seed", seed, "Override the master seed");
  app.add_flag("--fresh", fresh, "Recompute stages even when cached outputs exist");

  CLI::App* cmd_data = app.add_subcommand("data", "Draw and store the synthetic dataset");
  CLI::App* cmd_train = app.add_subcommand("train", "Train all models (embedder, denoiser, classifiers, error predictor)");
  CLI::App* cmd_generate = app.add_subcommand("generate", "Generate guided samples for every category");
  CLI::App* cmd_eval = app.add_subcommand("eval", "Evaluate generated samples and write reports");
  CLI::App* cmd_retrain = app.add_subcommand("retrain", "Augment the train split with generated samples and retrain");
  CLI::App* cmd_report = app.add_subcommand("report", "Print the manifest of an existing run directory");

  CLI::App* cmd_sweep = app.add_subcommand("sweep", "Re-run generation and eval across one axis");
  std::string axis = "s";
  std::vector<double> values;
  cmd_sweep->add_option("--axis", axis, "Axis: s, lambda, or val_fraction");
  cmd_sweep->add_option("--values", values, "Axis values")->required()->expected(-1);

  CLI::App* cmd_ablate = app.add_subcommand(
      "ablate", "Run the four-arm component ablation (base, screening, gradient, both)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_report->parsed()) {
      std::string manifest =
          riskgen::binio::read_file((std::filesystem::path(out_dir) / "manifest.json").string());
      std::fputs(manifest.c_str(), stdout);
      return 0;
    }
    RunConfig cfg = load_config(config_path, seed);
    if (cmd_sweep->parsed()) {
      riskgen::SweepResult r = riskgen::sweep(cfg, axis, values, out_dir, fresh);
      std::printf("sweep written: %s\n", r.csv_path.c_str());
      std::printf("plot written: %s\n", r.plot_path.c_str());
      return 0;
    }
    if (cmd_ablate->parsed()) {
      riskgen::AblationResult r = riskgen::ablate(cfg, out_dir, fresh);
      std::printf("ablation written: %s\n", r.csv_path.c_str());
      std::printf("plot written: %s\n", r.plot_path.c_str());
      return 0;
    }
    RunStage through = RunStage::Retrain;
    if (cmd_data->parsed()) through = RunStage::Data;
    if (cmd_train->parsed()) through = RunStage::Train;
    if (cmd_generate->parsed()) through = RunStage::Generate;
    if (cmd_eval->parsed()) through = RunStage::Eval;
    if (cmd_retrain->parsed()) through = RunStage::Retrain;
    nlohmann::json manifest = riskgen::run_experiment(cfg, out_dir, through, fresh);
    std::printf("%s\n", manifest.dump(2).c_str());
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
