// cwhar: synthetic data generation, contrastive pretraining, fine-tuning,
// supervised baselines and reports from the command line.

#include <CLI11.hpp>

#include <iostream>

#include "cwhar/commands.h"
#include "cwhar/errors.h"

namespace {

using namespace cwhar;
using namespace cwhar::cli;

ExperimentConfig config_from(const std::optional<std::string>& path) {
  return path ? ExperimentConfig::load(*path) : ExperimentConfig{};
}

std::optional<fs::path> as_path(const std::optional<std::string>& s) {
  if (!s) return std::nullopt;
  return fs::path(*s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view contrastive pretraining and few-shot activity classification"};
  app.require_subcommand(1);

  GenerateOptions gen;
  std::string gen_out;
  auto* generate = app.add_subcommand("generate", "Write a synthetic dataset container");
  generate->add_option("--out", gen_out, "Output directory")->required();
  generate->add_option("--per-class", gen.per_class, "Samples per activity class")->capture_default_str();
  generate->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  generate->add_option("--rho", gen.rho, "View correlation in [0, 1]; each view adds sigma*(1-rho) noise")->capture_default_str();
  generate->add_option("--sigma", gen.sigma, "Noise standard deviation")->capture_default_str();
  generate->add_option("--onset-jitter", gen.onset_jitter, "Largest shift of the activity centre, fraction of the window")
      ->capture_default_str();
  generate->add_option("--projection-floor", gen.projection_floor,
                       "Smallest Doppler projection a receiver keeps, in (0, 1]; 1 disables geometry")
      ->capture_default_str();
  generate->add_option("--profile", gen.profile, "Spectrogram sizes: desk or full")->capture_default_str();

  std::optional<std::string> pre_config, pre_data, pre_views, pre_out;
  std::optional<std::uint64_t> pre_seed;
  auto* pretrain = app.add_subcommand("pretrain", "Contrastive pretraining of two view encoders");
  pretrain->add_option("--config", pre_config, "Experiment config JSON");
  pretrain->add_option("--data", pre_data, "Dataset directory");
  pretrain->add_option("--views", pre_views, "View pair: csi1,csi2 or csi1,pwr");
  pretrain->add_option("--seed", pre_seed, "Run seed (overrides the config)");
  pretrain->add_option("--out", pre_out, "Run directory");

  std::string ft_checkpoint, ft_shots = "10", ft_out;
  std::optional<std::string> ft_data, ft_config;
  std::uint64_t ft_seed = 0;
  auto* finetune = app.add_subcommand("finetune", "Few-shot classifier on frozen pretrained encoders");
  finetune->add_option("--checkpoint", ft_checkpoint, "Pretraining checkpoint directory")->required();
  finetune->add_option("--data", ft_data, "Dataset directory");
  finetune->add_option("--shots", ft_shots, "Labelled examples per class: 1, 5, 10, ... or all")->capture_default_str();
  finetune->add_option("--seed", ft_seed, "Subset and classifier seed")->capture_default_str();
  finetune->add_option("--config", ft_config, "Experiment config JSON (default: the one stored in the checkpoint)");
  finetune->add_option("--out", ft_out, "Run directory")->required();

  std::optional<std::string> bl_config, bl_data, bl_out;
  std::string bl_views = "csi1", bl_shots = "10";
  std::optional<std::uint64_t> bl_seed;
  auto* baseline = app.add_subcommand("baseline", "Supervised model trained end-to-end without pretraining");
  baseline->add_option("--config", bl_config, "Experiment config JSON");
  baseline->add_option("--data", bl_data, "Dataset directory");
  baseline->add_option("--views", bl_views, "csi1 or joint")->capture_default_str();
  baseline->add_option("--shots", bl_shots, "Labelled examples per class or all")->capture_default_str();
  baseline->add_option("--seed", bl_seed, "Run seed (overrides the config)");
  baseline->add_option("--out", bl_out, "Run directory");

  std::vector<std::string> rp_runs;
  std::string rp_out;
  auto* report = app.add_subcommand("report", "Comparison tables, curve CSVs and SVG charts");
  report->add_option("--runs", rp_runs, "Run directories (searched recursively)")->required()->expected(1, -1);
  report->add_option("--out", rp_out, "Report directory")->required();

  std::optional<std::string> ex_config, ex_data, ex_out;
  auto* experiment = app.add_subcommand("experiment", "Pretrain, fine-tune and baselines for every seed, then report");
  experiment->add_option("--config", ex_config, "Experiment config JSON");
  experiment->add_option("--data", ex_data, "Dataset directory");
  experiment->add_option("--out", ex_out, "Experiment directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitArgument;
  }

  try {
    if (*generate) {
      gen.out = gen_out;
      run_generate(gen);
    } else if (*pretrain) {
      ExperimentConfig cfg = config_from(pre_config);
      if (pre_views) cfg.view_pair = parse_view_pair(*pre_views);
      const Dataset data = load_data(as_path(pre_data), cfg);
      pretrain_run(cfg, data, pre_seed.value_or(cfg.seed), resolve_out(as_path(pre_out), cfg));
    } else if (*finetune) {
      std::optional<ExperimentConfig> cfg;
      if (ft_config) cfg = ExperimentConfig::load(*ft_config);
      const auto shots = parse_shots(ft_shots);
      const Dataset data = load_data(as_path(ft_data), cfg.value_or(ExperimentConfig{}));
      finetune_run(ft_checkpoint, cfg, data, shots, ft_seed, ft_out);
    } else if (*baseline) {
      const ExperimentConfig cfg = config_from(bl_config);
      const auto views = train::parse_baseline_views(bl_views);
      const auto shots = parse_shots(bl_shots);
      const Dataset data = load_data(as_path(bl_data), cfg);
      baseline_run(cfg, data, views, shots, bl_seed.value_or(cfg.seed), resolve_out(as_path(bl_out), cfg));
    } else if (*report) {
      std::vector<fs::path> roots(rp_runs.begin(), rp_runs.end());
      report_run(roots, rp_out);
    } else if (*experiment) {
      const ExperimentConfig cfg = config_from(ex_config);
      const Dataset data = load_data(as_path(ex_data), cfg);
      experiment_run(cfg, data, resolve_out(as_path(ex_out), cfg));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitOk;
}
