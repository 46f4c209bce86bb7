#include <Eigen/Core>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "multirater/errors.hpp"
#include "multirater/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIo = 4;

multirater::ExperimentConfig load_config(const std::string& path, int budget_override,
                                         std::uint64_t seed_override, bool has_seed) {
  multirater::ExperimentConfig config = multirater::load_experiment_config(path);
  if (budget_override > 0) config.hyper.budget = budget_override;
  if (has_seed) config.cohort.seed = seed_override;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint consensus + per-rater label modelling for multi-annotator classification"};
  app.require_subcommand(1);

  std::string config_path;
  std::string dataset_path;
  std::string checkpoint_path;
  std::string regime_name = "ConsensusMultiVar";
  std::string out_path;
  std::vector<std::string> report_paths;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int budget = 0;
  int threads = 0;
  bool no_retrain = false;

  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic rater cohort");
  simulate->add_option("--config", config_path, "Experiment config file")->required();
  simulate->add_option("--out", out_path, "Dataset output path (JSONL)")->required();
  simulate->add_option("--seed", seed, "Override cohort.seed")->each([&](const std::string&) {
    seed_given = true;
  });

  auto* train = app.add_subcommand("train", "Train one regime on a dataset");
  train->add_option("--config", config_path)->required();
  train->add_option("--dataset", dataset_path)->required();
  train->add_option("--regime", regime_name, "Training regime name");
  train->add_option("--seed", seed, "Training seed")->each([&](const std::string&) {
    seed_given = true;
  });
  train->add_option("--out", out_path, "Output directory")->required();
  train->add_option("--budget", budget, "Override hyper.budget");

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on a dataset");
  evaluate->add_option("--checkpoint", checkpoint_path)->required();
  evaluate->add_option("--dataset", dataset_path)->required();
  evaluate->add_option("--out", out_path, "Report path prefix (.json/.csv)")->required();
  evaluate->add_option("--regime", regime_name, "Label recorded in the report");
  evaluate->add_option("--seed", seed, "Label recorded in the report");

  auto* compare = app.add_subcommand("compare", "Merge reports into one ranked table");
  compare->add_option("--reports", report_paths, "Metric report JSON files")->required();
  compare->add_option("--out", out_path, "Comparison CSV path")->required();

  auto* introspect =
      app.add_subcommand("introspect", "Flag inconsistent raters and retrain without them");
  introspect->add_option("--config", config_path)->required();
  introspect->add_option("--checkpoint", checkpoint_path)->required();
  introspect->add_option("--dataset", dataset_path)->required();
  introspect->add_option("--seed", seed, "Retraining seed")->each([&](const std::string&) {
    seed_given = true;
  });
  introspect->add_option("--out", out_path, "Introspection report path")->required();
  introspect->add_option("--budget", budget, "Override hyper.budget");
  introspect->add_flag("--no-retrain", no_retrain, "Only flag, do not retrain");

  app.add_option("--threads", threads, "Eigen thread count (0 = library default)");

  CLI11_PARSE(app, argc, argv);
  if (threads > 0) Eigen::setNbThreads(threads);

  try {
    if (simulate->parsed()) {
      multirater::ExperimentConfig config = load_config(config_path, 0, seed, seed_given);
      const std::string manifest = multirater::run_simulate(config, out_path);
      std::cout << "dataset: " << out_path << "\nmanifest: " << manifest << "\n";
    } else if (train->parsed()) {
      multirater::ExperimentConfig config = load_config(config_path, budget, 0, false);
      const multirater::RegimeName regime = multirater::parse_regime(regime_name);
      const std::uint64_t train_seed = seed_given ? seed : config.seeds.front();
      const multirater::TrainOutputs outputs =
          multirater::run_train(config, dataset_path, regime, train_seed, out_path);
      std::cout << "checkpoint: " << outputs.checkpoint_path
                << "\nhistory: " << outputs.history_path << "\n";
    } else if (evaluate->parsed()) {
      const multirater::MetricReport report =
          multirater::run_evaluate(checkpoint_path, dataset_path, out_path, {}, regime_name, seed);
      std::cout << "kld: " << report.kld << "\nmae: " << report.mae_mean << "\nreport: "
                << out_path << ".json\n";
    } else if (compare->parsed()) {
      multirater::run_compare(report_paths, out_path);
      std::cout << "comparison: " << out_path << "\n";
    } else if (introspect->parsed()) {
      multirater::ExperimentConfig config = load_config(config_path, budget, 0, false);
      const std::uint64_t retrain_seed = seed_given ? seed : config.seeds.front();
      const multirater::IntrospectResult result = multirater::run_introspect(
          config, checkpoint_path, dataset_path, retrain_seed, out_path, !no_retrain);
      if (result.flagged.empty()) {
        std::cout << "no action: no inconsistent raters flagged\n";
      } else {
        std::cout << "flagged raters:";
        for (int r : result.flagged) std::cout << ' ' << r;
        std::cout << "\n";
        if (result.retrained) {
          std::cout << "kld " << result.kld_before << " -> " << result.kld_after << "\nmae "
                    << result.mae_before << " -> " << result.mae_after << "\n";
        }
      }
      std::cout << "report: " << out_path << "\n";
    }
  } catch (const multirater::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const multirater::TrainingDivergence& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const multirater::CalibrationFailure& e) {
    std::cerr << "calibration failure: " << e.what() << " (bracket " << e.bracket_low << ", "
              << e.bracket_high << ")\n";
    return kExitDivergence;
  } catch (const multirater::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const multirater::InputDomainError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
