#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "fedefm/common/errors.hpp"
#include "fedefm/data/manifest.hpp"
#include "fedefm/harness/checkpoint.hpp"
#include "fedefm/harness/experiment.hpp"
#include "fedefm/verify/suites.hpp"

namespace {

using namespace fedefm;

constexpr int kExitFail = 1;
constexpr int kExitConfig = 2;
constexpr int kExitError = 3;

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double p = 0.0;
    try {
      p = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ConfigError("--grid: '" + item + "' is not a number");
    grid.push_back(p);
  }
  if (grid.empty()) throw ConfigError("--grid: empty");
  return grid;
}

std::vector<federation::Variant> parse_variants(const std::string& text) {
  if (text == "all")
    return {federation::Variant::fedefm, federation::Variant::no_emd, federation::Variant::no_distillation,
            federation::Variant::cfl_averaging};
  std::vector<federation::Variant> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(federation::parse_variant(item));
  return out;
}

harness::ExperimentConfig config_with_overrides(const std::string& path, std::size_t workers) {
  auto cfg = harness::load_config(path);
  if (workers > 0) cfg.workers = workers;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated knowledge distillation with EMD-weighted overseas experts"};
  app.require_subcommand(1);

  std::string config_path, out_path, checkpoint_path, run_dir, grid = "0,0.5,1", variants = "all";
  std::size_t workers = 0;

  auto* train = app.add_subcommand("train", "Run federated training and write a run directory");
  train->add_option("-c,--config", config_path, "Experiment config (JSON)")->required();
  train->add_option("-o,--out", out_path, "Run directory")->required();
  train->add_option("-w,--workers", workers, "Override the worker count");

  auto* sweep = app.add_subcommand("sweep", "Accuracy vs unseen fraction for each variant (CSV)");
  sweep->add_option("-c,--config", config_path, "Experiment config (JSON)")->required();
  sweep->add_option("-g,--grid", grid, "Comma-separated unseen fractions");
  sweep->add_option("--variants", variants, "Comma-separated variants or 'all'");
  sweep->add_option("-o,--out", out_path, "CSV path (default stdout)");
  sweep->add_option("-w,--workers", workers, "Override the worker count");

  std::string suite;
  std::size_t instances = 0;
  auto* verify = app.add_subcommand("verify", "Run an oracle suite");
  verify->add_option("suite", suite, "emd | emd-grad | grad | protocol")
      ->required()
      ->check(CLI::IsMember({"emd", "emd-grad", "grad", "protocol"}));
  verify->add_option("-n,--instances", instances, "Override the number of instances/cases");

  auto* emd_check = app.add_subcommand("emd-check", "EMD oracle-equivalence and gradient suites");

  auto* finetune = app.add_subcommand("finetune", "Fine-tuned vs from-scratch accuracy on the held-out task");
  finetune->add_option("-c,--config", config_path, "Experiment config (JSON)")->required();
  finetune->add_option("-k,--checkpoint", checkpoint_path, "Global weights checkpoint")->required();

  auto* data_cmd = app.add_subcommand("data", "Dataset utilities");
  data_cmd->require_subcommand(1);
  auto* gen = data_cmd->add_subcommand("gen", "Write the configured synthetic dataset as a manifest directory");
  gen->add_option("-c,--config", config_path, "Experiment config (JSON)")->required();
  gen->add_option("-o,--out", out_path, "Output directory")->required();

  auto* replay = app.add_subcommand("replay", "Re-run a run directory and compare metrics and checkpoint");
  replay->add_option("run", run_dir, "Run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const auto cfg = config_with_overrides(config_path, workers);
      return harness::cmd_train(cfg, out_path, std::cout);
    }
    if (*sweep) {
      const auto cfg = config_with_overrides(config_path, workers);
      const auto rows = harness::run_sweep(cfg, parse_grid(grid), parse_variants(variants),
                                           [](const harness::SweepRow& r) {
                                             std::cerr << "p=" << r.unseen_fraction << " "
                                                       << federation::to_string(r.variant) << " accuracy "
                                                       << r.accuracy << "\n";
                                           });
      if (out_path.empty()) {
        harness::write_sweep_csv(std::cout, rows);
      } else {
        std::ofstream out(out_path);
        if (!out) throw ConfigError("--out: cannot write " + out_path);
        harness::write_sweep_csv(out, rows);
      }
      return 0;
    }
    if (*verify) {
      verify::SuiteReport report;
      if (suite == "emd") {
        verify::EmdSuiteOptions o;
        if (instances) o.instances = instances;
        report = verify::emd_oracle_suite(o);
      } else if (suite == "emd-grad") {
        verify::EmdGradientOptions o;
        if (instances) o.instances = instances;
        report = verify::emd_gradient_suite(o);
      } else if (suite == "grad") {
        verify::GradSuiteOptions o;
        if (instances) o.cases = instances;
        report = verify::grad_suite(o);
      } else {
        verify::ProtocolSuiteOptions o;
        if (instances) o.rounds = instances;
        report = verify::protocol_suite(o);
      }
      report.print(std::cout);
      return report.ok() ? 0 : kExitFail;
    }
    if (*emd_check) {
      const auto oracle = verify::emd_oracle_suite();
      const auto gradient = verify::emd_gradient_suite();
      oracle.print(std::cout);
      gradient.print(std::cout);
      return oracle.ok() && gradient.ok() ? 0 : kExitFail;
    }
    if (*finetune) {
      const auto cfg = harness::load_config(config_path);
      const auto ckpt = harness::load_checkpoint(checkpoint_path);
      const auto r = harness::run_finetune(cfg, ckpt.weights);
      std::cout << std::fixed << std::setprecision(4) << "fine-tuned " << r.finetuned << "\nfrom-scratch "
                << r.scratch << "\ndelta " << r.delta() << "\n";
      return 0;
    }
    if (*gen) {
      const auto cfg = harness::load_config(config_path);
      const auto sets = harness::build_datasets(cfg);
      data::write_manifest_dataset(sets.train, std::filesystem::path(out_path) / "train");
      data::write_manifest_dataset(sets.eval, std::filesystem::path(out_path) / "eval");
      std::cout << "wrote " << sets.train.size() << " train and " << sets.eval.size() << " eval samples to "
                << out_path << "\n";
      return 0;
    }
    if (*replay) {
      const auto r = harness::replay_run(run_dir);
      std::cout << "rows " << r.rows << "\nmetrics " << (r.metrics_match ? "match" : "DIFFER") << "\ncheckpoint "
                << (r.checkpoint_match ? "match" : "DIFFER") << "\n";
      if (!r.detail.empty()) std::cout << r.detail << "\n";
      return r.ok() ? 0 : kExitFail;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return 0;
}
