#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedefm/data/dataset.hpp"
#include "fedefm/federation/protocol.hpp"
#include "fedefm/harness/config.hpp"

namespace fedefm::harness {

struct Datasets {
  data::Dataset train;
  data::Dataset eval;
};

/// Synthetic data, or a manifest dataset with the eval set either read from
/// data.eval_manifest or carved out per class.
Datasets build_datasets(const ExperimentConfig& cfg);

federation::SiloGraph build_graph(const ExperimentConfig& cfg);

federation::Federation build_federation(const ExperimentConfig& cfg);

struct ExperimentResult {
  federation::TrainingResult training;
  double accuracy = 0.0;  // global model on the eval set
};

/// Runs training. With a run directory, writes config.json (resolved
/// echo), metrics.jsonl (streamed), theta.ckpt, and on failure
/// last_good.ckpt holding every silo's last good weights.
ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::optional<std::filesystem::path>& run_dir = std::nullopt);

/// run_experiment plus a per-round summary table on `out`.
int cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& run_dir, std::ostream& out);

struct SweepRow {
  double unseen_fraction = 0.0;
  federation::Variant variant = federation::Variant::fedefm;
  double accuracy = 0.0;
};

std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const std::vector<double>& grid,
                                const std::vector<federation::Variant>& variants,
                                const std::function<void(const SweepRow&)>& progress = {});

/// Header `p,variant,accuracy`.
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

struct FinetuneResult {
  double finetuned = 0.0;  // mean over paired repeats
  double scratch = 0.0;
  std::vector<double> finetuned_runs, scratch_runs;
  double delta() const { return finetuned - scratch; }
};

/// Trains the classifier on the held-out task twice per repeat: backbone
/// from `theta` vs random, both with the same fresh head, batches and
/// budget. Throws ShapeError when theta's backbone does not fit cfg.model.
FinetuneResult run_finetune(const ExperimentConfig& cfg, const nn::ModelWeights& theta);

/// The downstream task of run_finetune: (train, eval).
Datasets finetune_datasets(const ExperimentConfig& cfg);

struct ReplayResult {
  bool metrics_match = false;
  bool checkpoint_match = false;
  std::size_t rows = 0;
  std::string detail;
  bool ok() const { return metrics_match && checkpoint_match; }
};

/// Re-runs the experiment recorded in a run directory and compares its
/// metrics (all fields but cycle time) and checkpoint bytes.
ReplayResult replay_run(const std::filesystem::path& run_dir);

}  // namespace fedefm::harness
