#include "fedefm/harness/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <map>
#include <ostream>

#include "fedefm/common/errors.hpp"
#include "fedefm/common/log.hpp"
#include "fedefm/common/rng.hpp"
#include "fedefm/data/manifest.hpp"
#include "fedefm/data/partition.hpp"
#include "fedefm/data/sampler.hpp"
#include "fedefm/harness/checkpoint.hpp"
#include "fedefm/harness/metrics.hpp"
#include "fedefm/nn/ops.hpp"

namespace fedefm::harness {

namespace {

constexpr std::uint64_t kPartitionTag = 0x50415254;
constexpr std::uint64_t kCarveTag = 0x43415256;
constexpr std::uint64_t kFinetuneTag = 0x46494e45;

bool is_head(const std::string& name) { return name.rfind("head.", 0) == 0; }

data::Dataset subset(const data::Dataset& src, const std::vector<std::size_t>& idx) {
  data::Dataset out{{}, src.classes, src.side, src.provenance};
  for (auto i : idx) out.samples.push_back(src.samples[i]);
  return out;
}

void check_side(const data::Dataset& d, const ExperimentConfig& cfg, const std::string& key) {
  if (d.side != cfg.model.image_side)
    throw ConfigError(key + ": images are " + std::to_string(d.side) + " pixels wide but model.image_side is " +
                      std::to_string(cfg.model.image_side));
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Datasets build_datasets(const ExperimentConfig& cfg) {
  Datasets out;
  if (cfg.data.manifest.empty()) {
    data::SyntheticSpec spec;
    spec.classes = cfg.data.classes;
    spec.per_class = cfg.data.per_class;
    spec.side = cfg.model.image_side;
    spec.patch_size = cfg.model.patch_size;
    spec.atoms = cfg.data.atoms;
    spec.noise = cfg.data.noise;
    spec.seed = cfg.seed;
    out.train = data::generate_synthetic(spec);
    spec.per_class = cfg.data.eval_per_class;
    spec.split = 1;
    out.eval = data::generate_synthetic(spec);
    return out;
  }

  auto full = data::read_manifest_dataset(cfg.data.manifest);
  check_side(full, cfg, "data.manifest");
  if (!cfg.data.eval_manifest.empty()) {
    out.train = std::move(full);
    out.eval = data::read_manifest_dataset(cfg.data.eval_manifest);
    check_side(out.eval, cfg, "data.eval_manifest");
    out.eval.classes = out.train.classes = std::max(out.train.classes, out.eval.classes);
    return out;
  }
  std::vector<std::vector<std::size_t>> by_class(full.classes);
  for (std::size_t i = 0; i < full.size(); ++i) by_class[full.samples[i].label].push_back(i);
  std::vector<std::size_t> train_idx, eval_idx;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    Rng rng(derive_seed(cfg.seed, {kCarveTag, c}));
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t take = std::min(cfg.data.eval_per_class, idx.size() > 0 ? idx.size() - 1 : 0);
    eval_idx.insert(eval_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
    train_idx.insert(train_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(eval_idx.begin(), eval_idx.end());
  out.train = subset(full, train_idx);
  out.eval = subset(full, eval_idx);
  return out;
}

federation::SiloGraph build_graph(const ExperimentConfig& cfg) {
  if (cfg.topology == "ring") return federation::SiloGraph::ring(cfg.silos);
  if (cfg.topology == "star") return federation::SiloGraph::star(cfg.silos);
  if (cfg.topology == "complete") return federation::SiloGraph::complete(cfg.silos);
  return federation::SiloGraph::custom(cfg.silos, cfg.edges);
}

federation::Federation build_federation(const ExperimentConfig& cfg) {
  cfg.validate();
  auto sets = build_datasets(cfg);
  if (cfg.unseen_fraction == 1.0 && sets.train.classes < cfg.silos)
    throw ConfigError("unseen_fraction: 1.0 needs at least one label per silo");
  auto split = data::partition_unseen(sets.train, cfg.silos, cfg.unseen_fraction,
                                      derive_seed(cfg.seed, {kPartitionTag}));
  federation::ProtocolConfig pc;
  pc.variant = cfg.variant;
  pc.distill = cfg.distill;
  pc.emd = cfg.emd;
  pc.rounds = cfg.rounds;
  pc.batch_size = cfg.batch_size;
  pc.overseas_steps = cfg.overseas_steps;
  pc.pretrain_steps = cfg.pretrain_steps;
  pc.local_steps = cfg.local_steps;
  pc.eval_every = cfg.eval_every;
  pc.workers = cfg.workers;
  pc.record_timing = cfg.timing;
  pc.participation = cfg.aggregation;
  pc.seed = cfg.seed;
  auto arch = cfg.model;
  arch.num_classes = sets.train.classes;
  federation::Federation fed{build_graph(cfg), std::move(split.silos), std::move(sets.eval), arch, pc};
  fed.validate();
  return fed;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& run_dir) {
  const auto fed = build_federation(cfg);
  const auto digest = config_digest(cfg);
  std::optional<MetricsWriter> writer;
  if (run_dir) {
    std::filesystem::create_directories(*run_dir);
    std::ofstream(*run_dir / "config.json") << to_json(cfg).dump(2) << '\n';
    writer.emplace(*run_dir / "metrics.jsonl");
  }
  auto on_failure = [&](const federation::RoundFailure& f) {
    if (!run_dir || f.last_good.weights.empty()) return;
    Checkpoint ckpt{federation::aggregate(f.last_good.weights, {std::vector<int>(f.last_good.weights.size(), 1)}),
                    digest,
                    {}};
    for (std::size_t i = 0; i < f.last_good.weights.size(); ++i)
      for (const auto& [name, t] : f.last_good.weights[i].params)
        ckpt.extras.emplace_back("silo" + std::to_string(i) + "/" + name, t);
    save_checkpoint(*run_dir / "last_good.ckpt", ckpt);
    log::warn("round ", f.round, " failed; last good state (round ", f.last_good.round, ") saved to ",
              (*run_dir / "last_good.ckpt").string());
  };
  auto sink = [&](const federation::MetricsRow& row) {
    if (writer) writer->write(row);
  };
  ExperimentResult result;
  result.training = federation::run_training(fed, on_failure, sink);
  result.accuracy = federation::evaluate(result.training.global, fed.eval_set);
  if (run_dir) save_checkpoint(*run_dir / "theta.ckpt", Checkpoint{result.training.global, digest, {}});
  return result;
}

int cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& run_dir, std::ostream& out) {
  const auto result = run_experiment(cfg, run_dir);
  out << "round  mean_loss  global_acc  mean_cycle_ms\n";
  std::map<std::size_t, std::pair<double, std::size_t>> cycle;
  for (const auto& row : result.training.metrics)
    if (row.silo) {
      cycle[row.round].first += row.cycle_time_ms;
      cycle[row.round].second++;
    }
  for (const auto& row : result.training.metrics) {
    if (row.silo) continue;
    const auto& [total, count] = cycle[row.round];
    out << std::setw(5) << row.round << "  " << std::fixed << std::setprecision(4) << std::setw(9) << row.train_loss
        << "  ";
    if (row.eval_accuracy)
      out << std::setw(10) << *row.eval_accuracy;
    else
      out << std::setw(10) << "-";
    out << "  " << std::setprecision(2) << std::setw(13) << (count ? total / double(count) : 0.0) << "\n";
  }
  out << "final global accuracy " << std::setprecision(4) << result.accuracy << "\n";
  out << "run directory " << run_dir.string() << "\n";
  return 0;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const std::vector<double>& grid,
                                const std::vector<federation::Variant>& variants,
                                const std::function<void(const SweepRow&)>& progress) {
  std::vector<SweepRow> rows;
  for (double p : grid) {
    for (auto v : variants) {
      auto cfg = base;
      cfg.unseen_fraction = p;
      cfg.variant = v;
      cfg.validate();
      SweepRow row{p, v, run_experiment(cfg).accuracy};
      if (progress) progress(row);
      rows.push_back(row);
    }
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "p,variant,accuracy\n";
  for (const auto& r : rows)
    out << r.unseen_fraction << "," << federation::to_string(r.variant) << "," << std::setprecision(6)
        << r.accuracy << "\n";
}

Datasets finetune_datasets(const ExperimentConfig& cfg) {
  data::SyntheticSpec spec;
  spec.classes = cfg.finetune.classes;
  spec.per_class = cfg.finetune.shots;
  spec.side = cfg.model.image_side;
  spec.patch_size = cfg.model.patch_size;
  spec.atoms = cfg.data.atoms;
  spec.noise = cfg.finetune.noise;
  spec.seed = cfg.seed;
  spec.class_offset = cfg.data.classes;
  spec.split = 2;
  Datasets out;
  out.train = data::generate_synthetic(spec);
  spec.per_class = cfg.finetune.eval_per_class;
  spec.split = 3;
  out.eval = data::generate_synthetic(spec);
  return out;
}

FinetuneResult run_finetune(const ExperimentConfig& cfg, const nn::ModelWeights& theta) {
  const auto& ft = cfg.finetune;
  auto arch = cfg.model;
  arch.num_classes = ft.classes;
  auto expected = theta.arch;
  expected.num_classes = ft.classes;
  if (!(expected == arch))
    throw ShapeError("finetune: checkpoint architecture does not match the configured model");
  nn::check_weights(theta);
  const auto sets = finetune_datasets(cfg);

  FinetuneResult result;
  for (std::size_t r = 0; r < ft.repeats; ++r) {
    const auto head_init = nn::init_weights(arch, derive_seed(cfg.seed, {kFinetuneTag, r, 1}));
    const auto random_init = nn::init_weights(arch, derive_seed(cfg.seed, {kFinetuneTag, r, 2}));
    const auto stream_seed = derive_seed(cfg.seed, {kFinetuneTag, r, 3});

    nn::ModelWeights pretrained{arch, {}}, scratch{arch, {}};
    for (const auto& [name, t] : head_init.params) {
      pretrained.params.add(name, is_head(name) ? t : theta.params.at(name));
      scratch.params.add(name, is_head(name) ? t : random_init.params.at(name));
    }
    auto train = [&](nn::ModelWeights w) {
      data::MinibatchStream stream(stream_seed);
      for (std::size_t s = 0; s < ft.steps; ++s) {
        const auto batch = data::sample_minibatch(sets.train, ft.batch_size, stream);
        auto vg = nn::value_and_grad(
            w,
            [&](nn::Graph& g, const nn::ParamVars& p, const data::Minibatch& b) {
              return nn::cross_entropy_loss(nn::forward(g, w.arch, p, b.images).logits, b.labels);
            },
            batch);
        if (!ft.train_backbone)
          for (auto& [name, t] : vg.grads.params)
            if (!is_head(name)) std::fill(t.values().begin(), t.values().end(), 0.0);
        w = nn::sgd_step(w, vg.grads, ft.learning_rate);
      }
      return federation::evaluate(w, sets.eval);
    };
    result.finetuned_runs.push_back(train(pretrained));
    result.scratch_runs.push_back(train(scratch));
  }
  for (std::size_t r = 0; r < ft.repeats; ++r) {
    result.finetuned += result.finetuned_runs[r] / double(ft.repeats);
    result.scratch += result.scratch_runs[r] / double(ft.repeats);
  }
  return result;
}

ReplayResult replay_run(const std::filesystem::path& run_dir) {
  ReplayResult out;
  std::ifstream in(run_dir / "config.json");
  if (!in) throw FormatError("replay: " + (run_dir / "config.json").string() + " not found");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("replay: config.json is not valid JSON: ") + e.what());
  }
  const auto cfg = from_json(doc, run_dir);
  const auto recorded = read_metrics(run_dir / "metrics.jsonl");
  const auto recorded_ckpt = read_bytes(run_dir / "theta.ckpt");

  const auto result = run_experiment(cfg);
  const auto& rows = result.training.metrics;
  out.rows = rows.size();
  out.metrics_match = rows.size() == recorded.size();
  if (!out.metrics_match) out.detail = "row count " + std::to_string(rows.size()) + " vs " +
                                       std::to_string(recorded.size());
  for (std::size_t i = 0; out.metrics_match && i < rows.size(); ++i) {
    if (!rows[i].same_outcome(recorded[i])) {
      out.metrics_match = false;
      out.detail = "metrics row " + std::to_string(i) + " differs";
    }
  }
  out.checkpoint_match =
      encode_checkpoint(Checkpoint{result.training.global, config_digest(cfg), {}}) == recorded_ckpt;
  if (!out.checkpoint_match && out.detail.empty()) out.detail = "theta.ckpt differs";
  return out;
}

}  // namespace fedefm::harness
