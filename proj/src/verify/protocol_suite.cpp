#include <chrono>

#include "fedefm/federation/protocol.hpp"
#include "fedefm/harness/experiment.hpp"
#include "fedefm/verify/suites.hpp"

namespace fedefm::verify {

namespace {

using Clock = std::chrono::steady_clock;

std::string compare(const federation::TrainingResult& a, const federation::TrainingResult& b) {
  if (a.metrics.size() != b.metrics.size()) return "metrics row count differs";
  for (std::size_t i = 0; i < a.metrics.size(); ++i)
    if (!a.metrics[i].same_outcome(b.metrics[i])) return "metrics row " + std::to_string(i) + " differs";
  if (!nn::bitwise_equal(a.global.params, b.global.params)) return "global weights differ";
  for (std::size_t i = 0; i < a.final_state.weights.size(); ++i)
    if (!nn::bitwise_equal(a.final_state.weights[i].params, b.final_state.weights[i].params))
      return "silo " + std::to_string(i) + " weights differ";
  if (!(a.final_state.streams == b.final_state.streams)) return "sampling streams differ";
  return {};
}

void audit(SuiteReport& report, const std::string& name, const federation::TrainingResult& run,
           std::uint64_t expected_weights, std::uint64_t round0_weights) {
  for (const auto& t : run.traffic) {
    const std::uint64_t want = t.round == 0 ? round0_weights : expected_weights;
    const bool ok = t.traffic.weight_transfers == want;
    report.record(name + " weight transfers", ok, 0.0,
                  "round " + std::to_string(t.round) + ": " + std::to_string(t.traffic.weight_transfers) +
                      " transfers, expected " + std::to_string(want));
    report.record(name + " sample transfers", t.traffic.sample_transfers == 0, 0.0,
                  "round " + std::to_string(t.round) + ": " + std::to_string(t.traffic.sample_transfers) +
                      " raw minibatches crossed silos");
  }
}

}  // namespace

harness::ExperimentConfig protocol_fixture(const ProtocolSuiteOptions& options) {
  harness::ExperimentConfig cfg;
  cfg.seed = options.seed;
  cfg.silos = options.silos;
  cfg.topology = "ring";
  cfg.rounds = options.rounds;
  cfg.unseen_fraction = 0.5;
  cfg.batch_size = 8;
  cfg.overseas_steps = 2;
  cfg.pretrain_steps = 5;
  cfg.data.per_class = 16;
  cfg.data.eval_per_class = 8;
  cfg.model.num_classes = cfg.data.classes;
  return cfg;
}

SuiteReport protocol_suite(const ProtocolSuiteOptions& options) {
  const auto start = Clock::now();
  SuiteReport report;
  report.suite = "protocol";

  auto cfg = protocol_fixture(options);
  cfg.workers = 1;
  const auto serial = harness::run_experiment(cfg).training;
  const auto repeat = harness::run_experiment(cfg).training;
  cfg.workers = options.parallel_workers;
  const auto parallel = harness::run_experiment(cfg).training;

  auto diff = compare(serial, parallel);
  report.record("serial vs parallel bitwise", diff.empty(), 0.0, diff);
  diff = compare(serial, repeat);
  report.record("repeat run bitwise", diff.empty(), 0.0, diff);

  const auto graph = harness::build_graph(cfg);
  audit(report, "fedefm", serial, 2 * graph.edge_count(), 0);
  audit(report, "fedefm parallel", parallel, 2 * graph.edge_count(), 0);

  cfg.variant = federation::Variant::cfl_averaging;
  cfg.rounds = std::min<std::size_t>(cfg.rounds, 3);
  const auto cfl = harness::run_experiment(cfg).training;
  audit(report, "cfl", cfl, 2 * cfg.silos, 0);

  report.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return report;
}

}  // namespace fedefm::verify
