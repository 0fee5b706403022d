#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedefm/data/dataset.hpp"
#include "fedefm/data/sampler.hpp"
#include "fedefm/distill/distill.hpp"
#include "fedefm/emd/layer.hpp"
#include "fedefm/federation/bus.hpp"
#include "fedefm/federation/graph.hpp"
#include "fedefm/nn/model.hpp"

namespace fedefm::federation {

/// fedefm: overseas experts + EMD-weighted distillation.
/// no_emd: same, every EMD weight forced to 1.
/// no_distillation: independent local SGD per silo.
/// cfl_averaging: client-server averaging of locally trained copies.
enum class Variant { fedefm, no_emd, no_distillation, cfl_averaging };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

struct ProtocolConfig {
  Variant variant = Variant::fedefm;
  distill::DistillConfig distill;
  emd::EmdOptions emd;
  std::size_t rounds = 10;           // K
  std::size_t batch_size = 16;
  std::size_t overseas_steps = 5;    // S
  std::size_t pretrain_steps = 50;   // round 0
  std::size_t local_steps = 1;       // distillation updates per round
  std::size_t eval_every = 1;
  std::size_t workers = 1;
  bool record_timing = true;
  std::vector<int> participation;    // aggregation indicators; empty = all 1
  std::uint64_t seed = 1;
};

/// Silo id indicators for the final aggregation.
struct AggregationSpec {
  std::vector<int> participation;
};

/// (sum_i p_i theta_i) / (sum_i p_i). Throws InputError when no silo
/// participates, ShapeError on incongruent weights.
nn::ModelWeights aggregate(const std::vector<nn::ModelWeights>& weights, const AggregationSpec& spec);

/// S SGD steps on cross-entropy over minibatches of `data`; the caller's
/// weights are not modified. Throws ProtocolError on an empty dataset.
nn::ModelWeights overseas_train(const nn::ModelWeights& weights, const data::Dataset& data, std::size_t steps,
                                double lr, std::size_t batch_size, data::MinibatchStream& stream);

struct MetricsRow {
  std::size_t round = 0;
  std::optional<std::size_t> silo;  // nullopt for the global row
  double train_loss = 0.0;
  std::optional<double> eval_accuracy;
  std::vector<std::pair<std::size_t, double>> emd_weights;  // (neighbor, weight)
  double cycle_time_ms = 0.0;

  /// Equality ignoring cycle_time_ms, bitwise on doubles.
  bool same_outcome(const MetricsRow& other) const;
};

/// Sampling streams owned by silo i's work item: its own data stream and,
/// per neighbor j, the stream its overseas experts use on j's data.
struct SiloStreams {
  data::MinibatchStream local;
  std::vector<std::pair<std::size_t, data::MinibatchStream>> visiting;

  data::MinibatchStream& visiting_stream(std::size_t neighbor);
  friend bool operator==(const SiloStreams&, const SiloStreams&) = default;
};

struct RoundState {
  std::size_t round = 0;  // next round to run
  std::vector<nn::ModelWeights> weights;
  std::vector<SiloStreams> streams;
  std::vector<MetricsRow> metrics;
};

struct RoundTraffic {
  std::size_t round = 0;
  TrafficCounters traffic;
};

/// Everything a run needs. Silo datasets are private to their silo: only
/// the silo's own work item samples from them.
struct Federation {
  SiloGraph graph;
  std::vector<data::Dataset> silo_data;
  data::Dataset eval_set;
  nn::Architecture arch;
  ProtocolConfig config;

  void validate() const;
};

RoundState initial_state(const Federation& fed);

/// Round 0: pretrain_steps local SGD steps per silo, no communication.
RoundState pretrain_round(const RoundState& state, const Federation& fed, MessageBus& bus);

/// One synchronous communication round. Reads only `state`, writes a fresh
/// state for round + 1.
RoundState run_round(const RoundState& state, const Federation& fed, MessageBus& bus);

struct TrainingResult {
  nn::ModelWeights global;
  std::vector<MetricsRow> metrics;
  std::vector<RoundTraffic> traffic;
  RoundState final_state;
};

struct RoundFailure {
  std::size_t round;
  const RoundState& last_good;
};

/// Rounds 0..K-1 then aggregation. On a round error `on_failure` is given the
/// last good state before the error propagates, tagged with the round.
TrainingResult run_training(const Federation& fed,
                            const std::function<void(const RoundFailure&)>& on_failure = {},
                            const std::function<void(const MetricsRow&)>& sink = {});

double evaluate(const nn::ModelWeights& weights, const data::Dataset& eval_set);

}  // namespace fedefm::federation
