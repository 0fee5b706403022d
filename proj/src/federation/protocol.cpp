#include "fedefm/federation/protocol.hpp"

#include <chrono>
#include <cstring>
#include <exception>

#include "fedefm/common/errors.hpp"
#include "fedefm/common/log.hpp"
#include "fedefm/common/parallel.hpp"
#include "fedefm/common/rng.hpp"

namespace fedefm::federation {

namespace {

constexpr std::uint64_t kInitTag = 0x494e4954;
constexpr std::uint64_t kLocalTag = 0x4c4f4341;
constexpr std::uint64_t kVisitTag = 0x56495349;

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

bool bits_equal(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

bool eval_due(std::size_t round, const ProtocolConfig& cfg) {
  if (round + 1 == cfg.rounds) return true;
  return cfg.eval_every > 0 && round % cfg.eval_every == 0;
}

AggregationSpec aggregation_spec(const Federation& fed) {
  AggregationSpec spec{fed.config.participation};
  if (spec.participation.empty()) spec.participation.assign(fed.graph.silos(), 1);
  return spec;
}

/// Runs `work(i)` for every silo, tagging failures with round and silo.
template <class Work>
void for_each_silo(const Federation& fed, std::size_t round, Work&& work) {
  parallel_for(fed.graph.silos(), fed.config.workers, [&](std::size_t i) {
    try {
      work(i);
    } catch (const std::exception& e) {
      std::throw_with_nested(
          ProtocolError("round " + std::to_string(round) + " silo " + std::to_string(i) + ": " + e.what()));
    }
  });
}

struct SiloOutcome {
  nn::ModelWeights weights;
  SiloStreams streams;
  MetricsRow row;
};

/// `steps` SGD steps on the silo's own data; the loss of the first batch
/// (before any update) is reported.
SiloOutcome local_training(const nn::ModelWeights& start, SiloStreams streams, const data::Dataset& own,
                           std::size_t steps, double lr, std::size_t batch_size) {
  SiloOutcome out{start, std::move(streams), {}};
  auto batch = data::sample_minibatch(own, batch_size, out.streams.local);
  out.row.train_loss = distill::batch_loss(out.weights, batch);
  for (std::size_t s = 0; s < steps; ++s) {
    if (s > 0) batch = data::sample_minibatch(own, batch_size, out.streams.local);
    out.weights = distill::local_pretrain_step(out.weights, batch, lr);
  }
  return out;
}

SiloOutcome distillation_round(const RoundState& state, const Federation& fed, MessageBus& bus, std::size_t i) {
  const auto& cfg = fed.config;
  const auto& neighbors = fed.graph.neighbors(i);
  const double lr = cfg.distill.lr_at(state.round);
  const auto& theta = state.weights[i];
  if (neighbors.empty())
    return local_training(theta, state.streams[i], fed.silo_data[i], cfg.local_steps, lr, cfg.batch_size);

  SiloOutcome out{theta, state.streams[i], {}};
  const auto probe = data::sample_minibatch(fed.silo_data[i], cfg.batch_size, out.streams.local);
  out.row.train_loss = distill::batch_loss(theta, probe);

  distill::TeacherSet teachers;
  for (auto j : neighbors) {
    auto at_j = bus.transmit_weights(i, j, MessageKind::dispatch, theta);
    auto expert = overseas_train(at_j, fed.silo_data[j], cfg.overseas_steps, lr, cfg.batch_size,
                                 out.streams.visiting_stream(j));
    auto returned = bus.transmit_weights(j, i, MessageKind::expert_return, expert);
    double w = 1.0;
    if (cfg.variant == Variant::fedefm) w = emd::emd_between_models(theta, returned, probe, cfg.emd);
    out.row.emd_weights.emplace_back(j, w);
    teachers.push_back({j, std::move(returned), w});
  }

  auto batch = probe;
  for (std::size_t s = 0; s < cfg.local_steps; ++s) {
    if (s > 0) batch = data::sample_minibatch(fed.silo_data[i], cfg.batch_size, out.streams.local);
    out.weights = distill::local_update(out.weights, teachers, batch, cfg.distill, state.round);
  }
  return out;
}

RoundState assemble(const RoundState& state, const Federation& fed, std::vector<SiloOutcome>& outcomes) {
  RoundState next;
  next.round = state.round + 1;
  next.metrics = state.metrics;
  const bool eval = eval_due(state.round, fed.config);
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    auto& o = outcomes[i];
    o.row.round = state.round;
    o.row.silo = i;
    if (!fed.config.record_timing) o.row.cycle_time_ms = 0.0;
    loss_sum += o.row.train_loss;
    next.weights.push_back(std::move(o.weights));
    next.streams.push_back(std::move(o.streams));
  }
  std::vector<std::optional<double>> accuracies(outcomes.size());
  if (eval && !fed.eval_set.empty()) {
    parallel_for(outcomes.size(), fed.config.workers,
                 [&](std::size_t i) { accuracies[i] = evaluate(next.weights[i], fed.eval_set); });
  }
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    outcomes[i].row.eval_accuracy = accuracies[i];
    next.metrics.push_back(std::move(outcomes[i].row));
  }
  MetricsRow global;
  global.round = state.round;
  global.train_loss = outcomes.empty() ? 0.0 : loss_sum / static_cast<double>(outcomes.size());
  if (eval && !fed.eval_set.empty())
    global.eval_accuracy = evaluate(aggregate(next.weights, aggregation_spec(fed)), fed.eval_set);
  next.metrics.push_back(std::move(global));
  return next;
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::fedefm: return "fedefm";
    case Variant::no_emd: return "no_emd";
    case Variant::no_distillation: return "no_distillation";
    case Variant::cfl_averaging: return "cfl_averaging";
  }
  return "fedefm";
}

Variant parse_variant(const std::string& name) {
  for (auto v : {Variant::fedefm, Variant::no_emd, Variant::no_distillation, Variant::cfl_averaging})
    if (to_string(v) == name) return v;
  throw ConfigError("variant: unknown value '" + name + "'");
}

nn::ModelWeights aggregate(const std::vector<nn::ModelWeights>& weights, const AggregationSpec& spec) {
  if (spec.participation.size() != weights.size())
    throw InputError("aggregate: participation vector has " + std::to_string(spec.participation.size()) +
                     " entries for " + std::to_string(weights.size()) + " silos");
  std::size_t first = weights.size();
  std::size_t count = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const int p = spec.participation[i];
    if (p != 0 && p != 1) throw InputError("aggregate: participation indicators must be 0 or 1");
    if (p == 1) {
      if (first == weights.size()) first = i;
      ++count;
    }
  }
  if (count == 0) throw InputError("aggregate: no participating silo");

  nn::ModelWeights out = weights[first];
  for (std::size_t i = first + 1; i < weights.size(); ++i) {
    if (spec.participation[i] == 0) continue;
    if (!(weights[i].arch == out.arch) || !weights[i].params.congruent(out.params))
      throw ShapeError("aggregate: silo " + std::to_string(i) + " weights are not congruent");
    auto dst = out.params.begin();
    for (auto src = weights[i].params.begin(); src != weights[i].params.end(); ++src, ++dst) {
      auto d = dst->second.values();
      auto s = src->second.values();
      for (std::size_t k = 0; k < d.size(); ++k) d[k] += s[k];
    }
  }
  if (count > 1) {
    const double denom = static_cast<double>(count);
    for (auto& [name, t] : out.params)
      for (auto& x : t.values()) x /= denom;
  }
  return out;
}

nn::ModelWeights overseas_train(const nn::ModelWeights& weights, const data::Dataset& data, std::size_t steps,
                                double lr, std::size_t batch_size, data::MinibatchStream& stream) {
  if (data.empty()) throw ProtocolError("overseas_train: silo dataset is empty");
  if (steps == 0) throw ProtocolError("overseas_train: steps must be at least 1");
  nn::ModelWeights out = weights;
  for (std::size_t s = 0; s < steps; ++s) {
    const auto batch = data::sample_minibatch(data, batch_size, stream);
    out = distill::local_pretrain_step(out, batch, lr);
  }
  return out;
}

bool MetricsRow::same_outcome(const MetricsRow& o) const {
  if (round != o.round || silo != o.silo || !bits_equal(train_loss, o.train_loss)) return false;
  if (eval_accuracy.has_value() != o.eval_accuracy.has_value()) return false;
  if (eval_accuracy && !bits_equal(*eval_accuracy, *o.eval_accuracy)) return false;
  if (emd_weights.size() != o.emd_weights.size()) return false;
  for (std::size_t k = 0; k < emd_weights.size(); ++k)
    if (emd_weights[k].first != o.emd_weights[k].first || !bits_equal(emd_weights[k].second, o.emd_weights[k].second))
      return false;
  return true;
}

data::MinibatchStream& SiloStreams::visiting_stream(std::size_t neighbor) {
  for (auto& [j, stream] : visiting)
    if (j == neighbor) return stream;
  throw ProtocolError("no sampling stream for neighbor " + std::to_string(neighbor));
}

void Federation::validate() const {
  arch.validate();
  config.distill.validate();
  const std::size_t n = graph.silos();
  if (silo_data.size() != n)
    throw ConfigError("silos: " + std::to_string(silo_data.size()) + " datasets for " + std::to_string(n) + " silos");
  if (config.rounds == 0) throw ConfigError("rounds: must be at least 1");
  if (config.batch_size == 0) throw ConfigError("batch_size: must be at least 1");
  if (config.overseas_steps == 0) throw ConfigError("overseas_steps: must be at least 1");
  if (config.local_steps == 0) throw ConfigError("local_steps: must be at least 1");
  if (config.workers == 0) throw ConfigError("workers: must be at least 1");
  if (!config.participation.empty() && config.participation.size() != n)
    throw ConfigError("aggregation: expected " + std::to_string(n) + " indicators");
  for (std::size_t i = 0; i < n; ++i) {
    if (silo_data[i].empty()) throw ProtocolError("silo " + std::to_string(i) + " has no data");
    if (silo_data[i].size() < config.batch_size)
      throw ConfigError("batch_size: exceeds the " + std::to_string(silo_data[i].size()) + " samples of silo " +
                        std::to_string(i));
  }
}

RoundState initial_state(const Federation& fed) {
  RoundState s;
  const auto theta0 = nn::init_weights(fed.arch, derive_seed(fed.config.seed, {kInitTag}));
  for (std::size_t i = 0; i < fed.graph.silos(); ++i) {
    s.weights.push_back(theta0);
    SiloStreams streams{data::MinibatchStream(derive_seed(fed.config.seed, {kLocalTag, i})), {}};
    for (auto j : fed.graph.neighbors(i))
      streams.visiting.emplace_back(j, data::MinibatchStream(derive_seed(fed.config.seed, {kVisitTag, i, j})));
    s.streams.push_back(std::move(streams));
  }
  return s;
}

RoundState pretrain_round(const RoundState& state, const Federation& fed, MessageBus&) {
  std::vector<SiloOutcome> outcomes(fed.graph.silos());
  const double lr = fed.config.distill.lr_at(state.round);
  for_each_silo(fed, state.round, [&](std::size_t i) {
    const auto start = Clock::now();
    outcomes[i] = local_training(state.weights[i], state.streams[i], fed.silo_data[i], fed.config.pretrain_steps, lr,
                                 fed.config.batch_size);
    outcomes[i].row.cycle_time_ms = elapsed_ms(start);
  });
  return assemble(state, fed, outcomes);
}

RoundState run_round(const RoundState& state, const Federation& fed, MessageBus& bus) {
  const auto& cfg = fed.config;
  const std::size_t n = fed.graph.silos();
  std::vector<SiloOutcome> outcomes(n);
  const double lr = cfg.distill.lr_at(state.round);

  switch (cfg.variant) {
    case Variant::fedefm:
    case Variant::no_emd:
      for_each_silo(fed, state.round, [&](std::size_t i) {
        const auto start = Clock::now();
        outcomes[i] = distillation_round(state, fed, bus, i);
        outcomes[i].row.cycle_time_ms = elapsed_ms(start);
      });
      break;
    case Variant::no_distillation:
      for_each_silo(fed, state.round, [&](std::size_t i) {
        const auto start = Clock::now();
        outcomes[i] = local_training(state.weights[i], state.streams[i], fed.silo_data[i], cfg.local_steps, lr,
                                     cfg.batch_size);
        outcomes[i].row.cycle_time_ms = elapsed_ms(start);
      });
      break;
    case Variant::cfl_averaging: {
      constexpr std::size_t server = static_cast<std::size_t>(-1);
      std::vector<nn::ModelWeights> uploaded;
      for (std::size_t i = 0; i < n; ++i)
        uploaded.push_back(bus.transmit_weights(i, server, MessageKind::upload, state.weights[i]));
      const auto global = aggregate(uploaded, aggregation_spec(fed));
      std::vector<nn::ModelWeights> received;
      for (std::size_t i = 0; i < n; ++i)
        received.push_back(bus.transmit_weights(server, i, MessageKind::broadcast, global));
      for_each_silo(fed, state.round, [&](std::size_t i) {
        const auto start = Clock::now();
        outcomes[i] = local_training(received[i], state.streams[i], fed.silo_data[i], cfg.overseas_steps, lr,
                                     cfg.batch_size);
        outcomes[i].row.cycle_time_ms = elapsed_ms(start);
      });
      break;
    }
  }
  return assemble(state, fed, outcomes);
}

TrainingResult run_training(const Federation& fed, const std::function<void(const RoundFailure&)>& on_failure,
                            const std::function<void(const MetricsRow&)>& sink) {
  fed.validate();
  MessageBus bus;
  TrainingResult result;
  RoundState state = initial_state(fed);
  for (std::size_t k = 0; k < fed.config.rounds; ++k) {
    const auto before = bus.counters();
    const std::size_t emitted = state.metrics.size();
    try {
      state = k == 0 ? pretrain_round(state, fed, bus) : run_round(state, fed, bus);
    } catch (...) {
      if (on_failure) on_failure(RoundFailure{k, state});
      throw;
    }
    result.traffic.push_back({k, bus.counters() - before});
    if (sink)
      for (std::size_t r = emitted; r < state.metrics.size(); ++r) sink(state.metrics[r]);
    log::debug("round ", k, " done");
  }
  result.global = aggregate(state.weights, aggregation_spec(fed));
  result.metrics = state.metrics;
  result.final_state = std::move(state);
  return result;
}

double evaluate(const nn::ModelWeights& weights, const data::Dataset& eval_set) {
  const auto batch = data::as_batch(eval_set);
  const auto out = nn::forward(weights, batch);
  return nn::accuracy(out.logits, batch.labels);
}

}  // namespace fedefm::federation
