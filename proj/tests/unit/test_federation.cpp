#include <doctest.h>

#include <cmath>
#include <string>

#include "fedefm/common/errors.hpp"
#include "fedefm/common/warnings.hpp"
#include "fedefm/data/partition.hpp"
#include "fedefm/federation/bus.hpp"
#include "fedefm/federation/graph.hpp"
#include "fedefm/federation/protocol.hpp"

using namespace fedefm;
using namespace fedefm::federation;

namespace {

const nn::Architecture kArch{4, 2, 3, {4}, 4};

Federation make_federation(SiloGraph graph, Variant variant = Variant::fedefm) {
  data::SyntheticSpec spec;
  spec.classes = 4;
  spec.per_class = 12;
  spec.side = 4;
  spec.patch_size = 2;
  spec.noise = 0.3;
  const auto pooled = data::generate_synthetic(spec);
  auto split = data::partition_unseen(pooled, graph.silos(), 0.5, 3);
  spec.split = 1;
  spec.per_class = 4;
  Federation fed{std::move(graph), std::move(split.silos), data::generate_synthetic(spec), kArch, {}};
  fed.config.variant = variant;
  fed.config.batch_size = 4;
  fed.config.overseas_steps = 2;
  fed.config.pretrain_steps = 3;
  fed.config.rounds = 3;
  fed.config.distill.learning_rate = 0.1;
  return fed;
}

bool same_weights(const std::vector<nn::ModelWeights>& a, const std::vector<nn::ModelWeights>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!nn::bitwise_equal(a[i].params, b[i].params)) return false;
  return true;
}

}  // namespace

TEST_CASE("topologies") {
  const auto ring = SiloGraph::ring(4);
  CHECK(ring.neighbors(0) == std::vector<std::size_t>{1, 3});
  CHECK(ring.neighbors(2) == std::vector<std::size_t>{1, 3});
  CHECK(ring.edge_count() == 8);
  CHECK(SiloGraph::ring(2).neighbors(0) == std::vector<std::size_t>{1});
  CHECK(SiloGraph::ring(2).edge_count() == 2);
  CHECK(SiloGraph::ring(1).neighbors(0).empty());

  const auto star = SiloGraph::star(4);
  CHECK(star.neighbors(0) == std::vector<std::size_t>{1, 2, 3});
  CHECK(star.neighbors(3) == std::vector<std::size_t>{0});
  CHECK(star.edge_count() == 6);

  const auto complete = SiloGraph::complete(4);
  CHECK(complete.neighbors(2) == std::vector<std::size_t>{0, 1, 3});
  CHECK(complete.edge_count() == 12);
  CHECK(complete.weakly_connected());

  const auto custom = SiloGraph::custom(3, {{0, 2}, {0, 1}, {2, 1}});
  CHECK(custom.neighbors(0) == std::vector<std::size_t>{1, 2});
  CHECK(custom.neighbors(1).empty());
  CHECK(custom.neighbors(2) == std::vector<std::size_t>{1});
  CHECK(to_string(custom.kind()) == "custom");
}

TEST_CASE("custom topology errors and disconnection warning") {
  auto expect_error = [](const std::vector<std::array<std::size_t, 2>>& edges, const std::string& text) {
    try {
      SiloGraph::custom(3, edges);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(text) != std::string::npos);
    }
  };
  expect_error({{0, 1}, {1, 1}}, "edges[1]");
  expect_error({{0, 3}}, "edges[0]");
  expect_error({{0, 1}, {0, 1}}, "edges[1]");

  const auto before = warnings().disconnected_graph.load();
  const auto g = SiloGraph::custom(3, {{0, 1}});
  CHECK_FALSE(g.weakly_connected());
  CHECK(warnings().disconnected_graph.load() > before);
}

TEST_CASE("bus audits traffic") {
  MessageBus bus;
  const auto w = nn::init_weights(kArch, 1);
  const auto got = bus.transmit_weights(0, 1, MessageKind::dispatch, w);
  CHECK(nn::bitwise_equal(got.params, w.params));
  bus.transmit_weights(1, 0, MessageKind::expert_return, w);
  bus.transmit(2, 2, MessageKind::dispatch, data::Minibatch{nn::Tensor({1, 4, 4}), {0}});
  bus.transmit(2, 3, MessageKind::dispatch, data::Minibatch{nn::Tensor({1, 4, 4}), {0}});
  const auto c = bus.counters();
  CHECK(c.weight_transfers == 2);
  CHECK(c.sample_transfers == 1);
  CHECK(c.dispatches == 3);
  CHECK(c.returns == 1);
  const auto diff = c - TrafficCounters{1, 0, 1, 0, 0, 0};
  CHECK(diff.weight_transfers == 1);
  CHECK(diff.dispatches == 2);
}

TEST_CASE("aggregation") {
  const auto a = nn::init_weights(kArch, 1), b = nn::init_weights(kArch, 2), c = nn::init_weights(kArch, 3);
  CHECK(nn::bitwise_equal(aggregate({a, b, c}, {{0, 1, 0}}).params, b.params));

  const auto same = aggregate({a, a, a}, {{1, 1, 1}});
  for (const auto& [name, t] : same.params)
    for (std::size_t k = 0; k < t.size(); ++k) CHECK(std::abs(t[k] - a.params.at(name)[k]) <= 1e-15 * std::abs(t[k]) + 1e-300);

  const auto mean = aggregate({a, b, c}, {{1, 0, 1}});
  for (const auto& [name, t] : mean.params)
    for (std::size_t k = 0; k < t.size(); ++k)
      CHECK(t[k] == (a.params.at(name)[k] + c.params.at(name)[k]) / 2.0);

  CHECK_THROWS_AS(aggregate({a, b}, {{0, 0}}), InputError);
  CHECK_THROWS_AS(aggregate({a, b}, {{1}}), InputError);
  CHECK_THROWS_AS(aggregate({a, b}, {{1, 2}}), InputError);
  nn::Architecture other = kArch;
  other.embed_dim = 5;
  CHECK_THROWS_AS(aggregate({a, nn::init_weights(other, 1)}, {{1, 1}}), ShapeError);
}

TEST_CASE("overseas training") {
  const auto fed = make_federation(SiloGraph::ring(3));
  const auto& d = fed.silo_data[1];
  const auto w = nn::init_weights(kArch, 4);

  data::MinibatchStream s0(7);
  CHECK(nn::bitwise_equal(overseas_train(w, d, 2, 0.0, 4, s0).params, w.params));
  CHECK(s0.consumed() == 8);

  data::MinibatchStream s1(7), r1(7);
  const auto one = overseas_train(w, d, 1, 0.1, 4, s1);
  CHECK(nn::bitwise_equal(one.params, distill::local_pretrain_step(w, data::sample_minibatch(d, 4, r1), 0.1).params));

  data::MinibatchStream s3(7), r3(7);
  auto expect = w;
  for (int k = 0; k < 3; ++k) expect = distill::local_pretrain_step(expect, data::sample_minibatch(d, 4, r3), 0.1);
  CHECK(nn::bitwise_equal(overseas_train(w, d, 3, 0.1, 4, s3).params, expect.params));
  CHECK(s3 == r3);

  CHECK_THROWS_AS(overseas_train(w, data::Dataset{}, 1, 0.1, 4, s3), ProtocolError);
  CHECK_THROWS_AS(overseas_train(w, d, 0, 0.1, 4, s3), ProtocolError);
}

TEST_CASE("a silo without neighbors trains locally") {
  auto fed = make_federation(SiloGraph::custom(2, {{0, 1}}));
  fed.config.local_steps = 2;
  MessageBus bus;
  const auto s0 = initial_state(fed);
  auto s1 = pretrain_round(s0, fed, bus);
  const auto s2 = run_round(s1, fed, bus);

  auto stream = s1.streams[1].local;
  auto expect = s1.weights[1];
  for (int k = 0; k < 2; ++k)
    expect = distill::local_pretrain_step(expect, data::sample_minibatch(fed.silo_data[1], 4, stream), 0.1);
  CHECK(nn::bitwise_equal(s2.weights[1].params, expect.params));
  CHECK(s2.streams[1].local == stream);
  CHECK(bus.counters().weight_transfers == 2);
}

TEST_CASE("round matches a hand-sequenced serial reference") {
  for (auto variant : {Variant::fedefm, Variant::no_emd}) {
    auto fed = make_federation(SiloGraph::ring(3), variant);
    fed.config.local_steps = 2;
    fed.config.workers = 3;
    MessageBus bus;
    const auto s1 = pretrain_round(initial_state(fed), fed, bus);
    const auto s2 = run_round(s1, fed, bus);

    for (std::size_t i = 0; i < 3; ++i) {
      auto streams = s1.streams[i];
      const auto& theta = s1.weights[i];
      const auto probe = data::sample_minibatch(fed.silo_data[i], 4, streams.local);
      distill::TeacherSet teachers;
      std::vector<std::pair<std::size_t, double>> weights;
      for (auto j : fed.graph.neighbors(i)) {
        auto expert = overseas_train(theta, fed.silo_data[j], 2, 0.1, 4, streams.visiting_stream(j));
        const double w = variant == Variant::fedefm ? emd::emd_between_models(theta, expert, probe, fed.config.emd) : 1.0;
        weights.emplace_back(j, w);
        teachers.push_back({j, expert, w});
      }
      auto expect = distill::local_update(theta, teachers, probe, fed.config.distill, 1);
      expect = distill::local_update(expect, teachers, data::sample_minibatch(fed.silo_data[i], 4, streams.local),
                                     fed.config.distill, 1);
      CHECK(nn::bitwise_equal(s2.weights[i].params, expect.params));
      CHECK(s2.streams[i] == streams);
      const auto& row = s2.metrics[s1.metrics.size() + i];
      CHECK(row.silo == i);
      CHECK(row.round == 1);
      CHECK(row.emd_weights == weights);
      CHECK(row.train_loss == distill::batch_loss(theta, probe));
      for (const auto& [j, w] : row.emd_weights) {
        CHECK(w >= 0.0);
        CHECK(w <= 1.0);
      }
    }
    CHECK(bus.counters().dispatches == 6);
    CHECK(bus.counters().returns == 6);
    CHECK(bus.counters().sample_transfers == 0);
  }
}

TEST_CASE("two-silo ring exchanges one expert each way") {
  auto fed = make_federation(SiloGraph::ring(2));
  MessageBus bus;
  const auto s1 = pretrain_round(initial_state(fed), fed, bus);
  const auto s2 = run_round(s1, fed, bus);
  CHECK(bus.counters().weight_transfers == 4);
  CHECK(s2.metrics[s1.metrics.size()].emd_weights.size() == 1);
  CHECK(s2.metrics[s1.metrics.size()].emd_weights[0].first == 1);
  CHECK(s2.metrics[s1.metrics.size() + 1].emd_weights[0].first == 0);
}

TEST_CASE("local-only round equals the pretraining round") {
  auto fed = make_federation(SiloGraph::ring(3), Variant::no_distillation);
  fed.config.local_steps = fed.config.pretrain_steps;
  MessageBus bus;
  const auto s0 = initial_state(fed);
  const auto pre = pretrain_round(s0, fed, bus);
  const auto local = run_round(s0, fed, bus);
  CHECK(same_weights(pre.weights, local.weights));
  CHECK(pre.streams == local.streams);
  CHECK(bus.counters() == TrafficCounters{});
}

TEST_CASE("averaging baseline uploads, aggregates and broadcasts") {
  auto fed = make_federation(SiloGraph::ring(3), Variant::cfl_averaging);
  MessageBus bus;
  const auto s1 = pretrain_round(initial_state(fed), fed, bus);
  const auto s2 = run_round(s1, fed, bus);
  const auto c = bus.counters();
  CHECK(c.uploads == 3);
  CHECK(c.broadcasts == 3);
  CHECK(c.weight_transfers == 6);
  const auto global = aggregate(s1.weights, {{1, 1, 1}});
  auto stream = s1.streams[0].local;
  auto expect = global;
  for (int k = 0; k < 2; ++k)
    expect = distill::local_pretrain_step(expect, data::sample_minibatch(fed.silo_data[0], 4, stream), 0.1);
  CHECK(nn::bitwise_equal(s2.weights[0].params, expect.params));
}

TEST_CASE("training with a single round aggregates the pretrained silos") {
  auto fed = make_federation(SiloGraph::ring(3));
  fed.config.rounds = 1;
  std::size_t rows = 0;
  const auto result = run_training(fed, {}, [&](const MetricsRow&) { ++rows; });
  CHECK(rows == 4);
  REQUIRE(result.traffic.size() == 1);
  CHECK(result.traffic[0].traffic == TrafficCounters{});
  CHECK(nn::bitwise_equal(result.global.params, aggregate(result.final_state.weights, {{1, 1, 1}}).params));
  const auto& global_row = result.metrics.back();
  CHECK_FALSE(global_row.silo.has_value());
  REQUIRE(global_row.eval_accuracy.has_value());
  CHECK(*global_row.eval_accuracy == evaluate(result.global, fed.eval_set));
}

TEST_CASE("evaluation cadence") {
  auto fed = make_federation(SiloGraph::ring(3));
  fed.config.rounds = 4;
  fed.config.eval_every = 2;
  const auto result = run_training(fed);
  for (const auto& row : result.metrics)
    CHECK(row.eval_accuracy.has_value() == (row.round == 0 || row.round == 2 || row.round == 3));
}

TEST_CASE("a failing round hands the last good state to the callback") {
  auto fed = make_federation(SiloGraph::ring(3));
  fed.config.emd.solver.max_iter = 1;
  std::size_t failed_round = 99, good_round = 99;
  std::vector<nn::ModelWeights> saved;
  try {
    run_training(fed, [&](const RoundFailure& f) {
      failed_round = f.round;
      good_round = f.last_good.round;
      saved = f.last_good.weights;
    });
    FAIL("expected a round failure");
  } catch (const ProtocolError& e) {
    CHECK(std::string(e.what()).find("round 1 silo") != std::string::npos);
    CHECK_THROWS_AS(std::rethrow_if_nested(e), SolverError);
  }
  CHECK(failed_round == 1);
  CHECK(good_round == 1);
  MessageBus bus;
  CHECK(same_weights(saved, pretrain_round(initial_state(fed), fed, bus).weights));
}

TEST_CASE("federation validation") {
  auto fed = make_federation(SiloGraph::ring(3));
  fed.config.batch_size = 1000;
  CHECK_THROWS_AS(fed.validate(), ConfigError);
  fed = make_federation(SiloGraph::ring(3));
  fed.silo_data.pop_back();
  CHECK_THROWS_AS(fed.validate(), ConfigError);
  fed = make_federation(SiloGraph::ring(3));
  fed.config.participation = {1, 0};
  CHECK_THROWS_AS(fed.validate(), ConfigError);
  CHECK(parse_variant("no_emd") == Variant::no_emd);
  CHECK_THROWS_AS(parse_variant("fedavg"), ConfigError);
}
