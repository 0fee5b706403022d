#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>

#include "fedefm/common/errors.hpp"
#include "fedefm/common/rng.hpp"
#include "fedefm/common/warnings.hpp"
#include "fedefm/distill/distill.hpp"
#include "fedefm/nn/ops.hpp"

using namespace fedefm;
using namespace fedefm::distill;
using nn::Tensor;

namespace {

const nn::Architecture kArch{4, 2, 3, {4}, 3};

data::Minibatch random_batch(std::size_t b, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  data::Minibatch mb{Tensor({b, 4, 4}), {}};
  for (auto& x : mb.images.values()) x = g(rng);
  for (std::size_t i = 0; i < b; ++i) mb.labels.push_back(i % 3);
  return mb;
}

double scalar_softmax_ce(const std::vector<double>& target_logits, const std::vector<double>& pred_logits, double t) {
  auto soft = [t](const std::vector<double>& z) {
    std::vector<double> p(z.size());
    double s = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) s += (p[k] = std::exp(z[k] / t));
    for (auto& x : p) x /= s;
    return p;
  };
  const auto q = soft(target_logits), p = soft(pred_logits);
  double ce = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) ce -= q[k] * std::log(p[k]);
  return ce;
}

nn::Gradients teacher_gradient(const nn::ModelWeights& w, const Teacher& t, const data::Minibatch& mb,
                               const DistillConfig& cfg) {
  const std::vector<Tensor> tl{nn::forward(t.weights, mb).logits};
  return nn::value_and_grad(
             w,
             [&](nn::Graph& g, const nn::ParamVars& pv, const data::Minibatch& b) {
               return distill_loss(nn::forward(g, w.arch, pv, b.images).logits, tl, b.labels, cfg);
             },
             mb)
      .grads;
}

}  // namespace

TEST_CASE("beta endpoints") {
  const Tensor s({2, 3}, {1.0, 2.0, 0.5, -1.0, 0.0, 3.0});
  const Tensor t({2, 3}, {0.3, -0.2, 1.1, 2.0, 0.1, -0.4});
  const std::vector<std::size_t> y{1, 2};
  DistillConfig cfg;

  cfg.beta = 0.0;
  const double ce = (-std::log(std::exp(2.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(0.5))) -
                     std::log(std::exp(3.0) / (std::exp(-1.0) + std::exp(0.0) + std::exp(3.0)))) /
                    2.0;
  CHECK(std::abs(distill_loss(s, {t}, y, cfg) - ce) < 1e-12);

  cfg.beta = 1.0;
  cfg.temperature = 1.0;
  const double entropy = (scalar_softmax_ce({1.0, 2.0, 0.5}, {1.0, 2.0, 0.5}, 1.0) +
                          scalar_softmax_ce({-1.0, 0.0, 3.0}, {-1.0, 0.0, 3.0}, 1.0)) /
                         2.0;
  CHECK(std::abs(distill_loss(s, {s}, y, cfg) - entropy) < 1e-12);
}

TEST_CASE("hand-set two-teacher loss") {
  const Tensor s({1, 3}, {1.0, 2.0, 0.5});
  const Tensor t1({1, 3}, {0.0, 1.0, 3.0});
  const Tensor t2({1, 3}, {2.0, -1.0, 0.0});
  DistillConfig cfg;
  cfg.beta = 0.5;
  cfg.temperature = 2.0;
  const double expect =
      0.5 * 4.0 * (scalar_softmax_ce({0.0, 1.0, 3.0}, {1.0, 2.0, 0.5}, 2.0) + scalar_softmax_ce({2.0, -1.0, 0.0}, {1.0, 2.0, 0.5}, 2.0)) +
      0.5 * -std::log(std::exp(0.5) / (std::exp(1.0) + std::exp(2.0) + std::exp(0.5)));
  CHECK(std::abs(distill_loss(s, {t1, t2}, {2}, cfg) - expect) < 1e-12);

  nn::Graph g;
  const auto sv = g.parameter(s, "s");
  CHECK(std::abs(distill_loss(sv, {t1, t2}, {2}, cfg).value().item() - expect) < 1e-12);
}

TEST_CASE("high temperature soft term tends to log of the class count") {
  const Tensor s({1, 4}, {1.0, -2.0, 0.5, 3.0});
  const Tensor t({1, 4}, {0.0, 4.0, -1.0, 2.0});
  DistillConfig cfg;
  cfg.beta = 1.0;
  cfg.temperature = 1e6;
  const double per_t2 = distill_loss(s, {t}, {0}, cfg) / (cfg.temperature * cfg.temperature);
  CHECK(std::abs(per_t2 - std::log(4.0)) < 1e-3);
}

TEST_CASE("empty teacher list keeps the ground-truth term") {
  const Tensor s({1, 3}, {1.0, 2.0, 0.5});
  DistillConfig cfg;
  const auto before = warnings().empty_teachers.load();
  const double loss = distill_loss(s, {}, {0}, cfg);
  CHECK(warnings().empty_teachers.load() > before);
  CHECK(std::abs(loss - 0.5 * -std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(0.5)))) < 1e-12);
}

TEST_CASE("distill loss input errors") {
  const Tensor s({2, 3}, 0.0);
  DistillConfig cfg;
  CHECK_THROWS_AS(distill_loss(s, {Tensor({2, 2}, 0.0)}, {0, 1}, cfg), ShapeError);
  CHECK_THROWS_AS(distill_loss(s, {}, {0}, cfg), ShapeError);
  CHECK_THROWS_AS(distill_loss(s, {}, {0, 3}, cfg), InputError);
}

TEST_CASE("local update neutral cases") {
  const auto w = nn::init_weights(kArch, 1);
  const auto mb = random_batch(4, 2);
  DistillConfig cfg;
  cfg.learning_rate = 0.1;
  TeacherSet zero{{1, nn::init_weights(kArch, 2), 0.0}, {2, nn::init_weights(kArch, 3), 0.0}};
  CHECK(nn::bitwise_equal(local_update(w, zero, mb, cfg, 1).params, w.params));
  CHECK(nn::bitwise_equal(local_update(w, {}, mb, cfg, 1).params, w.params));

  cfg.learning_rate = 0.0;
  TeacherSet one{{1, nn::init_weights(kArch, 2), 0.7}};
  CHECK(nn::bitwise_equal(local_update(w, one, mb, cfg, 1).params, w.params));
}

TEST_CASE("single teacher with beta zero is a plain SGD step") {
  const auto w = nn::init_weights(kArch, 4);
  const auto mb = random_batch(5, 3);
  DistillConfig cfg;
  cfg.beta = 0.0;
  cfg.learning_rate = 0.05;
  TeacherSet one{{3, nn::init_weights(kArch, 9), 1.0}};
  CHECK(nn::bitwise_equal(local_update(w, one, mb, cfg, 1).params, local_pretrain_step(w, mb, 0.05).params));
}

TEST_CASE("local update equals the recomputed weighted step") {
  const auto w = nn::init_weights(kArch, 5);
  const auto mb = random_batch(6, 4);
  DistillConfig cfg;
  cfg.learning_rate = 0.02;
  cfg.lr_schedule = {{3, 0.07}};
  TeacherSet teachers{{4, nn::init_weights(kArch, 11), 0.25}, {1, nn::init_weights(kArch, 12), 0.8},
                      {2, nn::init_weights(kArch, 13), 0.4}};

  nn::Gradients acc;
  for (const auto& [name, t] : w.params) acc.params.add(name, Tensor(t.shape(), 0.0));
  for (std::size_t id : {1, 2, 4}) {
    const auto& t = *std::find_if(teachers.begin(), teachers.end(), [&](const Teacher& x) { return x.neighbor == id; });
    const auto g = teacher_gradient(w, t, mb, cfg);
    auto src = g.params.begin();
    for (auto& [name, a] : acc.params) {
      const auto& gt = (src++)->second;
      for (std::size_t k = 0; k < a.size(); ++k) a[k] += t.emd_weight * gt[k];
    }
  }
  auto expect = w;
  for (auto& [name, p] : expect.params) {
    const auto& a = acc.params.at(name);
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = p[k] - 0.07 * a[k];
  }
  CHECK(nn::bitwise_equal(local_update(w, teachers, mb, cfg, 5).params, expect.params));

  auto reversed = teachers;
  std::reverse(reversed.begin(), reversed.end());
  CHECK(nn::bitwise_equal(local_update(w, reversed, mb, cfg, 5).params, expect.params));

  auto normalized = cfg;
  normalized.normalize_weights = true;
  auto scaled = teachers;
  for (auto& t : scaled) t.emd_weight /= 1.45;
  const auto a = local_update(w, teachers, mb, normalized, 5);
  const auto b = local_update(w, scaled, mb, cfg, 5);
  for (const auto& [name, p] : a.params)
    for (std::size_t k = 0; k < p.size(); ++k) CHECK(std::abs(p[k] - b.params.at(name)[k]) < 1e-14);
}

TEST_CASE("local update errors") {
  const auto w = nn::init_weights(kArch, 1);
  const auto mb = random_batch(3, 1);
  DistillConfig cfg;
  TeacherSet dup{{1, w, 1.0}, {1, w, 0.5}};
  CHECK_THROWS_AS(local_update(w, dup, mb, cfg, 1), InputError);
  TeacherSet nan{{1, w, std::nan("")}};
  CHECK_THROWS_AS(local_update(w, nan, mb, cfg, 1), InputError);
  nn::Architecture other = kArch;
  other.embed_dim = 5;
  TeacherSet mismatch{{1, nn::init_weights(other, 1), 1.0}};
  CHECK_THROWS_AS(local_update(w, mismatch, mb, cfg, 1), ShapeError);
}

TEST_CASE("local pretrain step and batch loss") {
  const auto w = nn::init_weights(kArch, 7);
  const auto mb = random_batch(4, 8);
  CHECK(nn::bitwise_equal(local_pretrain_step(w, mb, 0.0).params, w.params));
  const auto vg = nn::value_and_grad(
      w,
      [&](nn::Graph& g, const nn::ParamVars& pv, const data::Minibatch& b) {
        return nn::cross_entropy_loss(nn::forward(g, w.arch, pv, b.images).logits, b.labels);
      },
      mb);
  CHECK(nn::bitwise_equal(local_pretrain_step(w, mb, 0.3).params, nn::sgd_step(w, vg.grads, 0.3).params));
  CHECK(std::abs(batch_loss(w, mb) - vg.loss) < 1e-12);

  auto trained = w;
  for (int k = 0; k < 50; ++k) trained = local_pretrain_step(trained, mb, 0.2);
  CHECK(batch_loss(trained, mb) < batch_loss(w, mb));
}

TEST_CASE("distill config") {
  DistillConfig cfg;
  CHECK(cfg.beta == 0.5);
  CHECK(cfg.temperature == 2.0);
  CHECK_NOTHROW(cfg.validate());
  cfg.lr_schedule = {{2, 0.5}, {5, 0.1}};
  CHECK(cfg.lr_at(1) == cfg.learning_rate);
  CHECK(cfg.lr_at(2) == 0.5);
  CHECK(cfg.lr_at(4) == 0.5);
  CHECK(cfg.lr_at(9) == 0.1);

  auto expect_error = [](DistillConfig c, const std::string& key) {
    try {
      c.validate();
      FAIL("expected ConfigError for " << key);
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(key) != std::string::npos);
    }
  };
  DistillConfig bad;
  bad.beta = 1.5;
  expect_error(bad, "distill.beta");
  bad = {};
  bad.temperature = 0.0;
  expect_error(bad, "distill.temperature");
  bad = {};
  bad.learning_rate = -1.0;
  expect_error(bad, "distill.learning_rate");
  bad = {};
  bad.lr_schedule = {{3, -0.1}};
  expect_error(bad, "distill.lr_schedule.3");
}
