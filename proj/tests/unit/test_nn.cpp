#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "fedefm/common/errors.hpp"
#include "fedefm/common/numeric.hpp"
#include "fedefm/common/rng.hpp"
#include "fedefm/common/warnings.hpp"
#include "fedefm/nn/model.hpp"
#include "fedefm/nn/ops.hpp"

using namespace fedefm;
using namespace fedefm::nn;

namespace {

data::Minibatch random_batch(const Architecture& arch, std::size_t b, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  data::Minibatch batch{Tensor({b, arch.image_side, arch.image_side}), {}};
  for (auto& x : batch.images.values()) x = u(rng);
  for (std::size_t i = 0; i < b; ++i) batch.labels.push_back(i % arch.num_classes);
  return batch;
}

}  // namespace

TEST_CASE("tensor rejects non-finite external input and bad shapes") {
  CHECK_THROWS_AS(Tensor::checked({2}, {1.0, std::numeric_limits<double>::quiet_NaN()}), InputError);
  CHECK_THROWS_AS(Tensor::checked({1}, {std::numeric_limits<double>::infinity()}), InputError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1.0, 2.0, 3.0}), ShapeError);
  const Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.at(1, 2) == 1.5);
}

TEST_CASE("softmax_temperature examples") {
  const std::vector<double> zero{0.0, 0.0};
  for (double temp : {0.1, 1.0, 7.0}) {
    const auto p = softmax_temperature(zero, temp);
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-15));
  }
  const std::vector<double> l{std::log(4.0), 0.0};
  const auto p = softmax_temperature(l, 2.0);
  CHECK(std::abs(p[0] - 2.0 / 3.0) < 1e-15);
  CHECK(std::abs(p[1] - 1.0 / 3.0) < 1e-15);

  const std::vector<double> three{3.0, 1.0, 1.0};
  const auto q = softmax_temperature(three, 1.0);
  const double z = std::exp(3.0) + 2.0 * std::exp(1.0);
  CHECK(std::abs(q[0] - std::exp(3.0) / z) < 1e-15);
  CHECK(std::abs(q[1] - std::exp(1.0) / z) < 1e-15);

  CHECK_THROWS_AS(softmax_temperature(three, 0.0), InputError);
  CHECK_THROWS_AS(softmax_temperature(three, -1.0), InputError);
}

TEST_CASE("softmax_temperature sums to one and ignores constant shifts") {
  Rng rng(3);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> l(5);
    for (auto& x : l) x = u(rng);
    const double temp = 0.1 + std::abs(u(rng));
    const auto p = softmax_temperature(l, temp);
    double total = 0.0;
    for (double x : p) {
      CHECK(x > 0.0);
      total += x;
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
    auto shifted = l;
    for (auto& x : shifted) x += 123.25;
    const auto ps = softmax_temperature(shifted, temp);
    for (std::size_t k = 0; k < p.size(); ++k) CHECK(std::abs(p[k] - ps[k]) < 1e-12);
  }
}

TEST_CASE("cross_entropy examples") {
  const std::vector<double> onehot{0.0, 1.0, 0.0};
  CHECK(cross_entropy(onehot, onehot) == 0.0);
  CHECK(cross_entropy(onehot, std::size_t{1}) == 0.0);
  const std::vector<double> uniform(4, 0.25);
  CHECK(std::abs(cross_entropy(uniform, std::size_t{2}) - std::log(4.0)) < 1e-15);

  Rng rng(11);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> pred(6), target(6);
  double sp = 0.0, st = 0.0;
  for (std::size_t k = 0; k < 6; ++k) {
    sp += (pred[k] = u(rng));
    st += (target[k] = u(rng));
  }
  double oracle = 0.0;
  for (std::size_t k = 0; k < 6; ++k) {
    pred[k] /= sp;
    target[k] /= st;
  }
  for (std::size_t k = 0; k < 6; ++k) oracle -= target[k] * std::log(pred[k]);
  CHECK(std::abs(cross_entropy(pred, target) - oracle) < 1e-14);
}

TEST_CASE("cross_entropy clamps zero probabilities and counts a warning") {
  const auto before = warnings().log_clamped.load();
  const std::vector<double> pred{1.0, 0.0};
  const double ce = cross_entropy(pred, std::size_t{1});
  CHECK(std::abs(ce + std::log(1e-12)) < 1e-9);
  CHECK(warnings().log_clamped.load() > before);
}

TEST_CASE("forward with zero weights gives equal logits") {
  Architecture arch;
  const auto w = zero_weights(arch);
  const auto out = forward(w, random_batch(arch, 3, 5));
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t k = 1; k < arch.num_classes; ++k) CHECK(out.logits.at(b, k) == out.logits.at(b, 0));
  CHECK(out.features.size() == 3);
  CHECK(out.features[0].cells() == arch.patches());
  CHECK(out.features[0].channels() == arch.embed_dim);
}

TEST_CASE("one-hot patch selects a column of the embedding weight") {
  Architecture arch{4, 2, 3, {}, 2};
  auto w = init_weights(arch, 9);
  data::Minibatch batch{Tensor({1, 4, 4}, 0.0), {0}};
  // pixel (0, 1) is offset 1 inside patch 0
  batch.images[1] = 1.0;
  const auto out = forward(w, batch);
  const auto& emb = w.params.at("embed.weight");
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(out.features[0].values.at(0, c) == emb.at(c, 1));
    for (std::size_t p = 1; p < 4; ++p) CHECK(out.features[0].values.at(p, c) == 0.0);
  }
}

TEST_CASE("feature map of hand-set weights matches a manual product") {
  Architecture arch{4, 2, 2, {}, 2};
  auto w = zero_weights(arch);
  auto& emb = w.params.at("embed.weight");  // [2, 4]
  const double e[8] = {1.0, 2.0, 0.0, -1.0, 0.5, 0.0, 3.0, 1.0};
  for (std::size_t k = 0; k < 8; ++k) emb[k] = e[k];
  w.params.at("embed.bias")[0] = 0.25;
  w.params.at("embed.bias")[1] = -0.5;
  data::Minibatch batch{Tensor({1, 4, 4}), {0}};
  for (std::size_t k = 0; k < 16; ++k) batch.images[k] = double(k) / 4.0;
  const auto out = forward(w, batch);
  // patch (gr, gc) holds pixels (2gr + r, 2gc + c) in row-major order
  for (std::size_t gr = 0; gr < 2; ++gr)
    for (std::size_t gc = 0; gc < 2; ++gc) {
      double patch[4];
      for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 2; ++c) patch[r * 2 + c] = double((2 * gr + r) * 4 + 2 * gc + c) / 4.0;
      for (std::size_t ch = 0; ch < 2; ++ch) {
        double v = ch == 0 ? 0.25 : -0.5;
        for (std::size_t k = 0; k < 4; ++k) v += e[ch * 4 + k] * patch[k];
        CHECK(out.features[0].values.at(gr * 2 + gc, ch) == doctest::Approx(v).epsilon(1e-14));
      }
    }
}

TEST_CASE("forward is pure and rejects mismatched shapes") {
  Architecture arch;
  const auto w = init_weights(arch, 1);
  const auto batch = random_batch(arch, 4, 2);
  const auto a = forward(w, batch);
  const auto b = forward(w, batch);
  CHECK(bitwise_equal(a.logits, b.logits));
  for (std::size_t i = 0; i < 4; ++i) CHECK(bitwise_equal(a.features[i].values, b.features[i].values));

  data::Minibatch wrong{Tensor({1, 6, 6}), {0}};
  CHECK_THROWS_AS(forward(w, wrong), ShapeError);

  auto broken = w;
  broken.params.at("mlp0.weight") = Tensor({3, 3});
  try {
    forward(broken, batch);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("mlp0") != std::string::npos);
  }
}

TEST_CASE("value_and_grad analytic cases") {
  Architecture arch;
  const auto w = init_weights(arch, 4);
  const auto batch = random_batch(arch, 2, 1);

  const auto zero = value_and_grad(
      w,
      [](Graph& g, const ParamVars& p, const data::Minibatch&) {
        Var total = scale(sum(p.vars[0].second), 0.0);
        for (std::size_t i = 1; i < p.vars.size(); ++i) total = add(total, scale(sum(p.vars[i].second), 0.0));
        (void)g;
        return total;
      },
      batch);
  for (const auto& [name, t] : zero.grads.params)
    for (double x : t.values()) CHECK(x == 0.0);

  const auto half_norm = value_and_grad(
      w,
      [](Graph&, const ParamVars& p, const data::Minibatch&) {
        Var total = scale(sum(mul(p.vars[0].second, p.vars[0].second)), 0.5);
        for (std::size_t i = 1; i < p.vars.size(); ++i)
          total = add(total, scale(sum(mul(p.vars[i].second, p.vars[i].second)), 0.5));
        return total;
      },
      batch);
  for (const auto& [name, t] : half_norm.grads.params) CHECK(bitwise_equal(t, w.params.at(name)));
}

TEST_CASE("value_and_grad matches central differences on a small net") {
  Architecture arch{4, 2, 3, {5}, 3};
  const auto w = init_weights(arch, 21);
  const auto batch = random_batch(arch, 3, 8);
  const LossFn loss = [&](Graph& g, const ParamVars& p, const data::Minibatch& b) {
    return cross_entropy_loss(forward(g, arch, p, b.images).logits, b.labels);
  };
  const auto vg = value_and_grad(w, loss, batch);
  const double h = 1e-4;
  double worst = 0.0;
  for (const auto& [name, t] : w.params) {
    for (std::size_t k = 0; k < t.size(); ++k) {
      auto plus = w, minus = w;
      plus.params.at(name)[k] += h;
      minus.params.at(name)[k] -= h;
      const double fd = (value_and_grad(plus, loss, batch).loss - value_and_grad(minus, loss, batch).loss) / (2 * h);
      worst = std::max(worst, relative_error(vg.grads.params.at(name)[k], fd));
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("non-finite loss reports the first offending layer") {
  Architecture arch;
  auto w = init_weights(arch, 4);
  for (auto& x : w.params.at("embed.weight").values()) x = 1e200;
  for (auto& x : w.params.at("mlp0.weight").values()) x = 1e200;
  const auto batch = random_batch(arch, 2, 1);
  try {
    value_and_grad(
        w,
        [&](Graph& g, const ParamVars& p, const data::Minibatch& b) {
          return cross_entropy_loss(forward(g, arch, p, b.images).logits, b.labels);
        },
        batch);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.layer().find("mlp0") != std::string::npos);
  }
}

TEST_CASE("sgd_step examples") {
  Architecture arch;
  const auto w = init_weights(arch, 2);
  Gradients g;
  Rng rng(6);
  std::normal_distribution<double> n;
  for (const auto& [name, t] : w.params) {
    Tensor gt(t.shape());
    for (auto& x : gt.values()) x = n(rng);
    g.params.add(name, gt);
  }
  CHECK(bitwise_equal(sgd_step(w, g, 0.0).params, w.params));

  const auto out = sgd_step(w, g, 0.37);
  for (const auto& [name, t] : w.params)
    for (std::size_t k = 0; k < t.size(); ++k) {
      const double expect = t[k] - 0.37 * g.params.at(name)[k];
      const double got = out.params.at(name)[k];
      CHECK(std::memcmp(&expect, &got, sizeof(double)) == 0);
    }

  ModelWeights one{arch, {}};
  one.params.add("x", Tensor({1}, 1.0));
  Gradients half;
  half.params.add("x", Tensor({1}, 0.5));
  CHECK(sgd_step(one, half, 0.1).params.at("x")[0] == doctest::Approx(0.95).epsilon(1e-15));

  Gradients wrong;
  wrong.params.add("x", Tensor({2}, 0.5));
  CHECK_THROWS_AS(sgd_step(one, wrong, 0.1), ShapeError);
  CHECK_THROWS_AS(sgd_step(one, half, -0.1), InputError);
}
