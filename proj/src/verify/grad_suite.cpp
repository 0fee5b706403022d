#include <chrono>
#include <cmath>
#include <functional>

#include "fedefm/common/numeric.hpp"
#include "fedefm/common/rng.hpp"
#include "fedefm/distill/distill.hpp"
#include "fedefm/emd/layer.hpp"
#include "fedefm/nn/model.hpp"
#include "fedefm/nn/ops.hpp"
#include "fedefm/verify/suites.hpp"

namespace fedefm::verify {

namespace {

using Clock = std::chrono::steady_clock;
using nn::Graph;
using nn::Tensor;
using nn::Var;
using Fn = std::function<Var(Graph&, const std::vector<Var>&)>;

Tensor random_tensor(nn::Shape shape, Rng& rng, double lo = -1.5, double hi = 1.5) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& x : t.values()) x = u(rng);
  return t;
}

/// Values bounded away from zero, for the kink of relu.
Tensor away_from_zero(nn::Shape shape, Rng& rng) {
  auto t = random_tensor(std::move(shape), rng, 0.05, 1.5);
  std::bernoulli_distribution sign(0.5);
  for (auto& x : t.values())
    if (sign(rng)) x = -x;
  return t;
}

/// Reduces f's output to a scalar with fixed random weights so every entry
/// of the Jacobian contributes.
double scalar_loss(const Fn& f, const std::vector<Tensor>& inputs, const Tensor& probe,
                   std::vector<Tensor>* grads) {
  Graph g;
  std::vector<Var> vars;
  for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(g.parameter(inputs[i], "x" + std::to_string(i)));
  const Var out = f(g, vars);
  const Var loss = nn::sum(nn::mul(out, g.constant(probe.reshaped(out.shape()))));
  if (grads) {
    g.backward(loss);
    grads->clear();
    for (const auto& v : vars) grads->push_back(g.grad(v));
  }
  return loss.value().item();
}

class GradChecker {
 public:
  GradChecker(SuiteReport& report, double h, double tol) : report_(report), h_(h), tol_(tol) {}

  void check(const std::string& name, const std::vector<Tensor>& inputs, const Fn& f, Rng& rng,
             double tol = 0.0) {
    Tensor probe;
    {
      Graph g;
      std::vector<Var> vars;
      for (const auto& t : inputs) vars.push_back(g.constant(t));
      probe = random_tensor(f(g, vars).shape(), rng);
    }
    std::vector<Tensor> analytic;
    scalar_loss(f, inputs, probe, &analytic);
    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      for (std::size_t k = 0; k < inputs[i].size(); ++k) {
        auto plus = inputs, minus = inputs;
        plus[i][k] += h_;
        minus[i][k] -= h_;
        const double fd = (scalar_loss(f, plus, probe, nullptr) - scalar_loss(f, minus, probe, nullptr)) / (2 * h_);
        const double e = relative_error(analytic[i][k], fd);
        bin(e);
        worst = std::max(worst, e);
      }
    }
    report_.record(name, worst < (tol > 0.0 ? tol : tol_), worst, "max relative error " + std::to_string(worst));
  }

 private:
  void bin(double e) {
    std::size_t b = 0;
    while (b < report_.bins.size() && e > report_.bins[b]) ++b;
    ++report_.histogram[b];
  }

  SuiteReport& report_;
  double h_, tol_;
};

}  // namespace

SuiteReport grad_suite(const GradSuiteOptions& options) {
  const auto start = Clock::now();
  SuiteReport report;
  report.suite = "grad";
  report.bins = {1e-12, 1e-10, 1e-8, 1e-6, 1e-5};
  report.histogram.assign(report.bins.size() + 1, 0);
  GradChecker checker(report, options.step, options.tolerance);

  for (std::size_t k = 0; k < options.cases; ++k) {
    Rng rng(derive_seed(options.seed, {k}));
    std::uniform_int_distribution<std::size_t> dim(1, 4);
    const std::size_t m = dim(rng), n = dim(rng), p = dim(rng);

    checker.check("matmul", {random_tensor({m, n}, rng), random_tensor({n, p}, rng)},
                  [](Graph&, const std::vector<Var>& x) { return nn::matmul(x[0], x[1]); }, rng);
    checker.check("matmul_transposed", {random_tensor({m, n}, rng), random_tensor({p, n}, rng)},
                  [](Graph&, const std::vector<Var>& x) { return nn::matmul_transposed(x[0], x[1]); }, rng);
    checker.check("add", {random_tensor({m, n}, rng), random_tensor({m, n}, rng)},
                  [](Graph&, const std::vector<Var>& x) { return nn::add(x[0], x[1]); }, rng);
    checker.check("sub", {random_tensor({m, n}, rng), random_tensor({m, n}, rng)},
                  [](Graph&, const std::vector<Var>& x) { return nn::sub(x[0], x[1]); }, rng);
    checker.check("mul", {random_tensor({m, n}, rng), random_tensor({m, n}, rng)},
                  [](Graph&, const std::vector<Var>& x) { return nn::mul(x[0], x[1]); }, rng);
    const double s = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
    checker.check("scale", {random_tensor({m, n}, rng)},
                  [s](Graph&, const std::vector<Var>& x) { return nn::scale(x[0], s); }, rng);
    checker.check("add_row_bias", {random_tensor({m, n}, rng), random_tensor({n}, rng)},
                  [](Graph&, const std::vector<Var>& x) { return nn::add_row_bias(x[0], x[1]); }, rng);
    checker.check("relu", {away_from_zero({m, n}, rng)},
                  [](Graph&, const std::vector<Var>& x) { return nn::relu(x[0]); }, rng);
    checker.check("gelu", {random_tensor({m, n}, rng, -3.0, 3.0)},
                  [](Graph&, const std::vector<Var>& x) { return nn::gelu(x[0]); }, rng);
    const double temp = std::uniform_real_distribution<double>(0.5, 4.0)(rng);
    checker.check("softmax_rows", {random_tensor({m, n + 1}, rng, -3.0, 3.0)},
                  [temp](Graph&, const std::vector<Var>& x) { return nn::softmax_rows(x[0], temp); }, rng);
    checker.check("log", {random_tensor({m, n}, rng, 0.1, 3.0)},
                  [](Graph&, const std::vector<Var>& x) { return nn::log(x[0]); }, rng);
    checker.check("sum", {random_tensor({m, n}, rng)},
                  [](Graph&, const std::vector<Var>& x) { return nn::sum(x[0]); }, rng);
    checker.check("mean", {random_tensor({m, n}, rng)},
                  [](Graph&, const std::vector<Var>& x) { return nn::mean(x[0]); }, rng);
    checker.check("segment_mean_rows", {random_tensor({m * p, n}, rng)},
                  [p](Graph&, const std::vector<Var>& x) { return nn::segment_mean_rows(x[0], p); }, rng);

    const std::size_t batch = dim(rng), classes = dim(rng) + 1;
    std::vector<std::size_t> labels(batch);
    for (auto& y : labels) y = std::uniform_int_distribution<std::size_t>(0, classes - 1)(rng);
    checker.check("cross_entropy_loss", {random_tensor({batch, classes}, rng, -3.0, 3.0)},
                  [&labels](Graph&, const std::vector<Var>& x) { return nn::cross_entropy_loss(x[0], labels); },
                  rng);

    nn::Architecture arch{4, 2, 3, {4}, 3};
    const auto weights = nn::init_weights(arch, derive_seed(options.seed, {k, 1}));
    std::vector<Tensor> model_inputs;
    for (const auto& [name, t] : weights.params) model_inputs.push_back(t);
    const auto images = random_tensor({2, 4, 4}, rng);
    std::vector<std::size_t> model_labels{k % 3, (k + 1) % 3};
    const auto model_fn = [&](Graph& g, const std::vector<Var>& x) {
      nn::ParamVars pv;
      std::size_t i = 0;
      for (const auto& [name, t] : weights.params) pv.vars.emplace_back(name, x[i++]);
      const auto out = nn::forward(g, arch, pv, images);
      return nn::add(nn::cross_entropy_loss(out.logits, model_labels), nn::mean(out.features));
    };
    checker.check("model forward", model_inputs, model_fn, rng);

    const std::size_t teachers = dim(rng) - 1;
    std::vector<Tensor> teacher_logits;
    for (std::size_t j = 0; j < teachers; ++j) teacher_logits.push_back(random_tensor({batch, classes}, rng, -3.0, 3.0));
    distill::DistillConfig cfg;
    cfg.beta = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    cfg.temperature = std::uniform_real_distribution<double>(0.5, 4.0)(rng);
    checker.check("distill_loss", {random_tensor({batch, classes}, rng, -3.0, 3.0)},
                  [&](Graph&, const std::vector<Var>& x) {
                    return distill::distill_loss(x[0], teacher_logits, labels, cfg);
                  },
                  rng);

    // The EMD layer differentiates through an LP optimum; it is held to the
    // transport-gradient tolerance rather than the smooth-primitive one.
    const std::size_t cells = 2 + k % 3;
    checker.check("emd_similarity", {random_tensor({cells, 3}, rng), random_tensor({cells, 3}, rng)},
                  [](Graph&, const std::vector<Var>& x) { return emd::emd_similarity(x[0], x[1]); }, rng,
                  options.emd_tolerance);
  }
  report.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return report;
}

}  // namespace fedefm::verify
