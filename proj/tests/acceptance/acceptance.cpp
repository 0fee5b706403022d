// Acceptance gate: one PASS/FAIL line per criterion, tolerances pinned here.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "fedefm/common/rng.hpp"
#include "fedefm/distill/distill.hpp"
#include "fedefm/harness/checkpoint.hpp"
#include "fedefm/harness/config.hpp"
#include "fedefm/harness/experiment.hpp"
#include "fedefm/nn/model.hpp"
#include "fedefm/verify/suites.hpp"

using namespace fedefm;
namespace fs = std::filesystem;

namespace {

constexpr double kEmdObjectiveTol = 1e-6;
constexpr double kEmdRuntimeS = 60.0;
constexpr double kEmdGradTol = 1e-4;
constexpr double kEmdGradStep = 1e-5;
constexpr double kEmdGradRuntimeS = 120.0;
constexpr double kAutodiffTol = 1e-5;
constexpr double kEntropyTol = 1e-12;
constexpr double kAblationGap = 0.15;
constexpr double kEmdGain = 0.0;
constexpr double kAblationRuntimeS = 15 * 60.0;
constexpr double kNullControl = 0.05;

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  failures += !o.pass;
  std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << title << "  [" << o.detail
            << "]" << std::endl;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Outcome suite_outcome(const verify::SuiteReport& r, double budget) {
  double worst = 0.0;
  std::size_t passed = 0, total = 0;
  for (const auto& p : r.properties) {
    worst = std::max(worst, p.max_error);
    passed += p.passed;
    total += p.total;
  }
  std::ostringstream os;
  os << passed << "/" << total << " checks, max err " << worst << ", " << r.seconds << " s";
  if (!r.failures.empty()) os << ", first failure: " << r.failures.front();
  return {r.ok() && r.seconds < budget, os.str()};
}

harness::ExperimentConfig ablation_fixture() {
  harness::ExperimentConfig cfg;
  cfg.seed = 1;
  cfg.silos = 4;
  cfg.topology = "ring";
  cfg.unseen_fraction = 1.0;
  cfg.rounds = 50;
  cfg.local_steps = 5;
  cfg.overseas_steps = 5;
  cfg.distill.learning_rate = 0.2;
  cfg.data.classes = 8;
  cfg.model.num_classes = 8;
  cfg.eval_every = 50;
  cfg.timing = false;
  return cfg;
}

double softmax_entropy(const std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  double h = 0.0;
  for (double v : z) {
    const double p = std::exp(v - m) / s;
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace

int main() {
  std::cout << std::boolalpha;

  report(1, "EMD solver vs transportation simplex (1000 instances, n 2..8)", [] {
    verify::EmdSuiteOptions o;
    o.instances = 1000;
    o.min_n = 2;
    o.max_n = 8;
    o.tolerance = kEmdObjectiveTol;
    return suite_outcome(verify::emd_oracle_suite(o), kEmdRuntimeS);
  });

  report(2, "implicit EMD score gradient vs central differences (200 non-degenerate instances)", [] {
    verify::EmdGradientOptions o;
    o.instances = 200;
    o.min_n = 2;
    o.max_n = 5;
    o.step = kEmdGradStep;
    o.tolerance = kEmdGradTol;
    return suite_outcome(verify::emd_gradient_suite(o), kEmdGradRuntimeS);
  });

  report(3, "autodiff primitives and distillation loss vs finite differences (100 cases)", [] {
    verify::GradSuiteOptions o;
    o.cases = 100;
    o.tolerance = kAutodiffTol;
    const auto r = verify::grad_suite(o);
    double worst = 0.0;
    bool ok = true;
    std::size_t props = 0;
    for (const auto& p : r.properties) {
      if (p.property == "emd_similarity") continue;
      ++props;
      ok = ok && p.passed == p.total && p.total == o.cases && p.max_error < kAutodiffTol;
      worst = std::max(worst, p.max_error);
    }
    return Outcome{ok, fmt("%.0f properties, max rel err %.3e", double(props), worst)};
  });

  report(4, "distillation loss endpoints (beta 0 is CE, beta 1 is entropy)", [] {
    Rng rng(404);
    std::normal_distribution<double> g(0.0, 2.0);
    bool ok = true;
    double worst_entropy = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t b = 1 + trial % 5, c = 2 + trial % 7;
      nn::Tensor s({b, c}), t({b, c});
      for (auto& x : s.values()) x = g(rng);
      for (auto& x : t.values()) x = g(rng);
      std::vector<std::size_t> y(b);
      for (std::size_t i = 0; i < b; ++i) y[i] = (i * 3 + trial) % c;

      distill::DistillConfig cfg;
      cfg.beta = 0.0;
      cfg.temperature = 0.5 + trial % 4;
      double ce = 0.0;
      for (std::size_t i = 0; i < b; ++i)
        ce += nn::cross_entropy(nn::softmax_temperature(s.values().subspan(i * c, c), 1.0), y[i]);
      ce /= double(b);
      ok = ok && distill::distill_loss(s, {t}, y, cfg) == ce;

      cfg.beta = 1.0;
      cfg.temperature = 1.0;
      double h = 0.0;
      for (std::size_t i = 0; i < b; ++i) {
        const auto row = s.values().subspan(i * c, c);
        h += softmax_entropy({row.begin(), row.end()});
      }
      h /= double(b);
      const double err = std::abs(distill::distill_loss(s, {s}, y, cfg) - h);
      worst_entropy = std::max(worst_entropy, err);
    }
    ok = ok && worst_entropy < kEntropyTol;
    return Outcome{ok, fmt("beta 0 bitwise CE over 50 cases, beta 1 max |loss - entropy| %.2e", worst_entropy)};
  });

  verify::SuiteReport protocol;
  const auto protocol_start = Clock::now();
  verify::ProtocolSuiteOptions po;
  po.silos = 4;
  po.rounds = 10;
  po.parallel_workers = 4;
  protocol = verify::protocol_suite(po);

  report(5, "4-silo ring, K = 10: bitwise metrics and weights across 1/4 workers and repeats", [&] {
    const auto* a = protocol.find("serial vs parallel bitwise");
    const auto* b = protocol.find("repeat run bitwise");
    const bool ok = a && b && a->passed == a->total && b->passed == b->total && a->total > 0 && b->total > 0;
    std::string detail = fmt("%.1f s", since(protocol_start));
    for (const auto& f : protocol.failures) detail += "; " + f;
    return Outcome{ok, detail};
  });

  report(6, "message bus: zero sample transfers, 2 x directed edges weight transfers per round", [&] {
    bool ok = true;
    std::size_t checks = 0;
    for (const auto& p : protocol.properties) {
      if (p.property.find("transfers") == std::string::npos) continue;
      ok = ok && p.passed == p.total && p.total > 0;
      checks += p.total;
    }
    return Outcome{ok && checks > 0, fmt("%.0f round audits", double(checks))};
  });

  report(7, "p = 1.0 ablation on the fixture seed: FedEFM vs no-distillation and no-EMD", [] {
    const auto start = Clock::now();
    auto cfg = ablation_fixture();
    cfg.variant = federation::Variant::fedefm;
    const double full = harness::run_experiment(cfg).accuracy;
    cfg.variant = federation::Variant::no_emd;
    const double no_emd = harness::run_experiment(cfg).accuracy;
    cfg.variant = federation::Variant::no_distillation;
    const double no_dist = harness::run_experiment(cfg).accuracy;
    const double secs = since(start);
    const bool ok = full - no_dist >= kAblationGap && full - no_emd >= kEmdGain && secs < kAblationRuntimeS;
    return Outcome{ok, fmt("fedefm %.4f, no_emd %.4f, no_distillation %.4f, %.1f s", full, no_emd, no_dist, secs)};
  });

  report(8, "fine-tune transfer from a p = 0 federated backbone, null-checkpoint control", [] {
    auto cfg = ablation_fixture();
    cfg.unseen_fraction = 0.0;
    cfg.variant = federation::Variant::fedefm;
    const auto theta = harness::run_experiment(cfg).training.global;
    const auto trained = harness::run_finetune(cfg, theta);
    const auto null_theta = nn::init_weights(cfg.model, derive_seed(cfg.seed, {0x4e554c4c}));
    const auto null = harness::run_finetune(cfg, null_theta);
    const bool ok = trained.finetuned > trained.scratch && std::abs(null.delta()) < kNullControl;
    return Outcome{ok, fmt("fine-tuned %.4f vs scratch %.4f; null control delta %+.4f", trained.finetuned,
                           trained.scratch, null.delta())};
  });

  report(9, "checkpoint save/load bitwise, metrics replay from a run directory", [] {
    auto cfg = verify::protocol_fixture({});
    cfg.rounds = 3;
    const auto dir = fs::temp_directory_path() / "fedefm_acceptance_run";
    fs::remove_all(dir);
    const auto result = harness::run_experiment(cfg, dir);
    const harness::Checkpoint ckpt{result.training.global, harness::config_digest(cfg), {}};
    const auto bytes = harness::encode_checkpoint(ckpt);
    const auto back = harness::decode_checkpoint(bytes);
    const bool weights_ok = nn::bitwise_equal(back.weights.params, harness::quantize_f32(ckpt.weights).params) &&
                            back.weights.arch == ckpt.weights.arch;
    const bool bytes_ok = harness::encode_checkpoint(back) == bytes;
    const auto disk = harness::load_checkpoint(dir / "theta.ckpt");
    const bool disk_ok = harness::encode_checkpoint(disk) == bytes;
    const auto replay = harness::replay_run(dir);
    fs::remove_all(dir);
    std::ostringstream os;
    os << "weights " << weights_ok << ", re-encode " << bytes_ok << ", on-disk " << disk_ok << ", replay "
       << replay.rows << " rows metrics " << replay.metrics_match << " checkpoint " << replay.checkpoint_match;
    if (!replay.detail.empty()) os << " (" << replay.detail << ")";
    return Outcome{weights_ok && bytes_ok && disk_ok && replay.ok(), os.str()};
  });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
