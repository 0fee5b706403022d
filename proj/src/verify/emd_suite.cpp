#include <chrono>
#include <cmath>
#include <sstream>

#include "fedefm/common/numeric.hpp"
#include "fedefm/common/rng.hpp"
#include "fedefm/emd/cost.hpp"
#include "fedefm/emd/transport.hpp"
#include "fedefm/oracle/transport_simplex.hpp"
#include "fedefm/verify/suites.hpp"

namespace fedefm::verify {

namespace {

using Clock = std::chrono::steady_clock;

nn::Tensor random_features(std::size_t n, std::size_t channels, Rng& rng) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> scale(0.2, 2.0);
  nn::Tensor t({n, channels});
  for (std::size_t p = 0; p < n; ++p) {
    const double s = scale(rng);
    for (std::size_t c = 0; c < channels; ++c) t.at(p, c) = s * normal(rng);
  }
  return t;
}

std::vector<double> random_simplex(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.2, 1.0);
  std::vector<double> w(n);
  double total = 0.0;
  for (auto& x : w) total += (x = u(rng));
  for (auto& x : w) x /= total;
  return w;
}

double max_marginal_violation(const nn::Tensor& flow, const emd::MarginalWeights& m) {
  const std::size_t n = m.supply.size();
  double worst = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    double row = 0.0, col = 0.0;
    for (std::size_t q = 0; q < n; ++q) {
      row += flow.at(p, q);
      col += flow.at(q, p);
    }
    worst = std::max({worst, std::abs(row - m.supply[p]), std::abs(col - m.demand[p])});
  }
  return worst;
}

std::string describe(std::size_t instance, std::size_t n, const std::string& scheme, double err) {
  std::ostringstream os;
  os << "instance " << instance << " n=" << n << " " << scheme << " err=" << err;
  return os.str();
}

std::vector<double> oracle_scores_gradient_fd(const std::vector<double>& cost, const emd::MarginalWeights& m,
                                              double h) {
  auto score = [&](const std::vector<double>& c) {
    const auto r = oracle::transport_simplex(c, m.supply, m.demand);
    double s = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k) s += (1.0 - c[k]) * r.flow[k];
    return s;
  };
  std::vector<double> g(cost.size());
  for (std::size_t l = 0; l < cost.size(); ++l) {
    auto plus = cost, minus = cost;
    plus[l] += h;
    minus[l] -= h;
    g[l] = (score(plus) - score(minus)) / (2.0 * h);
  }
  return g;
}

}  // namespace

SuiteReport emd_oracle_suite(const EmdSuiteOptions& options) {
  const auto start = Clock::now();
  SuiteReport report;
  report.suite = "emd";
  const std::size_t span = options.max_n - options.min_n + 1;
  for (std::size_t k = 0; k < options.instances; ++k) {
    Rng rng(derive_seed(options.seed, {k}));
    const std::size_t n = options.min_n + k % span;
    const auto scheme = (k / span) % 2 == 0 ? emd::MarginalScheme::uniform : emd::MarginalScheme::norm_proportional;
    const std::size_t channels = 2 + k % 5;
    const auto u = random_features(n, channels, rng);
    const auto v = random_features(n, channels, rng);
    const auto cost = emd::cost_matrix(u, v);
    const auto marginals = emd::marginal_weights(u, v, scheme);
    const std::string scheme_name = emd::to_string(scheme);

    emd::TransportSolution sol;
    try {
      sol = emd::solve_transport(cost, marginals);
    } catch (const std::exception& e) {
      report.record("solver converges", false, 0.0, describe(k, n, scheme_name, 0.0) + " " + e.what());
      continue;
    }
    report.record("solver converges", true);

    const auto& cvec = cost.entries.storage();
    const auto simplex = oracle::transport_simplex(cvec, marginals.supply, marginals.demand);
    const double obj_err = std::abs(sol.objective - simplex.objective);
    report.record("objective vs simplex", obj_err <= options.tolerance, obj_err,
                  describe(k, n, scheme_name, obj_err));

    const double marg_err = max_marginal_violation(sol.flow, marginals);
    report.record("marginals", marg_err <= options.tolerance, marg_err, describe(k, n, scheme_name, marg_err));

    double min_flow = 0.0;
    for (double x : sol.flow.values()) min_flow = std::min(min_flow, x);
    report.record("nonnegative flow", min_flow >= 0.0, -min_flow, describe(k, n, scheme_name, min_flow));

    if (scheme == emd::MarginalScheme::uniform) {
      const double perm_err = std::abs(simplex.objective - oracle::permutation_optimum(cvec, n));
      report.record("simplex vs permutations", perm_err <= 1e-9, perm_err, describe(k, n, scheme_name, perm_err));
    }
  }
  report.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return report;
}

SuiteReport emd_gradient_suite(const EmdGradientOptions& options) {
  const auto start = Clock::now();
  SuiteReport report;
  report.suite = "emd-gradient";
  report.bins = {1e-10, 1e-8, 1e-6, 1e-5, 1e-4};
  report.histogram.assign(report.bins.size() + 1, 0);
  const std::size_t span = options.max_n - options.min_n + 1;
  std::size_t accepted = 0;
  const std::size_t max_draws = options.instances * 50;
  for (std::size_t draw = 0; accepted < options.instances && draw < max_draws; ++draw) {
    Rng rng(derive_seed(options.seed, {draw}));
    const std::size_t n = options.min_n + accepted % span;
    const auto u = random_features(n, 3, rng);
    const auto v = random_features(n, 3, rng);
    const auto cost = emd::cost_matrix(u, v);
    emd::MarginalWeights m{random_simplex(n, rng), random_simplex(n, rng), emd::MarginalScheme::uniform};
    double gap = 0.0;
    for (std::size_t i = 0; i < n; ++i) gap += m.supply[i] - m.demand[i];
    m.demand[n - 1] += gap;

    const auto& cvec = cost.entries.storage();
    const auto simplex = oracle::transport_simplex(cvec, m.supply, m.demand);
    if (!oracle::nondegenerate(simplex, cvec, options.margin, options.margin)) continue;
    ++accepted;

    std::vector<double> analytic;
    try {
      const auto problem = emd::build_problem(cost, m);
      analytic = emd::emd_score_gradient(problem, emd::solve_transport(problem));
    } catch (const std::exception& e) {
      report.record("score gradient vs FD", false, 0.0, "draw " + std::to_string(draw) + ": " + e.what());
      continue;
    }
    const auto fd = oracle_scores_gradient_fd(cvec, m, options.step);
    double worst = 0.0;
    for (std::size_t l = 0; l < fd.size(); ++l) {
      const double e = relative_error(analytic[l], fd[l]);
      worst = std::max(worst, e);
      std::size_t b = 0;
      while (b < report.bins.size() && e > report.bins[b]) ++b;
      ++report.histogram[b];
    }
    report.record("score gradient vs FD", worst < options.tolerance, worst,
                  describe(draw, n, "random marginals", worst));
  }
  report.record("non-degenerate instances drawn", accepted == options.instances, 0.0,
                std::to_string(accepted) + " of " + std::to_string(options.instances));
  report.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return report;
}

}  // namespace fedefm::verify
