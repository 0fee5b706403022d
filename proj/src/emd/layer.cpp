#include "fedefm/emd/layer.hpp"

#include <algorithm>
#include <cmath>

#include "fedefm/common/errors.hpp"

namespace fedefm::emd {

namespace {

// Adds d(score)/d(U), d(score)/d(V) given d(score)/d(cost) for
// c_pq = 1 - <u_p, v_q> / (|u_p| |v_q|). Rows with zero norm get no gradient.
void cost_backward(const nn::Tensor& u, const nn::Tensor& v, const std::vector<double>& dcost, double scale,
                   nn::Tensor* du, nn::Tensor* dv) {
  const std::size_t n = u.dim(0), c = u.dim(1);
  std::vector<double> nu(n), nvv(n);
  for (std::size_t p = 0; p < n; ++p) {
    double a = 0.0, b = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      a += u[p * c + k] * u[p * c + k];
      b += v[p * c + k] * v[p * c + k];
    }
    nu[p] = std::sqrt(a);
    nvv[p] = std::sqrt(b);
  }
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t q = 0; q < n; ++q) {
      if (nu[p] == 0.0 || nvv[q] == 0.0) continue;
      const double g = scale * dcost[p * n + q];
      double dot = 0.0;
      for (std::size_t k = 0; k < c; ++k) dot += u[p * c + k] * v[q * c + k];
      const double cosine = dot / (nu[p] * nvv[q]);
      for (std::size_t k = 0; k < c; ++k) {
        const double uh = u[p * c + k] / nu[p], vh = v[q * c + k] / nvv[q];
        // d cos / d u_p = (v_hat - cos u_hat) / |u_p|, and dc = -d cos
        if (du) (*du)[p * c + k] -= g * (vh - cosine * uh) / nu[p];
        if (dv) (*dv)[q * c + k] -= g * (uh - cosine * vh) / nvv[q];
      }
    }
}

}  // namespace

nn::Var emd_similarity(nn::Var u, nn::Var v, const EmdOptions& options) {
  const nn::Tensor uc = u.value(), vc = v.value();
  const CostMatrix cost = cost_matrix(uc, vc);
  const LpProblem problem = build_problem(cost, marginal_weights(uc, vc, options.scheme));
  const TransportSolution sol = solve_transport(problem, options.solver);
  const double ridge = options.ridge;
  return u.graph().record(nn::Tensor::scalar(sol.score), "emd", {u, v},
                          [uc, vc, problem, sol, ridge](const nn::Tensor& g, std::vector<nn::Tensor*>& slots) {
                            const auto dcost = emd_score_gradient(problem, sol, ridge);
                            cost_backward(uc, vc, dcost, g[0], slots[0], slots[1]);
                          });
}

double feature_similarity(const nn::FeatureMap& u, const nn::FeatureMap& v, const EmdOptions& options) {
  const CostMatrix cost = cost_matrix(u, v);
  const TransportSolution sol = solve_transport(cost, marginal_weights(u, v, options.scheme), options.solver);
  return sol.score;
}

ModelSimilarity compare_models(const nn::ModelWeights& local, const nn::ModelWeights& returned,
                               const data::Minibatch& probe, const EmdOptions& options) {
  if (!(local.arch == returned.arch) || !local.params.congruent(returned.params))
    throw ShapeError("compare_models: architectures differ");
  if (probe.size() == 0) throw InputError("compare_models: empty probe batch");
  const auto a = nn::forward(local, probe);
  const auto b = nn::forward(returned, probe);
  double total = 0.0;
  for (std::size_t s = 0; s < probe.size(); ++s) total += feature_similarity(a.features[s], b.features[s], options);
  ModelSimilarity out;
  out.raw = total / static_cast<double>(probe.size());
  out.weight = options.clamp ? std::clamp(out.raw, 0.0, 1.0) : out.raw;
  return out;
}

double emd_between_models(const nn::ModelWeights& local, const nn::ModelWeights& returned,
                          const data::Minibatch& probe, const EmdOptions& options) {
  return compare_models(local, returned, probe, options).weight;
}

}  // namespace fedefm::emd
