#pragma once

#include <cstddef>
#include <vector>

#include "fedefm/emd/cost.hpp"
#include "fedefm/nn/tensor.hpp"

namespace fedefm::emd {

/// Balanced transport LP in compact form
///   min c^T x  s.t.  G x <= h,  A x = b
/// with x the row-major flattening of the n x n flow. G = -I and h = 0 are
/// kept implicit. A stacks the n supply rows and the first n-1 demand rows;
/// the last demand row is implied by the others and dropped.
struct LpProblem {
  std::size_t n = 0;
  std::vector<double> c;  // [n*n]
  std::vector<double> a;  // [(2n-1) * n*n], row-major
  std::vector<double> b;  // [2n-1]
  MarginalWeights marginals;

  std::size_t variables() const { return n * n; }
  std::size_t equalities() const { return 2 * n - 1; }
  double a_at(std::size_t row, std::size_t col) const { return a[row * variables() + col]; }
  /// Entry of the inequality matrix G = -I.
  double g_at(std::size_t row, std::size_t col) const { return row == col ? -1.0 : 0.0; }
};

/// Throws InputError when the marginal sides disagree by more than 1e-9 or a
/// weight is negative.
LpProblem build_problem(const CostMatrix& cost, const MarginalWeights& marginals);

struct SolverOptions {
  double tol = 1e-8;
  std::size_t max_iter = 100;
  double sigma_max = 0.1;        // centering parameter cap
  double step_to_boundary = 0.995;
};

struct TransportSolution {
  nn::Tensor flow;            // [n, n], clamped at zero
  std::vector<double> nu;     // equality duals
  std::vector<double> lambda; // inequality duals, >= 0
  double objective = 0.0;
  double score = 0.0;         // sum (1 - c) x
  std::size_t iterations = 0;
  double residual_norm = 0.0; // ||g(x, nu, lambda)||_2 at exit
};

/// Mehrotra predictor-corrector path following. Starts at x = outer(supply,
/// demand), lambda = 1, nu = 0. Throws SolverError when the KKT residual is
/// still above tol after max_iter iterations or the result violates the
/// marginals.
TransportSolution solve_transport(const LpProblem& problem, const SolverOptions& options = {});
TransportSolution solve_transport(const CostMatrix& cost, const MarginalWeights& marginals,
                                  const SolverOptions& options = {});

/// KKT vector [grad_x L; diag(lambda)(Gx - h); Ax - b] of the Lagrangian
/// L = c^T x + lambda^T (Gx - h) + nu^T (Ax - b).
std::vector<double> kkt_residual(const LpProblem& problem, const std::vector<double>& x,
                                 const std::vector<double>& nu, const std::vector<double>& lambda);

/// sum_pq (1 - c_pq) x_pq.
double emd_score(const CostMatrix& cost, const TransportSolution& solution);

inline constexpr double kDefaultRidge = 1e-9;

/// d x / d c as an (n*n) x (n*n) row-major matrix: entry (k, l) is
/// d x_k / d c_l, from implicit differentiation of the KKT system with
/// `ridge` added to the diagonal of its Jacobian.
std::vector<double> flow_jacobian(const LpProblem& problem, const TransportSolution& solution,
                                  double ridge = kDefaultRidge);

/// d score / d c_pq = -x_pq + sum_rs (1 - c_rs) d x_rs / d c_pq, computed
/// with one transposed KKT solve. Row-major [n*n].
std::vector<double> emd_score_gradient(const LpProblem& problem, const TransportSolution& solution,
                                       double ridge = kDefaultRidge);

}  // namespace fedefm::emd
