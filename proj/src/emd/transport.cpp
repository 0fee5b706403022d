#include "fedefm/emd/transport.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fedefm/common/errors.hpp"

namespace fedefm::emd {

using Eigen::MatrixXd;
using Eigen::VectorXd;

LpProblem build_problem(const CostMatrix& cost, const MarginalWeights& marginals) {
  const std::size_t n = cost.n();
  if (cost.entries.rank() != 2 || cost.entries.dim(1) != n) throw ShapeError("cost matrix must be square");
  if (marginals.supply.size() != n || marginals.demand.size() != n)
    throw ShapeError("marginal sizes do not match the cost matrix");
  double ss = 0.0, ds = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(marginals.supply[i] >= 0.0) || !(marginals.demand[i] >= 0.0))
      throw InputError("marginal weights must be non-negative");
    ss += marginals.supply[i];
    ds += marginals.demand[i];
  }
  if (std::abs(ss - ds) > 1e-9)
    throw InputError("infeasible marginals: supply sums to " + std::to_string(ss) + ", demand to " +
                     std::to_string(ds));

  LpProblem lp;
  lp.n = n;
  lp.marginals = marginals;
  lp.c.assign(cost.entries.values().begin(), cost.entries.values().end());
  const std::size_t nv = n * n, m = 2 * n - 1;
  lp.a.assign(m * nv, 0.0);
  lp.b.resize(m);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = 0; q < n; ++q) lp.a[p * nv + p * n + q] = 1.0;
    lp.b[p] = marginals.supply[p];
  }
  for (std::size_t q = 0; q + 1 < n; ++q) {
    for (std::size_t p = 0; p < n; ++p) lp.a[(n + q) * nv + p * n + q] = 1.0;
    lp.b[n + q] = marginals.demand[q];
  }
  return lp;
}

namespace {

// Structured products with the transport constraint matrix.
struct TransportOperator {
  std::size_t n;

  VectorXd apply(const VectorXd& x) const {  // A x
    VectorXd r = VectorXd::Zero(static_cast<Eigen::Index>(2 * n - 1));
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = 0; q < n; ++q) {
        const double v = x[static_cast<Eigen::Index>(p * n + q)];
        r[static_cast<Eigen::Index>(p)] += v;
        if (q + 1 < n) r[static_cast<Eigen::Index>(n + q)] += v;
      }
    return r;
  }

  VectorXd apply_transposed(const VectorXd& y) const {  // A^T y
    VectorXd r(static_cast<Eigen::Index>(n * n));
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = 0; q < n; ++q)
        r[static_cast<Eigen::Index>(p * n + q)] =
            y[static_cast<Eigen::Index>(p)] + (q + 1 < n ? y[static_cast<Eigen::Index>(n + q)] : 0.0);
    return r;
  }

  MatrixXd normal_matrix(const VectorXd& d) const {  // A diag(d) A^T
    const auto m = static_cast<Eigen::Index>(2 * n - 1);
    MatrixXd mat = MatrixXd::Zero(m, m);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = 0; q < n; ++q) {
        const double v = d[static_cast<Eigen::Index>(p * n + q)];
        const auto ip = static_cast<Eigen::Index>(p);
        mat(ip, ip) += v;
        if (q + 1 < n) {
          const auto iq = static_cast<Eigen::Index>(n + q);
          mat(iq, iq) += v;
          mat(ip, iq) += v;
          mat(iq, ip) += v;
        }
      }
    return mat;
  }
};

double max_step(const VectorXd& v, const VectorXd& dv) {
  double alpha = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv[i] < 0.0) alpha = std::min(alpha, -v[i] / dv[i]);
  return alpha;
}

VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> to_std(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

std::vector<double> kkt_residual(const LpProblem& problem, const std::vector<double>& x,
                                 const std::vector<double>& nu, const std::vector<double>& lambda) {
  const std::size_t nv = problem.variables(), m = problem.equalities();
  if (x.size() != nv || lambda.size() != nv || nu.size() != m || problem.c.size() != nv)
    throw ShapeError("kkt_residual: dimensions are not congruent with the problem");
  std::vector<double> g(2 * nv + m, 0.0);
  // grad_x L = c + G^T lambda + A^T nu
  for (std::size_t k = 0; k < nv; ++k) {
    double s = problem.c[k];
    for (std::size_t r = 0; r < nv; ++r) s += problem.g_at(r, k) * lambda[r];
    for (std::size_t r = 0; r < m; ++r) s += problem.a_at(r, k) * nu[r];
    g[k] = s;
  }
  // diag(lambda) (G x - h), h = 0
  for (std::size_t k = 0; k < nv; ++k) {
    double gx = 0.0;
    for (std::size_t l = 0; l < nv; ++l) gx += problem.g_at(k, l) * x[l];
    g[nv + k] = lambda[k] * gx;
  }
  for (std::size_t r = 0; r < m; ++r) {
    double ax = 0.0;
    for (std::size_t k = 0; k < nv; ++k) ax += problem.a_at(r, k) * x[k];
    g[2 * nv + r] = ax - problem.b[r];
  }
  return g;
}

TransportSolution solve_transport(const LpProblem& problem, const SolverOptions& options) {
  if (!(options.tol > 0.0)) throw InputError("solver tolerance must be positive");
  const std::size_t n = problem.n;
  const auto nv = static_cast<Eigen::Index>(n * n);
  const auto m = static_cast<Eigen::Index>(2 * n - 1);
  const TransportOperator op{n};

  const VectorXd c = to_eigen(problem.c);
  const VectorXd b = to_eigen(problem.b);
  // Internally the equality duals are y = -nu and the inequality duals s = lambda,
  // so dual feasibility reads A^T y + s = c.
  VectorXd x(nv), s = VectorXd::Ones(nv), y = VectorXd::Zero(m);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t q = 0; q < n; ++q)
      x[static_cast<Eigen::Index>(p * n + q)] = problem.marginals.supply[p] * problem.marginals.demand[q];
  // Zero marginals would put the start on the boundary.
  const double floor = 1e-12;
  for (Eigen::Index k = 0; k < nv; ++k) x[k] = std::max(x[k], floor);

  auto residual_norm = [&](const VectorXd& rp, const VectorXd& rd) {
    return std::sqrt(rd.squaredNorm() + (x.array() * s.array()).matrix().squaredNorm() + rp.squaredNorm());
  };

  TransportSolution sol;
  double res = std::numeric_limits<double>::infinity();
  std::size_t iter = 0;
  for (;; ++iter) {
    const VectorXd rp = op.apply(x) - b;
    const VectorXd rd = op.apply_transposed(y) + s - c;
    res = residual_norm(rp, rd);
    if (res < options.tol || iter >= options.max_iter || !std::isfinite(res)) break;

    const double mu = x.dot(s) / static_cast<double>(nv);
    const VectorXd d = x.array() / s.array();
    MatrixXd normal = op.normal_matrix(d);
    Eigen::LDLT<MatrixXd> ldlt(normal);
    if (ldlt.info() != Eigen::Success) {
      // Near the optimum x/s spans many decades; a relative diagonal shift
      // restores a usable factorization.
      normal.diagonal().array() += 1e-13 * normal.diagonal().maxCoeff();
      ldlt.compute(normal);
      if (ldlt.info() != Eigen::Success) break;
    }

    auto newton = [&](const VectorXd& rxs, VectorXd& dx, VectorXd& dy, VectorXd& ds) {
      const VectorXd t = (rxs.array() / s.array()).matrix() + (d.array() * rd.array()).matrix();
      dy = ldlt.solve(-rp - op.apply(t));
      ds = -rd - op.apply_transposed(dy);
      dx = t + (d.array() * op.apply_transposed(dy).array()).matrix();
    };

    VectorXd dx_aff, dy_aff, ds_aff;
    newton(-(x.array() * s.array()).matrix(), dx_aff, dy_aff, ds_aff);
    const double ap_aff = std::min(1.0, max_step(x, dx_aff));
    const double ad_aff = std::min(1.0, max_step(s, ds_aff));
    const double mu_aff = (x + ap_aff * dx_aff).dot(s + ad_aff * ds_aff) / static_cast<double>(nv);
    const double sigma = std::min(options.sigma_max, std::pow(mu_aff / mu, 3));

    VectorXd dx, dy, ds;
    const VectorXd rxs =
        (-(x.array() * s.array()) - dx_aff.array() * ds_aff.array() + sigma * mu).matrix();
    newton(rxs, dx, dy, ds);
    const double ap = std::min(1.0, options.step_to_boundary * max_step(x, dx));
    const double ad = std::min(1.0, options.step_to_boundary * max_step(s, ds));
    x += ap * dx;
    y += ad * dy;
    s += ad * ds;
  }

  if (!(res < options.tol))
    throw SolverError("interior point did not converge in " + std::to_string(iter) +
                          " iterations (KKT residual " + std::to_string(res) + ")",
                      res);

  sol.iterations = iter;
  sol.residual_norm = res;
  sol.flow = nn::Tensor({n, n});
  for (Eigen::Index k = 0; k < nv; ++k) {
    if (x[k] < -1e-9) throw SolverError("negative flow in converged solution", res);
    sol.flow[static_cast<std::size_t>(k)] = std::max(0.0, x[k]);
  }
  sol.nu = to_std(-y);
  sol.lambda = to_std(s);

  // Feasibility of every marginal, including the dropped demand row.
  for (std::size_t p = 0; p < n; ++p) {
    double row = 0.0, col = 0.0;
    for (std::size_t q = 0; q < n; ++q) {
      row += sol.flow.at(p, q);
      col += sol.flow.at(q, p);
    }
    if (std::abs(row - problem.marginals.supply[p]) > 1e-6 || std::abs(col - problem.marginals.demand[p]) > 1e-6)
      throw SolverError("converged flow violates the marginals", res);
  }

  sol.objective = 0.0;
  sol.score = 0.0;
  for (std::size_t k = 0; k < n * n; ++k) {
    sol.objective += problem.c[k] * sol.flow[k];
    sol.score += (1.0 - problem.c[k]) * sol.flow[k];
  }
  return sol;
}

TransportSolution solve_transport(const CostMatrix& cost, const MarginalWeights& marginals,
                                  const SolverOptions& options) {
  return solve_transport(build_problem(cost, marginals), options);
}

double emd_score(const CostMatrix& cost, const TransportSolution& solution) {
  if (cost.entries.shape() != solution.flow.shape()) throw ShapeError("emd_score: cost and flow shapes differ");
  double s = 0.0;
  for (std::size_t k = 0; k < cost.entries.size(); ++k) s += (1.0 - cost.entries[k]) * solution.flow[k];
  return s;
}

namespace {

// Jacobian of the KKT map with respect to z = (x, lambda, nu), plus ridge * I.
MatrixXd kkt_jacobian(const LpProblem& problem, const TransportSolution& sol, double ridge) {
  const auto nv = static_cast<Eigen::Index>(problem.variables());
  const auto m = static_cast<Eigen::Index>(problem.equalities());
  MatrixXd k = MatrixXd::Zero(2 * nv + m, 2 * nv + m);
  for (Eigen::Index i = 0; i < nv; ++i) {
    k(i, nv + i) = -1.0;                                        // d(grad_x L)/d lambda = G^T
    k(nv + i, i) = -sol.lambda[static_cast<std::size_t>(i)];    // d(diag(lambda) G x)/dx
    k(nv + i, nv + i) = -sol.flow[static_cast<std::size_t>(i)]; // d(diag(lambda) G x)/d lambda
  }
  for (Eigen::Index r = 0; r < m; ++r)
    for (Eigen::Index i = 0; i < nv; ++i) {
      const double a = problem.a_at(static_cast<std::size_t>(r), static_cast<std::size_t>(i));
      k(i, 2 * nv + r) = a;   // d(grad_x L)/d nu = A^T
      k(2 * nv + r, i) = a;   // d(Ax - b)/dx
    }
  k.diagonal().array() += ridge;
  return k;
}

Eigen::PartialPivLU<MatrixXd> factor_kkt(const LpProblem& problem, const TransportSolution& sol, double ridge) {
  if (sol.flow.size() != problem.variables() || sol.lambda.size() != problem.variables() ||
      sol.nu.size() != problem.equalities())
    throw ShapeError("solution is not congruent with the problem");
  Eigen::PartialPivLU<MatrixXd> lu(kkt_jacobian(problem, sol, ridge));
  const double rc = lu.rcond();
  if (!(rc > 1e-22))
    throw DegeneracyError("KKT matrix is singular after ridge " + std::to_string(ridge) +
                          " (rcond " + std::to_string(rc) + "); increase the ridge");
  return lu;
}

}  // namespace

std::vector<double> flow_jacobian(const LpProblem& problem, const TransportSolution& solution, double ridge) {
  const auto nv = static_cast<Eigen::Index>(problem.variables());
  const auto lu = factor_kkt(problem, solution, ridge);
  // dg/dc = [I; 0; 0]  =>  dz/dc = -K^{-1} [I; 0; 0]
  MatrixXd rhs = MatrixXd::Zero(lu.rows(), nv);
  rhs.topRows(nv).setIdentity();
  const MatrixXd dz = -lu.solve(rhs);
  if (!dz.allFinite()) throw DegeneracyError("non-finite flow Jacobian; increase the ridge");
  std::vector<double> jac(static_cast<std::size_t>(nv * nv));
  for (Eigen::Index k = 0; k < nv; ++k)
    for (Eigen::Index l = 0; l < nv; ++l) jac[static_cast<std::size_t>(k * nv + l)] = dz(k, l);
  return jac;
}

std::vector<double> emd_score_gradient(const LpProblem& problem, const TransportSolution& solution, double ridge) {
  const auto nv = static_cast<Eigen::Index>(problem.variables());
  const auto lu = factor_kkt(problem, solution, ridge);
  // J^T w = -E^T K^{-T} E w with w = 1 - c and E = [I; 0; 0].
  VectorXd w = VectorXd::Zero(lu.rows());
  for (Eigen::Index k = 0; k < nv; ++k) w[k] = 1.0 - problem.c[static_cast<std::size_t>(k)];
  const VectorXd z = lu.transpose().solve(w);
  if (!z.allFinite()) throw DegeneracyError("non-finite score gradient; increase the ridge");
  std::vector<double> grad(static_cast<std::size_t>(nv));
  for (Eigen::Index k = 0; k < nv; ++k)
    grad[static_cast<std::size_t>(k)] = -solution.flow[static_cast<std::size_t>(k)] - z[k];
  return grad;
}

}  // namespace fedefm::emd
