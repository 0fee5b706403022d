#pragma once

#include <cstddef>
#include <vector>

// Reference solvers for balanced transport problems. They share no code with
// the interior-point path and exist to check it.
namespace fedefm::oracle {

struct SimplexResult {
  std::size_t rows = 0, cols = 0;
  std::vector<double> flow;        // row-major rows x cols
  std::vector<bool> basic;         // spanning-tree basis, rows + cols - 1 cells
  std::vector<double> u, v;        // potentials: c_ij = u_i + v_j on basic cells
  double objective = 0.0;
  std::size_t pivots = 0;

  double reduced_cost(const std::vector<double>& cost, std::size_t i, std::size_t j) const {
    return cost[i * cols + j] - u[i] - v[j];
  }
};

/// Transportation simplex: north-west-corner start, MODI potentials,
/// stepping-stone pivots (Dantzig pricing, Bland's rule once pivots exceed
/// 50 * rows * cols). `cost` is row-major rows x cols.
SimplexResult transport_simplex(const std::vector<double>& cost, const std::vector<double>& supply,
                                const std::vector<double>& demand);

/// Exhaustive optimum for uniform marginals on an n x n cost: the Birkhoff
/// polytope's vertices are permutation matrices scaled by 1/n. n <= 9.
double permutation_optimum(const std::vector<double>& cost, std::size_t n);

/// True when the optimum is unique and stable under cost perturbations of
/// size well below `margin`: every non-basic reduced cost is at least margin.
/// With `primal_margin` > 0 also every basic flow must be at least that.
bool nondegenerate(const SimplexResult& result, const std::vector<double>& cost, double margin,
                   double primal_margin = 0.0);

}  // namespace fedefm::oracle
