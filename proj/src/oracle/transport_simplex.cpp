#include "fedefm/oracle/transport_simplex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <stdexcept>

namespace fedefm::oracle {

namespace {

// Nodes 0..rows-1 are rows, rows..rows+cols-1 are columns; basic cells are edges.
struct Tree {
  std::size_t rows, cols;
  const std::vector<bool>& basic;

  std::vector<std::size_t> neighbors(std::size_t node) const {
    std::vector<std::size_t> out;
    if (node < rows) {
      for (std::size_t j = 0; j < cols; ++j)
        if (basic[node * cols + j]) out.push_back(rows + j);
    } else {
      const std::size_t j = node - rows;
      for (std::size_t i = 0; i < rows; ++i)
        if (basic[i * cols + j]) out.push_back(i);
    }
    return out;
  }

  // Node path from row `i` to column `j` through basic cells.
  std::vector<std::size_t> path(std::size_t i, std::size_t j) const {
    const std::size_t total = rows + cols, target = rows + j;
    std::vector<std::size_t> parent(total, total);
    std::queue<std::size_t> frontier;
    parent[i] = i;
    frontier.push(i);
    while (!frontier.empty()) {
      const std::size_t node = frontier.front();
      frontier.pop();
      if (node == target) break;
      for (auto nb : neighbors(node))
        if (parent[nb] == total) {
          parent[nb] = node;
          frontier.push(nb);
        }
    }
    if (parent[target] == total) throw std::logic_error("transport simplex: basis is not a spanning tree");
    std::vector<std::size_t> nodes{target};
    while (nodes.back() != i) nodes.push_back(parent[nodes.back()]);
    std::reverse(nodes.begin(), nodes.end());
    return nodes;
  }
};

void potentials(const std::vector<double>& cost, SimplexResult& r) {
  const std::size_t total = r.rows + r.cols;
  std::vector<bool> seen(total, false);
  r.u.assign(r.rows, 0.0);
  r.v.assign(r.cols, 0.0);
  Tree tree{r.rows, r.cols, r.basic};
  std::queue<std::size_t> frontier;
  seen[0] = true;
  frontier.push(0);
  while (!frontier.empty()) {
    const std::size_t node = frontier.front();
    frontier.pop();
    for (auto nb : tree.neighbors(node)) {
      if (seen[nb]) continue;
      seen[nb] = true;
      if (node < r.rows) {
        const std::size_t j = nb - r.rows;
        r.v[j] = cost[node * r.cols + j] - r.u[node];
      } else {
        const std::size_t j = node - r.rows;
        r.u[nb] = cost[nb * r.cols + j] - r.v[j];
      }
      frontier.push(nb);
    }
  }
}

}  // namespace

SimplexResult transport_simplex(const std::vector<double>& cost, const std::vector<double>& supply,
                                const std::vector<double>& demand) {
  SimplexResult r;
  r.rows = supply.size();
  r.cols = demand.size();
  if (r.rows == 0 || r.cols == 0 || cost.size() != r.rows * r.cols)
    throw std::invalid_argument("transport simplex: bad dimensions");
  r.flow.assign(r.rows * r.cols, 0.0);
  r.basic.assign(r.rows * r.cols, false);

  // North-west corner. Each step advances exactly one of (i, j), so the
  // basis ends with rows + cols - 1 cells; a simultaneous exhaustion keeps a
  // zero-flow basic cell in the next row.
  std::vector<double> s = supply, d = demand;
  std::size_t i = 0, j = 0;
  while (true) {
    const double q = std::min(s[i], d[j]);
    r.flow[i * r.cols + j] = q;
    r.basic[i * r.cols + j] = true;
    s[i] -= q;
    d[j] -= q;
    if (i + 1 == r.rows && j + 1 == r.cols) break;
    if (j + 1 == r.cols || (i + 1 < r.rows && s[i] <= d[j])) {
      ++i;
    } else {
      ++j;
    }
  }

  const std::size_t bland_after = 50 * r.rows * r.cols;
  constexpr double kEps = 1e-12;
  Tree tree{r.rows, r.cols, r.basic};
  for (;; ++r.pivots) {
    potentials(cost, r);
    const bool bland = r.pivots > bland_after;
    std::size_t enter = r.flow.size();
    double best = -kEps;
    for (std::size_t a = 0; a < r.rows && !(bland && enter != r.flow.size()); ++a)
      for (std::size_t b = 0; b < r.cols; ++b) {
        if (r.basic[a * r.cols + b]) continue;
        const double rc = r.reduced_cost(cost, a, b);
        if (rc < best) {
          best = rc;
          enter = a * r.cols + b;
          if (bland) break;
        }
      }
    if (enter == r.flow.size()) break;
    if (r.pivots > 100 * bland_after) throw std::runtime_error("transport simplex: pivot limit reached");

    const std::size_t ei = enter / r.cols, ej = enter % r.cols;
    const auto nodes = tree.path(ei, ej);
    // Cells along the path alternate -, +, -, ... starting at the entering row.
    std::vector<std::size_t> cells;
    for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
      const std::size_t a = nodes[k], b = nodes[k + 1];
      cells.push_back(a < r.rows ? a * r.cols + (b - r.rows) : b * r.cols + (a - r.rows));
    }
    double theta = std::numeric_limits<double>::infinity();
    std::size_t leave = r.flow.size();
    for (std::size_t k = 0; k < cells.size(); k += 2)
      if (r.flow[cells[k]] < theta || (r.flow[cells[k]] == theta && cells[k] < leave)) {
        theta = r.flow[cells[k]];
        leave = cells[k];
      }
    for (std::size_t k = 0; k < cells.size(); ++k) r.flow[cells[k]] += (k % 2 == 0 ? -theta : theta);
    r.flow[enter] = theta;
    r.flow[leave] = 0.0;
    r.basic[enter] = true;
    r.basic[leave] = false;
  }

  r.objective = 0.0;
  for (std::size_t k = 0; k < cost.size(); ++k) {
    r.flow[k] = std::max(0.0, r.flow[k]);
    r.objective += cost[k] * r.flow[k];
  }
  return r;
}

double permutation_optimum(const std::vector<double>& cost, std::size_t n) {
  if (n == 0 || n > 9 || cost.size() != n * n) throw std::invalid_argument("permutation_optimum: bad size");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t p = 0; p < n; ++p) total += cost[p * n + perm[p]];
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(n);
}

bool nondegenerate(const SimplexResult& result, const std::vector<double>& cost, double margin,
                   double primal_margin) {
  for (std::size_t i = 0; i < result.rows; ++i)
    for (std::size_t j = 0; j < result.cols; ++j) {
      const std::size_t k = i * result.cols + j;
      if (result.basic[k]) {
        if (primal_margin > 0.0 && result.flow[k] < primal_margin) return false;
      } else if (result.reduced_cost(cost, i, j) < margin) {
        return false;
      }
    }
  return true;
}

}  // namespace fedefm::oracle
