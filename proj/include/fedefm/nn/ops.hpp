#pragma once

#include <cstddef>

#include "fedefm/nn/autodiff.hpp"

// Differentiable primitives. Every op records itself on the graph owning its
// operands; binary ops require both operands on the same graph.
namespace fedefm::nn {

Var matmul(Var a, Var b);             // [m,k] x [k,n]
Var matmul_transposed(Var a, Var b);  // [m,k] x [n,k]^T -> [m,n]
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);                // elementwise
Var scale(Var a, double s);
Var add_row_bias(Var a, Var bias);    // [m,n] + [n] broadcast over rows
Var relu(Var a);
Var gelu(Var a);                      // tanh approximation
/// Row-wise softmax of a / temperature with max subtraction.
Var softmax_rows(Var a, double temperature = 1.0);
/// Natural log with arguments clamped at 1e-12 (counted in warnings()).
Var log(Var a);
Var sum(Var a);                       // -> [1]
Var mean(Var a);                      // -> [1]
/// Mean over consecutive groups of `group` rows: [B*group, d] -> [B, d].
Var segment_mean_rows(Var a, std::size_t group);

inline constexpr double kLogClamp = 1e-12;

}  // namespace fedefm::nn
