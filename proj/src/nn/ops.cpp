#include "fedefm/nn/ops.hpp"

#include <algorithm>
#include <cmath>

#include "fedefm/common/errors.hpp"
#include "fedefm/common/warnings.hpp"

namespace fedefm::nn {

namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

// out[m,n] += a[m,k] * b[k,n]
void gemm_nn(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b[p * n + j];
    }
}

// out[m,n] += a[m,k] * b[n,k]^T
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      out[i * n + j] += s;
    }
}

// out[k,n] += a[m,k]^T * b[m,n]
void gemm_tn(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[p * n + j] += av * b[i * n + j];
    }
}

template <class F, class D>
Var unary(Var a, const char* op, F f, D dfdx) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  Tensor xin = x;
  return a.graph().record(std::move(out), op, {a},
                          [xin, dfdx](const Tensor& g, std::vector<Tensor*>& slots) {
                            if (!slots[0]) return;
                            Tensor& ga = *slots[0];
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(xin[i]);
                          });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  if (av.dim(1) != bv.dim(0))
    throw ShapeError("matmul: inner dimensions differ " + shape_string(av.shape()) + " x " +
                     shape_string(bv.shape()));
  Tensor out({av.dim(0), bv.dim(1)});
  gemm_nn(av, bv, out);
  Tensor ac = av, bc = bv;
  return a.graph().record(std::move(out), "matmul", {a, b},
                          [ac, bc](const Tensor& g, std::vector<Tensor*>& slots) {
                            // dA = G B^T, dB = A^T G
                            if (slots[0]) gemm_nt(g, bc, *slots[0]);
                            if (slots[1]) gemm_tn(ac, g, *slots[1]);
                          });
}

Var matmul_transposed(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul_transposed");
  require_matrix(bv, "matmul_transposed");
  if (av.dim(1) != bv.dim(1))
    throw ShapeError("matmul_transposed: inner dimensions differ " + shape_string(av.shape()) +
                     " x " + shape_string(bv.shape()) + "^T");
  Tensor out({av.dim(0), bv.dim(0)});
  gemm_nt(av, bv, out);
  Tensor ac = av, bc = bv;
  return a.graph().record(std::move(out), "matmul", {a, b},
                          [ac, bc](const Tensor& g, std::vector<Tensor*>& slots) {
                            // dA = G B, dB = G^T A
                            if (slots[0]) gemm_nn(g, bc, *slots[0]);
                            if (slots[1]) gemm_tn(g, ac, *slots[1]);
                          });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.graph().record(std::move(out), "add", {a, b},
                          [](const Tensor& g, std::vector<Tensor*>& slots) {
                            for (auto* s : slots)
                              if (s)
                                for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
                          });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.graph().record(std::move(out), "sub", {a, b},
                          [](const Tensor& g, std::vector<Tensor*>& slots) {
                            if (slots[0])
                              for (std::size_t i = 0; i < g.size(); ++i) (*slots[0])[i] += g[i];
                            if (slots[1])
                              for (std::size_t i = 0; i < g.size(); ++i) (*slots[1])[i] -= g[i];
                          });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor ac = a.value(), bc = b.value();
  Tensor out = ac;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bc[i];
  return a.graph().record(std::move(out), "mul", {a, b},
                          [ac, bc](const Tensor& g, std::vector<Tensor*>& slots) {
                            if (slots[0])
                              for (std::size_t i = 0; i < g.size(); ++i) (*slots[0])[i] += g[i] * bc[i];
                            if (slots[1])
                              for (std::size_t i = 0; i < g.size(); ++i) (*slots[1])[i] += g[i] * ac[i];
                          });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  return a.graph().record(std::move(out), "scale", {a},
                          [s](const Tensor& g, std::vector<Tensor*>& slots) {
                            if (slots[0])
                              for (std::size_t i = 0; i < g.size(); ++i) (*slots[0])[i] += g[i] * s;
                          });
}

Var add_row_bias(Var a, Var bias) {
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  require_matrix(av, "add_row_bias");
  if (bv.size() != av.dim(1))
    throw ShapeError("add_row_bias: bias " + shape_string(bv.shape()) + " does not match " +
                     shape_string(av.shape()));
  Tensor out = av;
  const std::size_t m = av.dim(0), n = av.dim(1);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  return a.graph().record(std::move(out), "bias", {a, bias},
                          [m, n](const Tensor& g, std::vector<Tensor*>& slots) {
                            if (slots[0])
                              for (std::size_t i = 0; i < g.size(); ++i) (*slots[0])[i] += g[i];
                            if (slots[1])
                              for (std::size_t i = 0; i < m; ++i)
                                for (std::size_t j = 0; j < n; ++j) (*slots[1])[j] += g[i * n + j];
                          });
}

Var relu(Var a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var a) {
  return unary(
      a, "gelu",
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); },
      [](double x) {
        const double u = kGeluC * (x + 0.044715 * x * x * x);
        const double t = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      });
}

Var softmax_rows(Var a, double temperature) {
  if (!(temperature > 0.0)) throw InputError("softmax temperature must be positive");
  const Tensor& x = a.value();
  require_matrix(x, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    double mx = x[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[i * n + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp((x[i * n + j] - mx) / temperature);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  Tensor p = out;
  return a.graph().record(std::move(out), "softmax", {a},
                          [p, m, n, temperature](const Tensor& g, std::vector<Tensor*>& slots) {
                            if (!slots[0]) return;
                            // dx_j = p_j (g_j - sum_k g_k p_k) / T
                            for (std::size_t i = 0; i < m; ++i) {
                              double dot = 0.0;
                              for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * p[i * n + j];
                              for (std::size_t j = 0; j < n; ++j)
                                (*slots[0])[i * n + j] += p[i * n + j] * (g[i * n + j] - dot) / temperature;
                            }
                          });
}

Var log(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < kLogClamp) {
      ++warnings().log_clamped;
      out[i] = std::log(kLogClamp);
      dx[i] = 0.0;
    } else {
      out[i] = std::log(x[i]);
      dx[i] = 1.0 / x[i];
    }
  }
  return a.graph().record(std::move(out), "log", {a},
                          [dx](const Tensor& g, std::vector<Tensor*>& slots) {
                            if (slots[0])
                              for (std::size_t i = 0; i < g.size(); ++i) (*slots[0])[i] += g[i] * dx[i];
                          });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.graph().record(Tensor::scalar(s), "sum", {a},
                          [](const Tensor& g, std::vector<Tensor*>& slots) {
                            if (slots[0])
                              for (auto& v : slots[0]->values()) v += g[0];
                          });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.graph().record(Tensor::scalar(s / n), "mean", {a},
                          [n](const Tensor& g, std::vector<Tensor*>& slots) {
                            if (slots[0])
                              for (auto& v : slots[0]->values()) v += g[0] / n;
                          });
}

Var segment_mean_rows(Var a, std::size_t group) {
  const Tensor& x = a.value();
  require_matrix(x, "segment_mean_rows");
  if (group == 0 || x.dim(0) % group != 0)
    throw ShapeError("segment_mean_rows: " + std::to_string(x.dim(0)) + " rows do not split into groups of " +
                     std::to_string(group));
  const std::size_t b = x.dim(0) / group, d = x.dim(1);
  Tensor out({b, d});
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t r = 0; r < group; ++r)
      for (std::size_t j = 0; j < d; ++j) out[s * d + j] += x[(s * group + r) * d + j];
  for (auto& v : out.values()) v /= static_cast<double>(group);
  return a.graph().record(std::move(out), "pool", {a},
                          [b, d, group](const Tensor& g, std::vector<Tensor*>& slots) {
                            if (!slots[0]) return;
                            const double inv = 1.0 / static_cast<double>(group);
                            for (std::size_t s = 0; s < b; ++s)
                              for (std::size_t r = 0; r < group; ++r)
                                for (std::size_t j = 0; j < d; ++j)
                                  (*slots[0])[(s * group + r) * d + j] += g[s * d + j] * inv;
                          });
}

}  // namespace fedefm::nn
