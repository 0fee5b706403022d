#include "fedefm/emd/cost.hpp"

#include <cmath>

#include "fedefm/common/errors.hpp"
#include "fedefm/common/warnings.hpp"

namespace fedefm::emd {

std::string to_string(MarginalScheme scheme) {
  return scheme == MarginalScheme::uniform ? "uniform" : "norm_proportional";
}

MarginalScheme parse_marginal_scheme(const std::string& name) {
  if (name == "uniform") return MarginalScheme::uniform;
  if (name == "norm_proportional" || name == "norm-proportional") return MarginalScheme::norm_proportional;
  throw ConfigError("unknown marginal scheme '" + name + "' (expected uniform | norm_proportional)");
}

namespace {

std::vector<double> row_norms(const nn::Tensor& t) {
  const std::size_t n = t.dim(0), c = t.cols();
  std::vector<double> norms(n);
  for (std::size_t p = 0; p < n; ++p) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += t[p * c + k] * t[p * c + k];
    norms[p] = std::sqrt(s);
  }
  return norms;
}

void check_pair(const nn::Tensor& u, const nn::Tensor& v) {
  if (u.rank() != 2 || v.rank() != 2 || u.shape() != v.shape())
    throw ShapeError("feature maps must share [n, C]: " + nn::shape_string(u.shape()) + " vs " +
                     nn::shape_string(v.shape()));
}

}  // namespace

CostMatrix cost_matrix(const nn::Tensor& u, const nn::Tensor& v) {
  check_pair(u, v);
  const std::size_t n = u.dim(0), c = u.dim(1);
  const auto nu = row_norms(u), nv = row_norms(v);
  nn::Tensor cost({n, n});
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t q = 0; q < n; ++q) {
      if (nu[p] == 0.0 || nv[q] == 0.0) {
        ++warnings().zero_norm_feature;
        cost.at(p, q) = 1.0;
        continue;
      }
      double dot = 0.0;
      for (std::size_t k = 0; k < c; ++k) dot += u[p * c + k] * v[q * c + k];
      const double cosine = std::clamp(dot / (nu[p] * nv[q]), -1.0, 1.0);
      cost.at(p, q) = 1.0 - cosine;
    }
  return CostMatrix{std::move(cost)};
}

CostMatrix cost_matrix(const nn::FeatureMap& u, const nn::FeatureMap& v) {
  if (u.height != v.height || u.width != v.width) throw ShapeError("feature maps differ in spatial size");
  return cost_matrix(u.values, v.values);
}

MarginalWeights uniform_marginals(std::size_t n) {
  if (n == 0) throw InputError("marginals over zero cells");
  MarginalWeights m;
  m.supply.assign(n, 1.0 / static_cast<double>(n));
  m.demand = m.supply;
  m.scheme = MarginalScheme::uniform;
  return m;
}

MarginalWeights marginal_weights(const nn::Tensor& u, const nn::Tensor& v, MarginalScheme scheme) {
  check_pair(u, v);
  const std::size_t n = u.dim(0);
  if (scheme == MarginalScheme::uniform) return uniform_marginals(n);

  auto normalized = [&](const nn::Tensor& t) {
    auto w = row_norms(t);
    double total = 0.0;
    for (double x : w) total += x;
    if (total == 0.0) {
      ++warnings().marginal_fallback;
      return uniform_marginals(n).supply;
    }
    for (auto& x : w) x /= total;
    return w;
  };
  MarginalWeights m;
  m.supply = normalized(u);
  m.demand = normalized(v);
  m.scheme = MarginalScheme::norm_proportional;
  return m;
}

MarginalWeights marginal_weights(const nn::FeatureMap& u, const nn::FeatureMap& v, MarginalScheme scheme) {
  return marginal_weights(u.values, v.values, scheme);
}

}  // namespace fedefm::emd
