#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fedefm/nn/model.hpp"
#include "fedefm/nn/tensor.hpp"

namespace fedefm::emd {

/// c_pq = 1 - cos(u_p, v_q), entries in [0, 2]. Pairs involving a zero-norm
/// row cost 1.0 (treated as orthogonal).
struct CostMatrix {
  nn::Tensor entries;  // [n, n]
  std::size_t n() const { return entries.dim(0); }
};

enum class MarginalScheme { uniform, norm_proportional };

std::string to_string(MarginalScheme scheme);
MarginalScheme parse_marginal_scheme(const std::string& name);

struct MarginalWeights {
  std::vector<double> supply;  // per row p (U side)
  std::vector<double> demand;  // per column q (V side)
  MarginalScheme scheme = MarginalScheme::uniform;
};

CostMatrix cost_matrix(const nn::FeatureMap& u, const nn::FeatureMap& v);
CostMatrix cost_matrix(const nn::Tensor& u, const nn::Tensor& v);

MarginalWeights marginal_weights(const nn::FeatureMap& u, const nn::FeatureMap& v, MarginalScheme scheme);
MarginalWeights marginal_weights(const nn::Tensor& u, const nn::Tensor& v, MarginalScheme scheme);
MarginalWeights uniform_marginals(std::size_t n);

}  // namespace fedefm::emd
