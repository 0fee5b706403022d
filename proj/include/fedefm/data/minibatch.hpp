#pragma once

#include <cstddef>
#include <vector>

#include "fedefm/nn/tensor.hpp"

namespace fedefm::data {

/// B images of side x side drawn from a single silo, with their labels.
struct Minibatch {
  nn::Tensor images;  // [B, side, side]
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t side() const { return images.rank() == 3 ? images.dim(1) : 0; }
};

}  // namespace fedefm::data
