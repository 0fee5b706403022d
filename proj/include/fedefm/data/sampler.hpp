#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fedefm/data/dataset.hpp"

namespace fedefm::data {

/// Epoch-based sampling state over one silo's dataset. Each epoch is a
/// permutation drawn from (seed, epoch); batches walk the concatenation of
/// epochs, so a batch may straddle an epoch boundary. The state is two
/// integers and fully determines the next batch.
class MinibatchStream {
 public:
  MinibatchStream() = default;
  explicit MinibatchStream(std::uint64_t seed) : seed_(seed) {}

  /// Indices of the next B samples of a dataset with `size` samples.
  std::vector<std::size_t> next_indices(std::size_t size, std::size_t batch);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t consumed() const { return consumed_; }

  friend bool operator==(const MinibatchStream&, const MinibatchStream&) = default;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t consumed_ = 0;
};

/// Throws InputError when batch is 0 or exceeds the dataset size.
Minibatch sample_minibatch(const Dataset& dataset, std::size_t batch, MinibatchStream& stream);

/// Permutation of [0, size) used for a given epoch of a stream.
std::vector<std::size_t> epoch_permutation(std::uint64_t seed, std::uint64_t epoch, std::size_t size);

}  // namespace fedefm::data
