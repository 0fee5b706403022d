#include "fedefm/data/sampler.hpp"

#include <algorithm>
#include <numeric>

#include "fedefm/common/errors.hpp"
#include "fedefm/common/rng.hpp"

namespace fedefm::data {

std::vector<std::size_t> epoch_permutation(std::uint64_t seed, std::uint64_t epoch, std::size_t size) {
  std::vector<std::size_t> perm(size);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, {epoch}));
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

std::vector<std::size_t> MinibatchStream::next_indices(std::size_t size, std::size_t batch) {
  if (batch == 0) throw InputError("minibatch size must be positive");
  if (batch > size)
    throw InputError("minibatch size " + std::to_string(batch) + " exceeds silo dataset size " +
                     std::to_string(size));
  std::vector<std::size_t> out;
  out.reserve(batch);
  std::uint64_t epoch = consumed_ / size;
  auto perm = epoch_permutation(seed_, epoch, size);
  for (std::size_t k = 0; k < batch; ++k, ++consumed_) {
    if (consumed_ / size != epoch) {
      epoch = consumed_ / size;
      perm = epoch_permutation(seed_, epoch, size);
    }
    out.push_back(perm[consumed_ % size]);
  }
  return out;
}

Minibatch sample_minibatch(const Dataset& dataset, std::size_t batch, MinibatchStream& stream) {
  if (dataset.empty()) throw InputError("cannot sample from an empty dataset");
  const auto idx = stream.next_indices(dataset.size(), batch);
  return make_batch(dataset, idx);
}

}  // namespace fedefm::data
