#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedefm/data/minibatch.hpp"
#include "fedefm/nn/tensor.hpp"

namespace fedefm::data {

struct Sample {
  std::uint64_t id = 0;  // unique within the source dataset
  nn::Tensor image;      // [side, side]
  std::size_t label = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t classes = 0;
  std::size_t side = 0;
  std::string provenance;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  /// Sorted distinct labels present.
  std::vector<std::size_t> label_set() const;
  /// Throws InputError if labels or image sides are inconsistent.
  void validate(std::size_t patch_size = 1) const;
};

/// Gathers the given sample indices into a minibatch.
Minibatch make_batch(const Dataset& dataset, std::span<const std::size_t> indices);
/// All samples in order.
Minibatch as_batch(const Dataset& dataset);

/// Class prototypes are tiled from a shared dictionary of random
/// patch-sized atoms: each tile of class c picks an atom, a sign and an
/// amplitude from a stream seeded by (seed, class_offset + c). Samples add
/// i.i.d. Gaussian noise of std `noise`.
struct SyntheticSpec {
  std::size_t classes = 8;
  std::size_t per_class = 60;
  std::size_t side = 8;
  std::size_t patch_size = 4;
  std::size_t atoms = 6;
  double noise = 0.5;
  std::uint64_t seed = 1;
  std::size_t class_offset = 0;  // shifts prototype seeds, for held-out tasks
  std::uint64_t split = 0;       // noise stream; 0 = train, 1 = eval, ...
};

Dataset generate_synthetic(const SyntheticSpec& spec);

/// Noise-free prototype of class c (0 <= c < spec.classes).
nn::Tensor class_prototype(const SyntheticSpec& spec, std::size_t c);

}  // namespace fedefm::data
