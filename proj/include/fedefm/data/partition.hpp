#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fedefm/data/dataset.hpp"

namespace fedefm::data {

/// Per-silo datasets where round((1 - p) L) labels are shared by every silo
/// and the remaining labels are each owned by exactly one silo.
struct UnseenSplit {
  std::vector<Dataset> silos;
  std::vector<std::size_t> shared_labels;
  std::vector<std::vector<std::size_t>> private_labels;  // per silo
  double unseen_fraction = 0.0;
};

std::size_t shared_label_count(std::size_t classes, double unseen_fraction);

/// Shared labels' samples are dealt round-robin across silos after a seeded
/// shuffle; private labels are assigned round-robin to silos and all their
/// samples go to the owner. Throws InputError when p = 1 and there are
/// fewer labels than silos, or p is outside [0, 1].
UnseenSplit partition_unseen(const Dataset& dataset, std::size_t silos, double unseen_fraction,
                             std::uint64_t seed);

}  // namespace fedefm::data
