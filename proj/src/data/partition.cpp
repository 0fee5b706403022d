#include "fedefm/data/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedefm/common/errors.hpp"
#include "fedefm/common/rng.hpp"

namespace fedefm::data {

namespace {
constexpr std::uint64_t kLabelTag = 0x1abe1;
constexpr std::uint64_t kDealTag = 0xdea1;
}  // namespace

std::size_t shared_label_count(std::size_t classes, double unseen_fraction) {
  return static_cast<std::size_t>(std::llround((1.0 - unseen_fraction) * static_cast<double>(classes)));
}

UnseenSplit partition_unseen(const Dataset& dataset, std::size_t silos, double unseen_fraction,
                             std::uint64_t seed) {
  if (silos == 0) throw InputError("partition_unseen: need at least one silo");
  if (!(unseen_fraction >= 0.0 && unseen_fraction <= 1.0))
    throw InputError("unseen_fraction must lie in [0, 1]");
  const std::size_t classes = dataset.classes;
  if (unseen_fraction == 1.0 && classes < silos)
    throw InputError("partition_unseen: " + std::to_string(classes) + " labels cannot give " +
                     std::to_string(silos) + " silos a private label each");

  std::vector<std::size_t> labels(classes);
  std::iota(labels.begin(), labels.end(), 0);
  Rng rng(derive_seed(seed, {kLabelTag}));
  std::shuffle(labels.begin(), labels.end(), rng);

  UnseenSplit split;
  split.unseen_fraction = unseen_fraction;
  const std::size_t shared = shared_label_count(classes, unseen_fraction);
  split.shared_labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(shared));
  std::sort(split.shared_labels.begin(), split.shared_labels.end());
  split.private_labels.resize(silos);
  std::vector<std::size_t> owner(classes, silos);  // silos = shared
  for (std::size_t r = shared; r < classes; ++r) {
    const std::size_t silo = (r - shared) % silos;
    split.private_labels[silo].push_back(labels[r]);
    owner[labels[r]] = silo;
  }
  for (auto& p : split.private_labels) std::sort(p.begin(), p.end());

  std::vector<std::vector<std::size_t>> by_label(classes);
  for (std::size_t i = 0; i < dataset.size(); ++i) by_label[dataset.samples[i].label].push_back(i);

  std::vector<std::vector<std::size_t>> members(silos);
  for (std::size_t label = 0; label < classes; ++label) {
    auto idx = by_label[label];
    if (owner[label] < silos) {
      members[owner[label]].insert(members[owner[label]].end(), idx.begin(), idx.end());
      continue;
    }
    Rng deal(derive_seed(seed, {kDealTag, label}));
    std::shuffle(idx.begin(), idx.end(), deal);
    for (std::size_t k = 0; k < idx.size(); ++k) members[k % silos].push_back(idx[k]);
  }

  for (std::size_t s = 0; s < silos; ++s) {
    std::sort(members[s].begin(), members[s].end());
    Dataset d;
    d.classes = classes;
    d.side = dataset.side;
    d.provenance = dataset.provenance + "/silo" + std::to_string(s);
    for (auto i : members[s]) d.samples.push_back(dataset.samples[i]);
    split.silos.push_back(std::move(d));
  }
  return split;
}

}  // namespace fedefm::data
