#include "fedefm/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "fedefm/common/errors.hpp"
#include "fedefm/common/rng.hpp"

namespace fedefm::data {

namespace {
constexpr std::uint64_t kAtomTag = 0xa70;
constexpr std::uint64_t kClassTag = 0xc1a55;
constexpr std::uint64_t kNoiseTag = 0x401e;
}  // namespace

std::vector<std::size_t> Dataset::label_set() const {
  std::set<std::size_t> labels;
  for (const auto& s : samples) labels.insert(s.label);
  return {labels.begin(), labels.end()};
}

void Dataset::validate(std::size_t patch_size) const {
  if (side == 0 || patch_size == 0 || side % patch_size != 0)
    throw InputError("dataset side " + std::to_string(side) + " is not divisible by patch size " +
                     std::to_string(patch_size));
  for (const auto& s : samples) {
    if (s.label >= classes) throw InputError("sample label " + std::to_string(s.label) + " >= class count");
    if (s.image.shape() != nn::Shape{side, side}) throw InputError("sample image does not match dataset side");
  }
}

Minibatch make_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
  if (indices.empty()) throw InputError("empty minibatch");
  const std::size_t px = dataset.side * dataset.side;
  std::vector<double> values;
  values.reserve(indices.size() * px);
  Minibatch batch;
  for (auto i : indices) {
    const auto& s = dataset.samples.at(i);
    values.insert(values.end(), s.image.values().begin(), s.image.values().end());
    batch.labels.push_back(s.label);
  }
  batch.images = nn::Tensor({indices.size(), dataset.side, dataset.side}, std::move(values));
  return batch;
}

Minibatch as_batch(const Dataset& dataset) {
  std::vector<std::size_t> all(dataset.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_batch(dataset, all);
}

namespace {

std::vector<std::vector<double>> atom_dictionary(const SyntheticSpec& spec) {
  Rng rng(derive_seed(spec.seed, {kAtomTag}));
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t dim = spec.patch_size * spec.patch_size;
  std::vector<std::vector<double>> atoms(spec.atoms, std::vector<double>(dim));
  for (auto& a : atoms) {
    double ss = 0.0;
    for (auto& v : a) {
      v = normal(rng);
      ss += v * v;
    }
    const double rms = std::sqrt(ss / static_cast<double>(dim));
    for (auto& v : a) v /= rms;
  }
  return atoms;
}

nn::Tensor prototype(const SyntheticSpec& spec, const std::vector<std::vector<double>>& atoms, std::size_t c) {
  Rng rng(derive_seed(spec.seed, {kClassTag, spec.class_offset + c}));
  std::uniform_int_distribution<std::size_t> pick(0, atoms.size() - 1);
  std::uniform_real_distribution<double> amp(0.75, 1.25);
  std::bernoulli_distribution flip(0.5);
  const std::size_t g = spec.side / spec.patch_size, ps = spec.patch_size;
  nn::Tensor img({spec.side, spec.side});
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx) {
      const auto& atom = atoms[pick(rng)];
      const double a = amp(rng) * (flip(rng) ? -1.0 : 1.0);
      for (std::size_t py = 0; py < ps; ++py)
        for (std::size_t px = 0; px < ps; ++px)
          img.at(gy * ps + py, gx * ps + px) = a * atom[py * ps + px];
    }
  return img;
}

void check_spec(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw InputError("synthetic data needs at least 2 classes");
  if (spec.patch_size == 0 || spec.side < spec.patch_size || spec.side % spec.patch_size != 0)
    throw InputError("synthetic side must be a positive multiple of the patch size");
  if (spec.atoms == 0) throw InputError("synthetic data needs at least one atom");
  if (!(spec.noise >= 0.0)) throw InputError("synthetic noise must be non-negative");
}

}  // namespace

nn::Tensor class_prototype(const SyntheticSpec& spec, std::size_t c) {
  check_spec(spec);
  return prototype(spec, atom_dictionary(spec), c);
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  check_spec(spec);
  const auto atoms = atom_dictionary(spec);
  Dataset ds;
  ds.classes = spec.classes;
  ds.side = spec.side;
  ds.provenance = "synthetic(seed=" + std::to_string(spec.seed) + ",offset=" + std::to_string(spec.class_offset) +
                  ",split=" + std::to_string(spec.split) + ")";
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uint64_t id = 0;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    const nn::Tensor proto = prototype(spec, atoms, c);
    for (std::size_t k = 0; k < spec.per_class; ++k) {
      Rng rng(derive_seed(spec.seed, {kNoiseTag, spec.split, spec.class_offset + c, k}));
      nn::Tensor img = proto;
      if (spec.noise > 0.0)
        for (auto& v : img.values()) v += spec.noise * normal(rng);
      ds.samples.push_back(Sample{id++, std::move(img), c});
    }
  }
  return ds;
}

}  // namespace fedefm::data
