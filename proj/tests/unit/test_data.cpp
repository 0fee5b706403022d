#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "fedefm/common/errors.hpp"
#include "fedefm/data/dataset.hpp"
#include "fedefm/data/manifest.hpp"
#include "fedefm/data/partition.hpp"
#include "fedefm/data/sampler.hpp"
#include "fedefm/nn/model.hpp"

using namespace fedefm;
using namespace fedefm::data;

namespace {

std::set<std::size_t> labels_of(const Dataset& d) {
  std::set<std::size_t> out;
  for (const auto& s : d.samples) out.insert(s.label);
  return out;
}

// softmax regression on raw pixels, full batch gradient descent
double linear_probe_accuracy(const Dataset& d, int steps, double lr) {
  const std::size_t dim = d.side * d.side, k = d.classes, n = d.size();
  std::vector<double> w(k * (dim + 1), 0.0);
  auto logits = [&](const Sample& s) {
    std::vector<double> z(k);
    for (std::size_t c = 0; c < k; ++c) {
      double acc = w[c * (dim + 1) + dim];
      for (std::size_t p = 0; p < dim; ++p) acc += w[c * (dim + 1) + p] * s.image[p];
      z[c] = acc;
    }
    return z;
  };
  for (int step = 0; step < steps; ++step) {
    std::vector<double> g(w.size(), 0.0);
    for (const auto& s : d.samples) {
      const auto p = nn::softmax_temperature(logits(s), 1.0);
      for (std::size_t c = 0; c < k; ++c) {
        const double r = (p[c] - (c == s.label ? 1.0 : 0.0)) / static_cast<double>(n);
        for (std::size_t q = 0; q < dim; ++q) g[c * (dim + 1) + q] += r * s.image[q];
        g[c * (dim + 1) + dim] += r;
      }
    }
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
  }
  std::size_t hits = 0;
  for (const auto& s : d.samples) {
    const auto z = logits(s);
    hits += static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin()) == s.label;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace

TEST_CASE("noise-free synthetic samples equal their prototype") {
  SyntheticSpec spec;
  spec.noise = 0.0;
  spec.per_class = 3;
  const auto d = generate_synthetic(spec);
  REQUIRE(d.size() == spec.classes * 3);
  for (const auto& s : d.samples) CHECK(s.image == class_prototype(spec, s.label));
}

TEST_CASE("synthetic generation is deterministic and seed sensitive") {
  SyntheticSpec spec;
  spec.per_class = 4;
  const auto a = generate_synthetic(spec), b = generate_synthetic(spec);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.samples[i].image == b.samples[i].image);
    CHECK(a.samples[i].label == b.samples[i].label);
    CHECK(a.samples[i].id == b.samples[i].id);
  }
  spec.split = 1;
  const auto c = generate_synthetic(spec);
  CHECK_FALSE(a.samples[0].image == c.samples[0].image);
  CHECK(class_prototype(spec, 0) == class_prototype(SyntheticSpec{}, 0));
  spec.class_offset = spec.classes;
  CHECK_FALSE(class_prototype(spec, 0) == class_prototype(SyntheticSpec{}, 0));
}

TEST_CASE("synthetic generation rejects bad specs") {
  SyntheticSpec spec;
  spec.classes = 1;
  CHECK_THROWS_AS(generate_synthetic(spec), InputError);
  spec = {};
  spec.side = 6;
  CHECK_THROWS_AS(generate_synthetic(spec), InputError);
  spec = {};
  spec.noise = -1.0;
  CHECK_THROWS_AS(generate_synthetic(spec), InputError);
}

TEST_CASE("low-noise synthetic data is linearly separable") {
  SyntheticSpec spec;
  spec.noise = 0.1;
  spec.per_class = 20;
  CHECK(linear_probe_accuracy(generate_synthetic(spec), 100, 0.5) >= 0.95);
}

TEST_CASE("partition extremes") {
  SyntheticSpec spec;
  spec.per_class = 10;
  const auto d = generate_synthetic(spec);

  const auto all_private = partition_unseen(d, 4, 1.0, 3);
  CHECK(all_private.shared_labels.empty());
  std::set<std::size_t> seen;
  for (std::size_t s = 0; s < 4; ++s) {
    const auto ls = labels_of(all_private.silos[s]);
    CHECK(ls.size() == 2);
    for (auto l : ls) CHECK(seen.insert(l).second);
    CHECK(all_private.private_labels[s].size() == 2);
  }

  const auto all_shared = partition_unseen(d, 4, 0.0, 3);
  CHECK(all_shared.shared_labels.size() == 8);
  for (const auto& silo : all_shared.silos) {
    CHECK(labels_of(silo).size() == 8);
    CHECK(silo.size() >= 16);
  }

  const auto half = partition_unseen(d, 4, 0.5, 3);
  CHECK(half.shared_labels.size() == 4);
  for (std::size_t s = 0; s < 4; ++s) {
    CHECK(half.private_labels[s].size() == 1);
    CHECK(labels_of(half.silos[s]).size() == 5);
  }
}

TEST_CASE("partition conserves samples and nests shared labels along the p grid") {
  SyntheticSpec spec;
  spec.per_class = 9;
  spec.classes = 10;
  const auto d = generate_synthetic(spec);
  std::vector<std::size_t> previous;
  for (double p : {0.0, 0.2, 0.5, 0.8, 1.0}) {
    const auto split = partition_unseen(d, 3, p, 11);
    std::multiset<std::uint64_t> ids;
    for (const auto& silo : split.silos)
      for (const auto& s : silo.samples) ids.insert(s.id);
    CHECK(ids.size() == d.size());
    CHECK(std::set<std::uint64_t>(ids.begin(), ids.end()).size() == d.size());
    CHECK(split.shared_labels.size() == shared_label_count(10, p));
    if (!previous.empty())
      CHECK(std::includes(previous.begin(), previous.end(), split.shared_labels.begin(),
                          split.shared_labels.end()));
    previous = split.shared_labels;
  }
}

TEST_CASE("partition errors") {
  SyntheticSpec spec;
  spec.per_class = 2;
  const auto d = generate_synthetic(spec);
  CHECK_THROWS_AS(partition_unseen(d, 9, 1.0, 1), InputError);
  CHECK_THROWS_AS(partition_unseen(d, 2, 1.3, 1), InputError);
  CHECK_THROWS_AS(partition_unseen(d, 0, 0.5, 1), InputError);
  CHECK_NOTHROW(partition_unseen(d, 9, 0.5, 1));
}

TEST_CASE("sampler draws epochs without replacement and is reproducible") {
  SyntheticSpec spec;
  spec.per_class = 3;
  spec.classes = 4;
  const auto d = generate_synthetic(spec);

  MinibatchStream full(5);
  const auto idx = full.next_indices(d.size(), d.size());
  CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == d.size());

  MinibatchStream a(9);
  auto b = a;
  CHECK(sample_minibatch(d, 5, a).labels == sample_minibatch(d, 5, b).labels);
  CHECK(a == b);

  MinibatchStream epoch(21);
  std::vector<std::size_t> drawn;
  for (int k = 0; k < 4; ++k) {
    const auto part = epoch.next_indices(d.size(), 3);
    drawn.insert(drawn.end(), part.begin(), part.end());
  }
  std::sort(drawn.begin(), drawn.end());
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(drawn[i] == i);

  const auto batch = sample_minibatch(d, 4, epoch);
  CHECK(batch.images.shape() == nn::Shape{4, spec.side, spec.side});
  CHECK(epoch.consumed() == 16);

  MinibatchStream bad(1);
  CHECK_THROWS_AS(bad.next_indices(d.size(), d.size() + 1), InputError);
  CHECK_THROWS_AS(bad.next_indices(d.size(), 0), InputError);
  CHECK_THROWS_AS(sample_minibatch(Dataset{}, 1, bad), InputError);
}

TEST_CASE("manifest round trip") {
  SyntheticSpec spec;
  spec.per_class = 2;
  const auto d = generate_synthetic(spec);
  const auto dir = std::filesystem::temp_directory_path() / "fedefm_manifest_test";
  std::filesystem::remove_all(dir);
  write_manifest_dataset(d, dir);
  const auto back = read_manifest_dataset(dir / "manifest.txt");
  REQUIRE(back.size() == d.size());
  CHECK(back.classes == d.classes);
  CHECK(back.side == d.side);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(back.samples[i].label == d.samples[i].label);
    CHECK(back.samples[i].id == i);
    for (std::size_t k = 0; k < d.side * d.side; ++k)
      CHECK(back.samples[i].image[k] == static_cast<double>(static_cast<float>(d.samples[i].image[k])));
  }
  CHECK_THROWS_AS(read_manifest_dataset(dir / "missing.txt"), FormatError);
  std::filesystem::remove_all(dir);
}
