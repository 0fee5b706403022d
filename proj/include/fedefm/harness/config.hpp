#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedefm/distill/distill.hpp"
#include "fedefm/emd/layer.hpp"
#include "fedefm/federation/protocol.hpp"
#include "fedefm/nn/model.hpp"

#include <json.hpp>

namespace fedefm::harness {

struct DataConfig {
  std::size_t classes = 8;
  std::size_t per_class = 60;
  std::size_t atoms = 6;
  double noise = 0.5;
  std::size_t eval_per_class = 30;
  std::string manifest;       // empty: synthetic data
  std::string eval_manifest;  // empty: carve the eval set out of `manifest`

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

/// Held-out downstream task: new classes built from the same atom
/// dictionary, few shots per class.
struct FinetuneConfig {
  std::size_t classes = 4;
  std::size_t shots = 5;
  std::size_t eval_per_class = 50;
  double noise = 0.8;
  std::size_t steps = 60;
  double learning_rate = 0.05;
  std::size_t batch_size = 8;
  std::size_t repeats = 10;
  bool train_backbone = true;

  friend bool operator==(const FinetuneConfig&, const FinetuneConfig&) = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::size_t silos = 4;
  std::string topology = "ring";  // ring | star | complete | custom
  std::vector<std::array<std::size_t, 2>> edges;
  std::size_t rounds = 10;
  federation::Variant variant = federation::Variant::fedefm;
  double unseen_fraction = 0.5;
  std::size_t batch_size = 16;
  std::size_t overseas_steps = 5;
  std::size_t pretrain_steps = 50;
  std::size_t local_steps = 1;
  std::size_t eval_every = 1;
  std::size_t workers = 1;
  std::vector<int> aggregation;  // empty: every silo participates
  nn::Architecture model;        // num_classes follows data.classes
  distill::DistillConfig distill;
  emd::EmdOptions emd;
  DataConfig data;
  bool timing = true;
  FinetuneConfig finetune;

  /// Throws ConfigError naming the key path of the first bad value.
  void validate() const;
};

bool same_config(const ExperimentConfig& a, const ExperimentConfig& b);

/// Resolved configuration with every key present.
nlohmann::json to_json(const ExperimentConfig& cfg);

/// Parses a (possibly partial) document over the defaults. Relative data
/// paths resolve against `base_dir`. Unknown keys, wrong types and
/// out-of-range values raise ConfigError with the key path.
ExperimentConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});

/// Reads, validates and echoes the resolved configuration to the log.
ExperimentConfig load_config(const std::filesystem::path& path);

/// 64-bit FNV-1a of the canonical resolved JSON.
std::uint64_t config_digest(const ExperimentConfig& cfg);

}  // namespace fedefm::harness
