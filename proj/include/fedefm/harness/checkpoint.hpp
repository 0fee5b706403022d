#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fedefm/nn/model.hpp"

namespace fedefm::harness {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, little-endian: "FEFM", u32 version, then records of
/// (u32 name length, name bytes, u32 rank, u32 dims..., f32 payload).
/// Metadata travels in the reserved records "meta.arch" and
/// "meta.config_digest". Values are stored as f32, so weights are rounded
/// to float on save; a loaded checkpoint saves back to identical bytes.
struct Checkpoint {
  nn::ModelWeights weights;
  std::uint64_t config_digest = 0;
  /// Extra named arrays (e.g. per-silo weights of a failed run).
  std::vector<std::pair<std::string, nn::Tensor>> extras;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError on bad magic, unsupported version, truncation or
/// inconsistent metadata.
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rounds every parameter to the nearest float.
nn::ModelWeights quantize_f32(const nn::ModelWeights& weights);

}  // namespace fedefm::harness
