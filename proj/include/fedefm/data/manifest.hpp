#pragma once

#include <filesystem>

#include "fedefm/data/dataset.hpp"

namespace fedefm::data {

/// On-disk dataset: one raw little-endian f32 file of side*side pixels per
/// sample plus `manifest.txt` with one `relative/path,label` line each.
/// Lines starting with '#' are comments.
void write_manifest_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Loads `manifest_path`; image files resolve relative to its directory.
/// Side is inferred from the first file; classes = max label + 1 unless a
/// `# classes N` comment says otherwise.
Dataset read_manifest_dataset(const std::filesystem::path& manifest_path);

}  // namespace fedefm::data
