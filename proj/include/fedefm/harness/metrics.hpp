#pragma once

#include <filesystem>
#include <fstream>
#include <vector>

#include "fedefm/federation/protocol.hpp"

#include <json.hpp>

namespace fedefm::harness {

/// {"round", "silo" (id or "global"), "train_loss", "eval_accuracy" (or
/// null), "emd_weights": [{"neighbor", "weight"}], "cycle_time_ms"}
nlohmann::json to_json(const federation::MetricsRow& row);
/// Throws FormatError on a missing or mistyped field.
federation::MetricsRow row_from_json(const nlohmann::json& record);

/// Append-only metrics.jsonl writer, flushed after each record.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path);
  void write(const federation::MetricsRow& row);

 private:
  std::ofstream out_;
};

std::vector<federation::MetricsRow> read_metrics(const std::filesystem::path& path);

}  // namespace fedefm::harness
