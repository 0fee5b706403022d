#include "fedefm/harness/metrics.hpp"

#include <string>

#include "fedefm/common/errors.hpp"

namespace fedefm::harness {

using nlohmann::json;

json to_json(const federation::MetricsRow& row) {
  json weights = json::array();
  for (const auto& [j, w] : row.emd_weights) weights.push_back({{"neighbor", j}, {"weight", w}});
  json out;
  out["round"] = row.round;
  if (row.silo)
    out["silo"] = *row.silo;
  else
    out["silo"] = "global";
  out["train_loss"] = row.train_loss;
  out["eval_accuracy"] = row.eval_accuracy ? json(*row.eval_accuracy) : json(nullptr);
  out["emd_weights"] = weights;
  out["cycle_time_ms"] = row.cycle_time_ms;
  return out;
}

federation::MetricsRow row_from_json(const json& r) {
  try {
    federation::MetricsRow row;
    row.round = r.at("round").get<std::size_t>();
    const auto& silo = r.at("silo");
    if (silo.is_string()) {
      if (silo.get<std::string>() != "global") throw FormatError("metrics: silo must be an id or \"global\"");
    } else {
      row.silo = silo.get<std::size_t>();
    }
    row.train_loss = r.at("train_loss").get<double>();
    if (!r.at("eval_accuracy").is_null()) row.eval_accuracy = r.at("eval_accuracy").get<double>();
    for (const auto& w : r.at("emd_weights"))
      row.emd_weights.emplace_back(w.at("neighbor").get<std::size_t>(), w.at("weight").get<double>());
    row.cycle_time_ms = r.at("cycle_time_ms").get<double>();
    return row;
  } catch (const json::exception& e) {
    throw FormatError(std::string("metrics: malformed record: ") + e.what());
  }
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
  if (!out_) throw FormatError("metrics: cannot open " + path.string() + " for writing");
}

void MetricsWriter::write(const federation::MetricsRow& row) {
  out_ << to_json(row).dump() << '\n';
  out_.flush();
}

std::vector<federation::MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("metrics: cannot open " + path.string());
  std::vector<federation::MetricsRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error&) {
      throw FormatError("metrics: line " + std::to_string(lineno) + " is not a JSON record");
    }
    rows.push_back(row_from_json(record));
  }
  return rows;
}

}  // namespace fedefm::harness
