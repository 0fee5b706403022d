#include "fedefm/harness/config.hpp"

#include <fstream>
#include <set>

#include "fedefm/common/errors.hpp"
#include "fedefm/common/log.hpp"

namespace fedefm::harness {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

void check_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError((path.empty() ? "<root>" : path) + ": expected an object");
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key)) throw ConfigError(join(path, key) + ": unknown key");
}

void read(const json& obj, const std::string& path, const char* key, double& out) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(join(path, key) + ": expected a number");
  out = v.get<double>();
}

bool is_count(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

void read(const json& obj, const std::string& path, const char* key, std::size_t& out) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (is_count(v)) {
    out = v.get<std::size_t>();
    return;
  }
  if (v.is_number_integer()) throw ConfigError(join(path, key) + ": must be non-negative");
  throw ConfigError(join(path, key) + ": expected a non-negative integer");
}

void read(const json& obj, const std::string& path, const char* key, std::uint64_t& out, int) {
  std::size_t v = out;
  read(obj, path, key, v);
  out = v;
}

void read(const json& obj, const std::string& path, const char* key, bool& out) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_boolean()) throw ConfigError(join(path, key) + ": expected true or false");
  out = v.get<bool>();
}

void read(const json& obj, const std::string& path, const char* key, std::string& out) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_string()) throw ConfigError(join(path, key) + ": expected a string");
  out = v.get<std::string>();
}

const json* section(const json& obj, const std::string& path, const char* key, const std::set<std::string>& allowed) {
  if (!obj.contains(key)) return nullptr;
  check_keys(obj.at(key), join(path, key), allowed);
  return &obj.at(key);
}

std::string resolve(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return p;
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return path.lexically_normal().string();
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + ": " + what);
}

}  // namespace

void ExperimentConfig::validate() const {
  require(silos >= 1, "silos", "must be at least 1");
  require(topology == "ring" || topology == "star" || topology == "complete" || topology == "custom", "topology",
          "must be ring, star, complete or custom");
  require(topology == "custom" || edges.empty(), "edges", "only valid with topology \"custom\"");
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const std::string key = "edges[" + std::to_string(e) + "]";
    require(edges[e][0] < silos && edges[e][1] < silos, key, "silo id out of range");
    require(edges[e][0] != edges[e][1], key, "self-loop");
  }
  require(rounds >= 1, "rounds", "must be at least 1");
  require(unseen_fraction >= 0.0 && unseen_fraction <= 1.0, "unseen_fraction", "must lie in [0, 1]");
  require(batch_size >= 1, "batch_size", "must be at least 1");
  require(overseas_steps >= 1, "overseas_steps", "must be at least 1");
  require(local_steps >= 1, "local_steps", "must be at least 1");
  require(eval_every >= 1, "eval_every", "must be at least 1");
  require(workers >= 1, "workers", "must be at least 1");
  if (!aggregation.empty()) {
    require(aggregation.size() == silos, "aggregation", "needs one indicator per silo");
    int total = 0;
    for (int a : aggregation) {
      require(a == 0 || a == 1, "aggregation", "indicators must be 0 or 1");
      total += a;
    }
    require(total >= 1, "aggregation", "at least one silo must participate");
  }
  require(model.patch_size >= 1, "model.patch_size", "must be at least 1");
  require(model.image_side >= model.patch_size && model.image_side % model.patch_size == 0, "model.image_side",
          "must be a positive multiple of model.patch_size");
  require(model.patches() <= 64, "model.patch_size",
          "feature map has " + std::to_string(model.patches()) + " cells; the transport LP allows at most 64");
  require(model.embed_dim >= 1, "model.embed_dim", "must be at least 1");
  for (auto h : model.hidden_dims) require(h >= 1, "model.hidden_dims", "entries must be at least 1");
  distill.validate();
  require(emd.solver.tol > 0.0, "emd.tol", "must be positive");
  require(emd.solver.max_iter >= 1, "emd.max_iter", "must be at least 1");
  require(emd.ridge >= 0.0, "emd.ridge", "must be non-negative");
  require(data.classes >= 2, "data.classes", "must be at least 2");
  require(data.per_class >= 1, "data.per_class", "must be at least 1");
  require(data.atoms >= 1, "data.atoms", "must be at least 1");
  require(data.noise >= 0.0, "data.noise", "must be non-negative");
  require(unseen_fraction < 1.0 || data.classes >= silos || !data.manifest.empty(), "unseen_fraction",
          "1.0 needs at least one label per silo (data.classes >= silos)");
  if (!data.manifest.empty())
    require(std::filesystem::exists(data.manifest), "data.manifest", "file not found: " + data.manifest);
  if (!data.eval_manifest.empty())
    require(std::filesystem::exists(data.eval_manifest), "data.eval_manifest",
            "file not found: " + data.eval_manifest);
  require(finetune.classes >= 2, "finetune.classes", "must be at least 2");
  require(finetune.shots >= 1, "finetune.shots", "must be at least 1");
  require(finetune.eval_per_class >= 1, "finetune.eval_per_class", "must be at least 1");
  require(finetune.noise >= 0.0, "finetune.noise", "must be non-negative");
  require(finetune.learning_rate > 0.0, "finetune.learning_rate", "must be positive");
  require(finetune.batch_size >= 1 && finetune.batch_size <= finetune.classes * finetune.shots,
          "finetune.batch_size", "must lie in [1, classes * shots]");
  require(finetune.repeats >= 1, "finetune.repeats", "must be at least 1");
}

bool same_config(const ExperimentConfig& a, const ExperimentConfig& b) { return to_json(a) == to_json(b); }

json to_json(const ExperimentConfig& c) {
  json schedule = json::object();
  for (const auto& [round, lr] : c.distill.lr_schedule) schedule[std::to_string(round)] = lr;
  json edges = json::array();
  for (const auto& e : c.edges) edges.push_back({e[0], e[1]});
  return json{
      {"seed", c.seed},
      {"silos", c.silos},
      {"topology", c.topology},
      {"edges", edges},
      {"rounds", c.rounds},
      {"variant", federation::to_string(c.variant)},
      {"unseen_fraction", c.unseen_fraction},
      {"batch_size", c.batch_size},
      {"overseas_steps", c.overseas_steps},
      {"pretrain_steps", c.pretrain_steps},
      {"local_steps", c.local_steps},
      {"eval_every", c.eval_every},
      {"workers", c.workers},
      {"aggregation", c.aggregation},
      {"model",
       {{"image_side", c.model.image_side},
        {"patch_size", c.model.patch_size},
        {"embed_dim", c.model.embed_dim},
        {"hidden_dims", c.model.hidden_dims}}},
      {"distill",
       {{"beta", c.distill.beta},
        {"temperature", c.distill.temperature},
        {"learning_rate", c.distill.learning_rate},
        {"lr_schedule", schedule},
        {"normalize_weights", c.distill.normalize_weights}}},
      {"emd",
       {{"marginals", emd::to_string(c.emd.scheme)},
        {"clamp", c.emd.clamp},
        {"tol", c.emd.solver.tol},
        {"max_iter", c.emd.solver.max_iter},
        {"ridge", c.emd.ridge}}},
      {"data",
       {{"classes", c.data.classes},
        {"per_class", c.data.per_class},
        {"atoms", c.data.atoms},
        {"noise", c.data.noise},
        {"eval_per_class", c.data.eval_per_class},
        {"manifest", c.data.manifest},
        {"eval_manifest", c.data.eval_manifest}}},
      {"metrics", {{"timing", c.timing}}},
      {"finetune",
       {{"classes", c.finetune.classes},
        {"shots", c.finetune.shots},
        {"eval_per_class", c.finetune.eval_per_class},
        {"noise", c.finetune.noise},
        {"steps", c.finetune.steps},
        {"learning_rate", c.finetune.learning_rate},
        {"batch_size", c.finetune.batch_size},
        {"repeats", c.finetune.repeats},
        {"train_backbone", c.finetune.train_backbone}}},
  };
}

ExperimentConfig from_json(const json& doc, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  check_keys(doc, "",
             {"seed", "silos", "topology", "edges", "rounds", "variant", "unseen_fraction", "batch_size",
              "overseas_steps", "pretrain_steps", "local_steps", "eval_every", "workers", "aggregation", "model",
              "distill", "emd", "data", "metrics", "finetune"});
  read(doc, "", "seed", c.seed, 0);
  read(doc, "", "silos", c.silos);
  read(doc, "", "topology", c.topology);
  if (doc.contains("edges")) {
    const auto& e = doc.at("edges");
    if (!e.is_array()) throw ConfigError("edges: expected a list of [i, j] pairs");
    for (std::size_t k = 0; k < e.size(); ++k) {
      const std::string key = "edges[" + std::to_string(k) + "]";
      if (!e[k].is_array() || e[k].size() != 2 || !is_count(e[k][0]) || !is_count(e[k][1]))
        throw ConfigError(key + ": expected a pair of silo ids");
      c.edges.push_back({e[k][0].get<std::size_t>(), e[k][1].get<std::size_t>()});
    }
  }
  read(doc, "", "rounds", c.rounds);
  if (doc.contains("variant")) {
    std::string v;
    read(doc, "", "variant", v);
    c.variant = federation::parse_variant(v);
  }
  read(doc, "", "unseen_fraction", c.unseen_fraction);
  read(doc, "", "batch_size", c.batch_size);
  read(doc, "", "overseas_steps", c.overseas_steps);
  read(doc, "", "pretrain_steps", c.pretrain_steps);
  read(doc, "", "local_steps", c.local_steps);
  read(doc, "", "eval_every", c.eval_every);
  read(doc, "", "workers", c.workers);
  if (doc.contains("aggregation")) {
    const auto& a = doc.at("aggregation");
    if (!a.is_array()) throw ConfigError("aggregation: expected a list of 0/1 indicators");
    for (const auto& x : a) {
      if (!x.is_number_integer()) throw ConfigError("aggregation: expected a list of 0/1 indicators");
      c.aggregation.push_back(x.get<int>());
    }
  }
  if (const auto* m = section(doc, "", "model", {"image_side", "patch_size", "embed_dim", "hidden_dims"})) {
    read(*m, "model", "image_side", c.model.image_side);
    read(*m, "model", "patch_size", c.model.patch_size);
    read(*m, "model", "embed_dim", c.model.embed_dim);
    if (m->contains("hidden_dims")) {
      const auto& h = m->at("hidden_dims");
      if (!h.is_array()) throw ConfigError("model.hidden_dims: expected a list of sizes");
      c.model.hidden_dims.clear();
      for (const auto& x : h) {
        if (!is_count(x)) throw ConfigError("model.hidden_dims: expected a list of sizes");
        c.model.hidden_dims.push_back(x.get<std::size_t>());
      }
    }
  }
  if (const auto* d = section(doc, "", "distill",
                              {"beta", "temperature", "learning_rate", "lr_schedule", "normalize_weights"})) {
    read(*d, "distill", "beta", c.distill.beta);
    read(*d, "distill", "temperature", c.distill.temperature);
    read(*d, "distill", "learning_rate", c.distill.learning_rate);
    read(*d, "distill", "normalize_weights", c.distill.normalize_weights);
    if (d->contains("lr_schedule")) {
      const auto& s = d->at("lr_schedule");
      if (!s.is_object()) throw ConfigError("distill.lr_schedule: expected an object of round -> rate");
      for (const auto& [key, value] : s.items()) {
        const std::string path = "distill.lr_schedule." + key;
        std::size_t round = 0;
        try {
          std::size_t used = 0;
          round = std::stoul(key, &used);
          if (used != key.size()) throw std::invalid_argument(key);
        } catch (const std::exception&) {
          throw ConfigError(path + ": key must be a round number");
        }
        if (!value.is_number()) throw ConfigError(path + ": expected a number");
        c.distill.lr_schedule[round] = value.get<double>();
      }
    }
  }
  if (const auto* e = section(doc, "", "emd", {"marginals", "clamp", "tol", "max_iter", "ridge"})) {
    if (e->contains("marginals")) {
      std::string s;
      read(*e, "emd", "marginals", s);
      try {
        c.emd.scheme = emd::parse_marginal_scheme(s);
      } catch (const Error&) {
        throw ConfigError("emd.marginals: must be uniform or norm_proportional");
      }
    }
    read(*e, "emd", "clamp", c.emd.clamp);
    read(*e, "emd", "tol", c.emd.solver.tol);
    read(*e, "emd", "max_iter", c.emd.solver.max_iter);
    read(*e, "emd", "ridge", c.emd.ridge);
  }
  if (const auto* d = section(doc, "", "data",
                              {"classes", "per_class", "atoms", "noise", "eval_per_class", "manifest",
                               "eval_manifest"})) {
    read(*d, "data", "classes", c.data.classes);
    read(*d, "data", "per_class", c.data.per_class);
    read(*d, "data", "atoms", c.data.atoms);
    read(*d, "data", "noise", c.data.noise);
    read(*d, "data", "eval_per_class", c.data.eval_per_class);
    read(*d, "data", "manifest", c.data.manifest);
    read(*d, "data", "eval_manifest", c.data.eval_manifest);
    c.data.manifest = resolve(c.data.manifest, base_dir);
    c.data.eval_manifest = resolve(c.data.eval_manifest, base_dir);
  }
  if (const auto* m = section(doc, "", "metrics", {"timing"})) read(*m, "metrics", "timing", c.timing);
  if (const auto* f = section(doc, "", "finetune",
                              {"classes", "shots", "eval_per_class", "noise", "steps", "learning_rate",
                               "batch_size", "repeats", "train_backbone"})) {
    read(*f, "finetune", "classes", c.finetune.classes);
    read(*f, "finetune", "shots", c.finetune.shots);
    read(*f, "finetune", "eval_per_class", c.finetune.eval_per_class);
    read(*f, "finetune", "noise", c.finetune.noise);
    read(*f, "finetune", "steps", c.finetune.steps);
    read(*f, "finetune", "learning_rate", c.finetune.learning_rate);
    read(*f, "finetune", "batch_size", c.finetune.batch_size);
    read(*f, "finetune", "repeats", c.finetune.repeats);
    read(*f, "finetune", "train_backbone", c.finetune.train_backbone);
  }
  c.model.num_classes = c.data.classes;
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  auto cfg = from_json(doc, path.parent_path());
  log::info("resolved config: ", to_json(cfg).dump());
  return cfg;
}

std::uint64_t config_digest(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(cfg).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace fedefm::harness
