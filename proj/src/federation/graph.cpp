#include "fedefm/federation/graph.hpp"

#include <algorithm>
#include <numeric>

#include "fedefm/common/errors.hpp"
#include "fedefm/common/log.hpp"
#include "fedefm/common/warnings.hpp"

namespace fedefm::federation {

std::string to_string(TopologyKind kind) {
  switch (kind) {
    case TopologyKind::ring: return "ring";
    case TopologyKind::star: return "star";
    case TopologyKind::complete: return "complete";
    case TopologyKind::custom: return "custom";
  }
  return "custom";
}

SiloGraph::SiloGraph(std::vector<std::vector<std::size_t>> adjacency, TopologyKind kind)
    : adjacency_(std::move(adjacency)), kind_(kind) {
  for (auto& list : adjacency_) std::sort(list.begin(), list.end());
  if (!weakly_connected()) {
    warnings().disconnected_graph++;
    log::warn("silo graph is not weakly connected; isolated silos never receive knowledge");
  }
}

SiloGraph SiloGraph::ring(std::size_t silos) {
  if (silos == 0) throw ConfigError("silos: must be at least 1");
  std::vector<std::vector<std::size_t>> adj(silos);
  for (std::size_t i = 0; i < silos && silos > 1; ++i) {
    const std::size_t prev = (i + silos - 1) % silos;
    const std::size_t next = (i + 1) % silos;
    adj[i].push_back(prev);
    if (next != prev) adj[i].push_back(next);
  }
  return SiloGraph(std::move(adj), TopologyKind::ring);
}

SiloGraph SiloGraph::star(std::size_t silos) {
  if (silos == 0) throw ConfigError("silos: must be at least 1");
  std::vector<std::vector<std::size_t>> adj(silos);
  for (std::size_t i = 1; i < silos; ++i) {
    adj[0].push_back(i);
    adj[i].push_back(0);
  }
  return SiloGraph(std::move(adj), TopologyKind::star);
}

SiloGraph SiloGraph::complete(std::size_t silos) {
  if (silos == 0) throw ConfigError("silos: must be at least 1");
  std::vector<std::vector<std::size_t>> adj(silos);
  for (std::size_t i = 0; i < silos; ++i)
    for (std::size_t j = 0; j < silos; ++j)
      if (i != j) adj[i].push_back(j);
  return SiloGraph(std::move(adj), TopologyKind::complete);
}

SiloGraph SiloGraph::custom(std::size_t silos, const std::vector<std::array<std::size_t, 2>>& edges) {
  if (silos == 0) throw ConfigError("silos: must be at least 1");
  std::vector<std::vector<std::size_t>> adj(silos);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [i, j] = edges[e];
    const std::string where = "edges[" + std::to_string(e) + "]";
    if (i >= silos || j >= silos) throw ConfigError(where + ": silo id out of range");
    if (i == j) throw ConfigError(where + ": self-loop");
    if (std::find(adj[i].begin(), adj[i].end(), j) != adj[i].end())
      throw ConfigError(where + ": duplicate edge");
    adj[i].push_back(j);
  }
  return SiloGraph(std::move(adj), TopologyKind::custom);
}

std::size_t SiloGraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& list : adjacency_) n += list.size();
  return n;
}

bool SiloGraph::weakly_connected() const {
  const std::size_t n = adjacency_.size();
  if (n <= 1) return true;
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (auto j : adjacency_[i]) parent[find(i)] = find(j);
  const std::size_t root = find(0);
  for (std::size_t i = 1; i < n; ++i)
    if (find(i) != root) return false;
  return true;
}

}  // namespace fedefm::federation
