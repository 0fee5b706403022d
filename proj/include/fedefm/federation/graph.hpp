#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace fedefm::federation {

enum class TopologyKind { ring, star, complete, custom };

std::string to_string(TopologyKind kind);

/// Directed neighbor topology. neighbors(i) lists the in-neighbors of silo i:
/// the silos whose data trains i's overseas experts and whose knowledge
/// flows back into i. Lists are sorted ascending, free of self-loops.
class SiloGraph {
 public:
  /// i <-> i +- 1 (mod N); a 2-silo ring has one neighbor each.
  static SiloGraph ring(std::size_t silos);
  /// Silo 0 is the hub: N(0) = all others, N(i) = {0}.
  static SiloGraph star(std::size_t silos);
  static SiloGraph complete(std::size_t silos);
  /// Edge {i, j} makes j an in-neighbor of i. Throws ConfigError on
  /// self-loops, out-of-range ids or duplicates.
  static SiloGraph custom(std::size_t silos, const std::vector<std::array<std::size_t, 2>>& edges);

  std::size_t silos() const { return adjacency_.size(); }
  const std::vector<std::size_t>& neighbors(std::size_t silo) const { return adjacency_.at(silo); }
  TopologyKind kind() const { return kind_; }
  /// Number of directed (i, j) pairs with j in N(i).
  std::size_t edge_count() const;
  bool weakly_connected() const;

 private:
  SiloGraph(std::vector<std::vector<std::size_t>> adjacency, TopologyKind kind);

  std::vector<std::vector<std::size_t>> adjacency_;
  TopologyKind kind_;
};

}  // namespace fedefm::federation
