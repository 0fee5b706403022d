#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <variant>

#include "fedefm/data/minibatch.hpp"
#include "fedefm/nn/model.hpp"

namespace fedefm::federation {

enum class MessageKind { dispatch, expert_return, upload, broadcast };

using Payload = std::variant<nn::ModelWeights, data::Minibatch>;

struct TrafficCounters {
  std::uint64_t weight_transfers = 0;
  std::uint64_t sample_transfers = 0;  // raw minibatches crossing a silo boundary
  std::uint64_t dispatches = 0;
  std::uint64_t returns = 0;
  std::uint64_t uploads = 0;
  std::uint64_t broadcasts = 0;

  TrafficCounters operator-(const TrafficCounters& o) const;
  friend bool operator==(const TrafficCounters&, const TrafficCounters&) = default;
};

/// In-process stand-in for the network between silos. Every inter-silo
/// payload goes through transmit(), which audits what crossed.
class MessageBus {
 public:
  /// Returns the payload as the receiver sees it (a copy).
  Payload transmit(std::size_t from, std::size_t to, MessageKind kind, const Payload& payload);
  nn::ModelWeights transmit_weights(std::size_t from, std::size_t to, MessageKind kind,
                                    const nn::ModelWeights& weights);

  TrafficCounters counters() const;

 private:
  std::atomic<std::uint64_t> weights_{0}, samples_{0};
  std::atomic<std::uint64_t> dispatches_{0}, returns_{0}, uploads_{0}, broadcasts_{0};
};

}  // namespace fedefm::federation
