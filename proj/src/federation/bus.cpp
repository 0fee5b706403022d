#include "fedefm/federation/bus.hpp"

namespace fedefm::federation {

TrafficCounters TrafficCounters::operator-(const TrafficCounters& o) const {
  return {weight_transfers - o.weight_transfers, sample_transfers - o.sample_transfers,
          dispatches - o.dispatches,             returns - o.returns,
          uploads - o.uploads,                   broadcasts - o.broadcasts};
}

Payload MessageBus::transmit(std::size_t from, std::size_t to, MessageKind kind, const Payload& payload) {
  if (std::holds_alternative<data::Minibatch>(payload)) {
    if (from != to) samples_++;
  } else {
    weights_++;
  }
  switch (kind) {
    case MessageKind::dispatch: dispatches_++; break;
    case MessageKind::expert_return: returns_++; break;
    case MessageKind::upload: uploads_++; break;
    case MessageKind::broadcast: broadcasts_++; break;
  }
  return payload;
}

nn::ModelWeights MessageBus::transmit_weights(std::size_t from, std::size_t to, MessageKind kind,
                                              const nn::ModelWeights& weights) {
  return std::get<nn::ModelWeights>(transmit(from, to, kind, Payload{weights}));
}

TrafficCounters MessageBus::counters() const {
  return {weights_.load(), samples_.load(), dispatches_.load(),
          returns_.load(), uploads_.load(), broadcasts_.load()};
}

}  // namespace fedefm::federation
