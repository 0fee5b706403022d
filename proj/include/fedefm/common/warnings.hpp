#pragma once

#include <atomic>
#include <cstdint>

namespace fedefm {

// Process-wide counters for recoverable numeric conditions. They never feed
// back into results, so concurrent increments cannot affect determinism.
struct WarningCounters {
  std::atomic<std::uint64_t> log_clamped{0};        // log argument below 1e-12
  std::atomic<std::uint64_t> zero_norm_feature{0};  // cosine cost with a zero row
  std::atomic<std::uint64_t> marginal_fallback{0};  // norm marginals fell back to uniform
  std::atomic<std::uint64_t> empty_teachers{0};     // distillation with no teachers
  std::atomic<std::uint64_t> disconnected_graph{0};

  void reset() {
    log_clamped = 0;
    zero_norm_feature = 0;
    marginal_fallback = 0;
    empty_teachers = 0;
    disconnected_graph = 0;
  }
};

WarningCounters& warnings();

}  // namespace fedefm
