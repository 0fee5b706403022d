#pragma once

#include <cstddef>
#include <functional>

namespace fedefm {

/// Runs body(i) for i in [0, count) on up to `workers` threads. Each index
/// runs exactly once; the first exception (lowest index) is rethrown after
/// all threads join.
void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& body);

}  // namespace fedefm
