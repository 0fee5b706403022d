#pragma once

#include <algorithm>
#include <cmath>

namespace fedefm {

/// |a - b| / max(|a|, |b|, floor). The floor keeps entries whose true value
/// is zero from turning round-off into unbounded relative error.
inline double relative_error(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace fedefm
