#include <cstdlib>
#include <exception>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "fedefm/common/log.hpp"
#include "fedefm/common/parallel.hpp"
#include "fedefm/common/warnings.hpp"

namespace fedefm {

WarningCounters& warnings() {
  static WarningCounters counters;
  return counters;
}

void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& body) {
  if (count == 0) return;
  workers = std::max<std::size_t>(1, std::min(workers, count));
  std::vector<std::exception_ptr> errors(count);
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    // Static striding: thread t owns indices t, t + workers, ...
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) {
      threads.emplace_back([&, t] {
        for (std::size_t i = t; i < count; i += workers) {
          try {
            body(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : threads) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace log {

Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("FEDEFM_LOG");
    if (env == nullptr) return Level::info;
    std::string v(env);
    if (v == "debug") return Level::debug;
    if (v == "warn") return Level::warn;
    if (v == "quiet") return Level::quiet;
    return Level::info;
  }();
  return level;
}

void write(Level level, const std::string& message) {
  static std::mutex mu;
  static constexpr const char* kTags[] = {"debug", "info", "warn", ""};
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << "[" << kTags[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace log
}  // namespace fedefm
