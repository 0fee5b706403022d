#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fedefm/harness/config.hpp"

namespace fedefm::verify {

struct PropertyCount {
  std::string property;
  std::size_t passed = 0;
  std::size_t total = 0;
  double max_error = 0.0;  // worst observed error for numeric properties
};

struct SuiteReport {
  std::string suite;
  std::vector<PropertyCount> properties;
  std::vector<std::string> failures;  // first few, for diagnosis
  std::vector<std::size_t> histogram;  // optional error histogram, see bins
  std::vector<double> bins;            // upper edges of histogram bins
  double seconds = 0.0;

  bool ok() const;
  PropertyCount& property(const std::string& name);
  const PropertyCount* find(const std::string& name) const;
  void record(const std::string& name, bool pass, double error = 0.0, const std::string& detail = {});
  void print(std::ostream& os) const;
};

struct EmdSuiteOptions {
  std::size_t instances = 1000;
  std::size_t min_n = 2, max_n = 8;
  double tolerance = 1e-6;
  std::uint64_t seed = 20240501;
};

/// Interior-point objective and marginals against the transportation simplex
/// (and, for uniform marginals, exhaustive permutation search).
SuiteReport emd_oracle_suite(const EmdSuiteOptions& options = {});

struct EmdGradientOptions {
  std::size_t instances = 200;
  std::size_t min_n = 2, max_n = 5;
  double step = 1e-5;
  double tolerance = 1e-4;
  double margin = 1e-3;  // non-degeneracy margin on reduced costs and basic flows
  std::uint64_t seed = 20240502;
};

/// Implicit-differentiation score gradient against central differences of
/// the exact optimal score.
SuiteReport emd_gradient_suite(const EmdGradientOptions& options = {});

struct GradSuiteOptions {
  std::size_t cases = 100;
  double step = 1e-4;
  double tolerance = 1e-5;
  double emd_tolerance = 1e-4;  // emd_similarity only
  std::uint64_t seed = 20240503;
};

/// Finite-difference checks of every autodiff primitive, the model forward
/// pass, the distillation loss and the EMD similarity layer.
SuiteReport grad_suite(const GradSuiteOptions& options = {});

struct ProtocolSuiteOptions {
  std::size_t silos = 4;
  std::size_t rounds = 10;
  std::size_t parallel_workers = 4;
  std::uint64_t seed = 7;
};

/// Small ring federation used by the protocol suite.
harness::ExperimentConfig protocol_fixture(const ProtocolSuiteOptions& options);

/// Serial vs parallel vs repeated runs of a ring federation (bitwise), and
/// message-bus audit counts per round.
SuiteReport protocol_suite(const ProtocolSuiteOptions& options = {});

}  // namespace fedefm::verify
