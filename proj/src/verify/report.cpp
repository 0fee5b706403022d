#include <algorithm>
#include <iomanip>
#include <ostream>

#include "fedefm/verify/suites.hpp"

namespace fedefm::verify {

namespace {
constexpr std::size_t kMaxFailures = 10;
}

bool SuiteReport::ok() const {
  return !properties.empty() &&
         std::all_of(properties.begin(), properties.end(), [](const auto& p) { return p.passed == p.total; });
}

PropertyCount& SuiteReport::property(const std::string& name) {
  for (auto& p : properties)
    if (p.property == name) return p;
  properties.push_back({name});
  return properties.back();
}

const PropertyCount* SuiteReport::find(const std::string& name) const {
  for (const auto& p : properties)
    if (p.property == name) return &p;
  return nullptr;
}

void SuiteReport::record(const std::string& name, bool pass, double error, const std::string& detail) {
  auto& p = property(name);
  ++p.total;
  if (pass) ++p.passed;
  p.max_error = std::max(p.max_error, error);
  if (!pass && failures.size() < kMaxFailures) failures.push_back(name + ": " + detail);
}

void SuiteReport::print(std::ostream& os) const {
  os << "suite " << suite << " (" << std::fixed << std::setprecision(2) << seconds << " s)\n";
  for (const auto& p : properties) {
    os << "  " << std::left << std::setw(34) << p.property << std::right << std::setw(6) << p.passed << " / "
       << p.total;
    if (p.max_error > 0.0) os << "  max err " << std::scientific << std::setprecision(3) << p.max_error;
    os << std::fixed << "\n";
  }
  if (!histogram.empty()) {
    os << "  error histogram:\n";
    for (std::size_t b = 0; b < histogram.size(); ++b) {
      os << "    ";
      if (b < bins.size())
        os << "<= " << std::scientific << std::setprecision(0) << bins[b];
      else
        os << " > " << std::scientific << std::setprecision(0) << bins.back();
      os << std::fixed << "  " << histogram[b] << "\n";
    }
  }
  for (const auto& f : failures) os << "  FAIL " << f << "\n";
  os << "  " << (ok() ? "PASS" : "FAIL") << "\n";
}

}  // namespace fedefm::verify
