#ifndef DISCO_ACCEPTANCE_HPP
#define DISCO_ACCEPTANCE_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace disco {

enum class Suite { all, geometry, flow, modconv, pipeline };

Suite suite_from_string(const std::string& name);
std::string to_string(Suite suite);

/// One measured quantity and the bound it must satisfy.
struct Measurement {
  enum class Bound { below, at_least, equals };
  std::string name;
  double value;
  double threshold;
  Bound bound;
  bool ok() const;
};

struct CriterionResult {
  int id;
  std::string title;
  std::vector<Measurement> measurements;
  double seconds = 0.0;
  std::string error;  // set when the check threw instead of completing
  bool passed() const;
};

struct AcceptanceOptions {
  std::uint64_t seed = 42;
  /// Progress messages (e.g. training milestones); may be empty.
  std::function<void(const std::string&)> log;
};

/// geometry: 1-2, flow: 3, modconv: 4, pipeline: 5-7, all: 1-7.
std::vector<CriterionResult> run_acceptance(Suite suite, const AcceptanceOptions& options = {});

std::string acceptance_report_json(Suite suite, const std::vector<CriterionResult>& results);

/// "PASS criterion 3 (flow composition and warping): name=value<threshold ..."
std::string summary_line(const CriterionResult& r);

}  // namespace disco

#endif  // DISCO_ACCEPTANCE_HPP
