// Runs every acceptance criterion and prints one PASS/FAIL line per
// criterion. The JSON report goes to the path in argv[1] when given.

#include <fstream>
#include <iostream>

#include "disco/acceptance.hpp"

int main(int argc, char** argv) {
  disco::AcceptanceOptions options;
  options.log = [](const std::string& m) { std::cerr << "  .. " << m << std::endl; };
  const auto results = disco::run_acceptance(disco::Suite::all, options);
  bool all = true;
  for (const auto& r : results) {
    std::cout << disco::summary_line(r) << std::endl;
    all = all && r.passed();
  }
  if (argc > 1) std::ofstream(argv[1]) << disco::acceptance_report_json(disco::Suite::all, results);
  std::cout << (all ? "ALL CRITERIA PASSED" : "SOME CRITERIA FAILED") << std::endl;
  return all ? 0 : 1;
}
