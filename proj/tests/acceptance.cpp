// Runs the acceptance criteria and prints one line per criterion (also written to
// acceptance_summary.txt in the working directory). Exit status is the number of failed criteria.
#include "eikon/acceptance.hpp"

#include <cstdio>
#include <fstream>

int main() {
  const auto results = eikon::run_acceptance([](const eikon::CriterionResult& r) {
    std::fprintf(stderr, "  finished %d %s (%.1f s)\n", r.id, r.name.c_str(), r.seconds);
  });
  std::ofstream log("acceptance_summary.txt");
  int failed = 0;
  for (const auto& r : results) {
    std::printf("%s\n", eikon::format_line(r).c_str());
    log << eikon::format_line(r) << "\n";
    failed += r.pass ? 0 : 1;
  }
  std::printf("%zu criteria, %d failed\n", results.size(), failed);
  log << results.size() << " criteria, " << failed << " failed\n";
  return failed;
}
