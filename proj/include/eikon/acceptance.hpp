#pragma once

#include "eikon/harness.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace eikon {

/// Outcome of one acceptance criterion. `value` is the headline number; `detail`
/// lists the sub-checks that decided `pass`.
struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  double value = 0.0;
  std::string bound;
  std::string detail;
  double seconds = 0.0;
  std::map<std::string, std::string> tables;
};

/// Runs the twelve criteria at their fixed resolutions. `progress` is called as each
/// criterion finishes; the returned list is ordered by id.
std::vector<CriterionResult> run_acceptance(const std::function<void(const CriterionResult&)>& progress = {});

/// One summary row per criterion plus every criterion's tables.
ReportBundle acceptance_bundle(const std::vector<CriterionResult>& results);

/// `[PASS] 3 eikonal-consistency value=... (detail) 1.2s`
std::string format_line(const CriterionResult& r);

}  // namespace eikon
