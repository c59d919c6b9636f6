#pragma once

#include "eikon/background.hpp"
#include "eikon/foliation.hpp"
#include "eikon/lpcalc.hpp"
#include "eikon/phase.hpp"

#include <map>
#include <string>
#include <vector>

namespace eikon {

const char* version();

/// Flat key = value run configuration. `#` starts a comment; unknown keys are rejected.
struct RunConfig {
  BackgroundParams background;
  MarchParams march;
  int omega_theta = 9;  // lattice points pole to pole
  int omega_phi = 17;   // longitudes including the repeated 2 pi
  DirectionKey chart{3, 2};
  double chart_half_width = 2.4;
  double chart_spacing = 0.2;
  int taylor_theta = 129;
  int taylor_it = 40;
  std::vector<int> taylor_offsets{2, 4, 8, 16};
  int lp_n = 33;
  double lp_eps = 0.3;
  int lp_leaf_n = 31;
  LPSettings lp;
  ParametrixSpec parametrix;
  std::string scenario = "all";
  std::string out = "eikon_out";
  int levels = 3;
  std::map<std::string, double> tolerances;  // tol.<check> = value

  RunConfig();
  /// Tolerance override for a summary check, or `fallback`.
  double tol(const std::string& check, double fallback) const;
  bool has_tol(const std::string& check) const { return tolerances.count(check) > 0; }
  OmegaLattice lattice() const { return OmegaLattice::from_grid(omega_theta, omega_phi); }
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
/// Canonical key = value listing (round-trips through parse_config).
std::string echo_config(const RunConfig& c);
/// Spacings positive, du <= c_stab dq^2, lattice sizes sane, known scenario.
void validate(const RunConfig& c);

enum class Status { Pass, Fail, Report, AtFloor };
const char* status_name(Status s);

struct SummaryRow {
  std::string check;
  double value = 0.0;
  std::string bound;     // human-readable acceptance window, empty for reports
  Status status = Status::Report;
  std::string identity;  // named identity or property the row tests
};

struct ReportBundle {
  std::string scenario;
  std::vector<SummaryRow> rows;
  std::map<std::string, std::string> tables;  // file name -> CSV text
  std::string config_echo;
  double wall_seconds = 0.0;

  void report(const std::string& check, double value, const std::string& identity = "");
  void at_most(const std::string& check, double value, double tol, const std::string& identity);
  void at_least(const std::string& check, double value, double tol, const std::string& identity);
  void within(const std::string& check, double value, double lo, double hi, const std::string& identity);
  void add(SummaryRow row) { rows.push_back(std::move(row)); }
  void merge(const ReportBundle& other);
  bool failed() const;

  std::string summary_csv() const;
  /// summary.csv, one CSV per table and provenance.txt (config echo, version, timing).
  void write(const std::string& dir) const;
};

/// Number formatting shared by every CSV body (fixed significant digits, locale-free).
std::string fmt(double v);

/// Scenarios: flat-exactness | structure | lp-battery | charts | taylor | parametrix | all.
ReportBundle run_scenario(const RunConfig& c);

/// Observed orders over `levels` (>= 3) joint refinements of the config resolution.
/// study: structure (leaf identities and eikonal consistency), omega (omega identities),
/// charts (determinant identity). Throws InsufficientLevels.
ReportBundle convergence_study(const RunConfig& c, int levels, const std::string& study = "structure");

/// Six smooth periodic probes on a surface patch (names: cos3, mixed, low, high, bump, ridge).
std::vector<std::pair<std::string, std::vector<double>>> standard_probes(const Surface2D& s);

/// Index of the stored leaf closest to u.
std::size_t nearest_leaf(const FoliationTrace& T, double u);

/// Twenty fixed sample points in |x| < 2.5, the origin first.
std::vector<Vec3> parametrix_points();

/// Bochner and Hodge residuals on the perturbed torus with central differences.
struct IdentityLadder {
  std::vector<int> n;
  std::vector<double> h, bochner, hodge;
  std::string csv() const;
};
IdentityLadder bochner_hodge_ladder(double eps, const std::vector<int>& n = {33, 65, 129});

}  // namespace eikon
