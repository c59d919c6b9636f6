#include "doctest.h"

#include "eikon/acceptance.hpp"
#include "eikon/error.hpp"
#include "eikon/harness.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace eikon;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no eikon::Error thrown");
  return ErrorKind::Io;
}

// Small Euclidean run: 2.6-wide leaves pinned at 2.1, coarse sampling grid.
RunConfig small_flat() {
  return parse_config(
      "family = flat\n"
      "grid_half_width = 3\n"
      "grid_spacing = 0.25\n"
      "leaf_half_width = 2.6\n"
      "r_pin = 2.1\n"
      "chart_half_width = 1.2\n"
      "scenario = flat-exactness\n");
}

const SummaryRow* find_row(const ReportBundle& b, const std::string& check) {
  for (const auto& r : b.rows)
    if (r.check == check) return &r;
  return nullptr;
}

}  // namespace

TEST_CASE("config echo round-trips through the parser") {
  RunConfig c = parse_config(
      "# comment line\n"
      "family = bump   # trailing comment\n"
      "epsilon = 0.025\n"
      "dq = 0.1\n"
      "du = 0.002\n"
      "probe_u = -0.5, 0, 0.5\n"
      "taylor_offsets = 1,2,4\n"
      "lp_J = 6\n"
      "tol.charts.determinant_identity = 2e-3\n"
      "scenario = charts\n");
  CHECK(c.background.family == Family::Bump);
  CHECK(c.background.epsilon == 0.025);
  CHECK(c.march.probe_u == std::vector<double>{-0.5, 0.0, 0.5});
  CHECK(c.taylor_offsets == std::vector<int>{1, 2, 4});
  CHECK(c.lp.J == 6);
  CHECK(c.has_tol("charts.determinant_identity"));
  CHECK(c.tol("charts.determinant_identity", 0) == 2e-3);
  CHECK(c.tol("missing", 7.0) == 7.0);
  const std::string echo = echo_config(c);
  CHECK(echo_config(parse_config(echo)) == echo);
}

TEST_CASE("defaults place a stored leaf at u = 0") {
  const RunConfig c;
  const double k = 2.0 / c.march.store_du;
  CHECK(k == doctest::Approx(std::round(k)));
  CHECK_NOTHROW(validate(c));
}

TEST_CASE("config errors") {
  CHECK(kind_of([] { parse_config("nonsense = 1\n"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { parse_config("dq = abc\n"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { parse_config("lp_n = 3.5\n"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { parse_config("just text\n"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { parse_config("family = torus\n"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { load_config("/nonexistent/run.cfg"); }) == ErrorKind::Io);
  CHECK(kind_of([] { validate(parse_config("scenario = everything\n")); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { validate(parse_config("lp_n = 32\n")); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { validate(parse_config("chart_theta_index = 0\n")); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { run_scenario(parse_config("family = bump\nepsilon = 0.05\nscenario = flat-exactness\n")); }) ==
        ErrorKind::InvalidConfig);
}

TEST_CASE("an oversized step is rejected before any compute") {
  // 0.05 > 0.2 * 0.2^2; the background is never built, so a bogus table path is not read.
  const RunConfig c = parse_config("family = table\nmetric_table = /nonexistent\ndu = 0.05\n");
  CHECK(kind_of([&] { run_scenario(c); }) == ErrorKind::StabilityViolated);
  CHECK(kind_of([&] { convergence_study(c, 3); }) == ErrorKind::StabilityViolated);
}

TEST_CASE("convergence study needs three levels") {
  const RunConfig c;
  CHECK(kind_of([&] { convergence_study(c, 2); }) == ErrorKind::InsufficientLevels);
  CHECK(kind_of([&] { convergence_study(small_flat(), 3, "bogus"); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("report bundle statuses and CSV") {
  ReportBundle b;
  b.at_most("a", 1e-9, 1e-8, "x");
  b.at_least("b", 1.0, 2.0, "needs two");
  b.within("c", 2.0, 1.8, 2.2, "window");
  b.report("d", 0.5);
  b.add({"e", 0.0, "", Status::AtFloor, ""});
  CHECK(b.rows[0].status == Status::Pass);
  CHECK(b.rows[1].status == Status::Fail);
  CHECK(b.rows[2].status == Status::Pass);
  CHECK(b.failed());
  std::istringstream csv(b.summary_csv());
  std::string line;
  std::getline(csv, line);
  CHECK(line == "check,value,tolerance,status,identity");
  std::getline(csv, line);
  CHECK(line == "a,1e-09,<= 1e-08,PASS,x");
  std::getline(csv, line);
  CHECK(line == "b,1,>= 2,FAIL,needs two");
  b.add({"f", 1.0, "", Status::Report, "comma, inside \"quotes\""});
  CHECK(b.summary_csv().find("\"comma, inside \"\"quotes\"\"\"") != std::string::npos);
  CHECK(std::string(status_name(Status::AtFloor)) == "AT_FLOOR");
  CHECK(fmt(0.1) == "0.1");
  CHECK(fmt(1.0 / 3.0) == "0.3333333333");

  const auto dir = std::filesystem::temp_directory_path() / "eikon_bundle_test";
  std::filesystem::remove_all(dir);
  b.tables["t.csv"] = "x\n1\n";
  b.config_echo = "dq = 0.2\n";
  b.write(dir.string());
  CHECK(std::filesystem::exists(dir / "summary.csv"));
  CHECK(std::filesystem::exists(dir / "t.csv"));
  std::ifstream prov(dir / "provenance.txt");
  std::stringstream ps;
  ps << prov.rdbuf();
  CHECK(ps.str().find("version = ") != std::string::npos);
  CHECK(ps.str().find("dq = 0.2") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("flat-exactness scenario passes and is deterministic") {
  const RunConfig c = small_flat();
  const ReportBundle a = run_scenario(c);
  CHECK_FALSE(a.failed());
  CHECK(find_row(a, "flat.u_minus_x_dot_omega") != nullptr);
  CHECK(find_row(a, "flat.chart_identity") != nullptr);
  for (const auto& r : a.rows) CHECK_MESSAGE(r.status == Status::Pass, r.check);
  const ReportBundle b = run_scenario(c);
  CHECK(a.summary_csv() == b.summary_csv());
  CHECK(a.tables == b.tables);
}

TEST_CASE("flat convergence rows sit at the floor") {
  const ReportBundle b = convergence_study(small_flat(), 3, "structure");
  int floors = 0;
  for (const auto& r : b.rows)
    if (r.check.rfind("structure.order.", 0) == 0) {
      CHECK_MESSAGE(r.status == Status::AtFloor, r.check);
      ++floors;
    }
  CHECK(floors == 6);
  CHECK_FALSE(b.failed());
}

TEST_CASE("structure scenario on the bump reports order rows") {
  RunConfig c = parse_config("family = bump\nepsilon = 0.05\nscenario = structure\n");
  const ReportBundle b = run_scenario(c);
  const SummaryRow* g = find_row(b, "structure.order.gauss");
  REQUIRE(g != nullptr);
  CHECK(g->status != Status::AtFloor);
  CHECK(find_row(b, "structure.lapse_definition")->status == Status::Pass);
  CHECK(find_row(b, "structure.order.eikonal")->bound == ">= 1.5");
  CHECK(b.tables.count("structure_levels.csv") == 1);
}

TEST_CASE("standard probes depend only on the angle across the patch") {
  const Surface2D s = Surface2D::flat_torus(17, 4.0);
  const Surface2D t = Surface2D::flat_torus(17);
  const auto ps = standard_probes(s), pt = standard_probes(t);
  REQUIRE(ps.size() == 6);
  for (std::size_t k = 0; k < ps.size(); ++k) {
    CHECK(ps[k].first == pt[k].first);
    for (std::size_t n = 0; n < s.size(); ++n) CHECK(ps[k].second[n] == doctest::Approx(pt[k].second[n]).epsilon(1e-12));
  }
}

TEST_CASE("acceptance bundle has one row per criterion") {
  std::vector<CriterionResult> r(12);
  for (int k = 0; k < 12; ++k) {
    r[k].id = k + 1;
    r[k].name = "c" + std::to_string(k + 1);
    r[k].pass = k != 4;
  }
  const ReportBundle b = acceptance_bundle(r);
  CHECK(b.rows.size() == 12);
  CHECK(b.failed());
  CHECK(format_line(r[0]).rfind("[PASS] 1 c1", 0) == 0);
  CHECK(format_line(r[4]).rfind("[FAIL] 5 c5", 0) == 0);
}
