// eikonlab: command-line front end for the foliation, Littlewood-Paley and phase tools.
#include "eikon/acceptance.hpp"
#include "eikon/error.hpp"
#include "eikon/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace eikon;

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::string scenario;
  int levels = 0;
};

void add_flags(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "key = value configuration file");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--levels", f.levels, "refinement levels");
  app->add_option("--scenario", f.scenario, "scenario or study name");
}

RunConfig load(const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_config(f.config);
  if (!f.out.empty()) c.out = f.out;
  if (f.levels > 0) c.levels = f.levels;
  return c;
}

int finish(const ReportBundle& b, const std::string& out) {
  b.write(out);
  std::cout << b.summary_csv();
  std::cout << "wrote " << out << "/summary.csv (" << b.rows.size() << " rows)\n";
  return b.failed() ? 1 : 0;
}

int run_named(const Flags& f, const std::string& scenario) {
  RunConfig c = load(f);
  c.scenario = scenario;
  return finish(run_scenario(c), c.out);
}

int cmd_march(const Flags& f) {
  RunConfig c = load(f);
  validate(c);
  const Background bg = make_background(c.background);
  const OmegaLattice L = c.lattice();
  const Vec3 w = direction(L.theta(c.chart.it), L.phi(c.chart.ip));
  const FoliationTrace T = march(bg, w, c.march);
  fs::create_directories(c.out);
  write_trace((fs::path(c.out) / "trace.txt").string(), T);
  ReportBundle b;
  b.scenario = "march";
  b.config_echo = echo_config(c);
  b.report("march.steps", T.steps);
  b.report("march.min_lapse", T.min_lapse);
  b.at_most("march.lapse_definition", T.max_definition_residual, c.tol("march.lapse_definition", 1e-12),
            "lapse definition a = 1 + k_NN - tr theta");
  if (!T.probes.empty()) {
    const StructureReport S = structure_residuals(T, bg);
    write_structure_csv((fs::path(c.out) / "structure.csv").string(), {S});
    b.report("march.gauss", S.gauss.max, "Gauss equation");
    b.report("march.codazzi", S.codazzi.max, "Codazzi equation");
    b.report("march.lapse_parabolic", S.lapse_parabolic.max, "parabolic equation for the lapse");
    b.report("march.frame", S.frame.max, "frame equation");
    b.report("march.commutator", S.commutator.max, "scalar commutator");
  }
  return finish(b, c.out);
}

int cmd_atlas(const Flags& f) {
  RunConfig c = load(f);
  validate(c);
  const Background bg = make_background(c.background);
  PhaseAtlas atlas(bg, c.lattice(), c.march, false);
  atlas.build_all();
  const fs::path dir = fs::path(c.out) / "atlas";
  atlas.write(dir.string(), Grid3::cube(c.chart_half_width, c.chart_spacing));
  std::cout << "wrote " << atlas.keys().size() << " directions to " << dir.string() << "\n";
  return 0;
}

int cmd_verify(const Flags& f) {
  RunConfig c = load(f);
  const std::string s = f.scenario.empty() ? c.scenario : f.scenario;
  if (s != "acceptance") return run_named(f, s);
  const auto results = run_acceptance([](const CriterionResult& r) { std::cerr << format_line(r) << "\n"; });
  ReportBundle b = acceptance_bundle(results);
  b.config_echo = "# acceptance criteria run at fixed built-in resolutions\n";
  for (const auto& r : results) b.wall_seconds += r.seconds;
  return finish(b, c.out);
}

int cmd_converge(const Flags& f) {
  const RunConfig c = load(f);
  const std::string study = f.scenario.empty() ? "structure" : f.scenario;
  return finish(convergence_study(c, c.levels, study), c.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"eikonlab: foliations, geometric Littlewood-Paley calculus and plane-wave phases"};
  app.set_version_flag("--version", std::string(version()));
  app.require_subcommand(1);
  Flags f;
  struct Sub {
    const char* name;
    const char* help;
    std::function<int()> run;
  };
  const std::vector<Sub> subs = {
      {"march", "march the foliation of the chart direction", [&] { return cmd_march(f); }},
      {"atlas", "march every lattice direction and write the atlas", [&] { return cmd_atlas(f); }},
      {"lp", "Littlewood-Paley property battery", [&] { return run_named(f, "lp-battery"); }},
      {"charts", "chart determinants, injectivity and omega identities", [&] { return run_named(f, "charts"); }},
      {"taylor", "Taylor comparison with the frozen chart", [&] { return run_named(f, "taylor"); }},
      {"parametrix", "plane-wave parametrix evaluation", [&] { return run_named(f, "parametrix"); }},
      {"verify", "run a scenario (or 'acceptance')", [&] { return cmd_verify(f); }},
      {"converge", "observed orders over refinement levels (structure, omega, charts)", [&] { return cmd_converge(f); }},
  };
  std::vector<CLI::App*> apps;
  for (const auto& s : subs) {
    apps.push_back(app.add_subcommand(s.name, s.help));
    add_flags(apps.back(), f);
  }
  CLI11_PARSE(app, argc, argv);
  try {
    for (std::size_t k = 0; k < subs.size(); ++k)
      if (apps[k]->parsed()) return subs[k].run();
  } catch (const Error& e) {
    std::cerr << "eikonlab: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
