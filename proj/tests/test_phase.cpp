#include <doctest.h>

#include "eikon/error.hpp"
#include "eikon/phase.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

using namespace eikon;

namespace {

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an eikon::Error");
  return ErrorKind::Io;
}

MarchParams coarse_march() {
  MarchParams p;
  p.dq = 0.2;
  p.du = 0.008;
  p.store_du = 0.04;
  p.probe_u = {};
  return p;
}

MarchParams level_march(int level) {
  MarchParams p = coarse_march();
  p.dq = 0.2 / (1 << level);
  p.du = 0.2 * p.dq * p.dq;
  return p;
}

// Unit direction from spherical angles, written out independently of the library.
Vec3 sph(double th, double ph) { return Vec3(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th)); }

const std::vector<Vec3>& sample_points() {
  static const std::vector<Vec3> pts = {Vec3(0, 0, 0),      Vec3(0.4, -0.3, 0.2), Vec3(-0.7, 0.1, 0.5),
                                        Vec3(1.2, 0.8, -0.6), Vec3(-1.5, -0.2, 1.1), Vec3(2.1, 0.3, 0.4),
                                        Vec3(0.1, 2.5, -1.0)};
  return pts;
}

}  // namespace

TEST_CASE("lattice keys, pole canonicalisation and missing directions") {
  const Background flat = make_background(Family::Flat, 0.0);
  const OmegaLattice L = OmegaLattice::from_grid(9, 17);
  CHECK(L.n_theta() == 9);
  CHECK(L.phi_period() == 16);
  CHECK(stencil({3, 2}, 1).size() == 5);
  CHECK(stencil({3, 2}, 2).size() == 9);
  CHECK(stencil({3, 2}, 3).size() == 13);

  PhaseAtlas atlas(flat, L, coarse_march());
  atlas.build({{0, 0}, {0, 5}, {3, 2}, {3, 18}});
  CHECK(atlas.keys().size() == 2);
  CHECK(atlas.has({0, 11}));
  CHECK(atlas.has({3, -14}));
  CHECK((atlas.direction({8, 3}) + Vec3::UnitZ()).norm() < 1e-15);
  CHECK((atlas.direction({3, 2}) - sph(3 * M_PI / 8, M_PI / 4)).norm() < 1e-15);

  CHECK(kind_of([&] { atlas.u({0, 0, 0}, {4, 4}); }) == ErrorKind::MissingDirection);
  CHECK(kind_of([&] { atlas.build({{-1, 0}}); }) == ErrorKind::MissingDirection);
  CHECK(kind_of([&] { phase_jet(atlas, Vec3::Zero(), {0, 0}, 1); }) == ErrorKind::MissingDirection);
  atlas.build(stencil({1, 0}, 2));
  CHECK_NOTHROW(phase_jet(atlas, Vec3::Zero(), {1, 0}, 2));
  CHECK(kind_of([&] { phase_jet(atlas, Vec3::Zero(), {1, 0}, 3); }) == ErrorKind::MissingDirection);
  CHECK(kind_of([] { OmegaLattice::from_grid(2, 17); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("march errors carry the direction") {
  const Background bump = make_background(Family::Bump, 0.05);
  MarchParams p = coarse_march();
  p.a_min = 0.999;
  PhaseAtlas atlas(bump, OmegaLattice::from_grid(9, 17), p);
  try {
    atlas.build({{3, 2}});
    FAIL("expected FlowDegenerate");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::FlowDegenerate);
    CHECK(std::string(e.what()).find("[direction (3, 2)]") != std::string::npos);
  }
}

TEST_CASE("flat omega-derivatives of x.omega") {
  const Background flat = make_background(Family::Flat, 0.0);
  PhaseAtlas atlas(flat, OmegaLattice::from_grid(9, 17), coarse_march());
  for (const DirectionKey c : {DirectionKey{3, 2}, DirectionKey{1, 7}, DirectionKey{6, 13}}) {
    atlas.build(stencil(c, 2));
    const double th = c.it * M_PI / 8, ph = c.ip * M_PI / 8;
    const Vec3 w = sph(th, ph);
    for (const Vec3& x : sample_points()) {
      const OmegaJet J = phase_jet(atlas, x, c, 2);
      CHECK(std::abs(J.value - x.dot(w)) <= 1e-8);
      CHECK((J.tangent() - (x - x.dot(w) * w)).norm() <= 1e-8);
      CHECK((J.d2 + x.dot(w) * Mat2::Identity()).cwiseAbs().maxCoeff() <= 1e-8);
      CHECK(std::abs(J.tangent().dot(w)) <= 1e-14);
    }
  }
}

TEST_CASE("third omega-derivative along coordinate lines") {
  // d^3/dtheta^3 (x.omega) = -x.e_theta and d^3/dphi^3 (x.omega) = -sin(theta) x.e_phi.
  const Background flat = make_background(Family::Flat, 0.0);
  PhaseAtlas atlas(flat, OmegaLattice::from_grid(65, 129), coarse_march());
  const DirectionKey c{20, 30};
  atlas.build(stencil(c, 3));
  const double th = 20 * M_PI / 64, ph = 30 * M_PI / 64;
  const Vec3 et(std::cos(th) * std::cos(ph), std::cos(th) * std::sin(ph), -std::sin(th));
  const Vec3 ep(-std::sin(ph), std::cos(ph), 0.0);
  for (const Vec3& x : sample_points()) {
    const OmegaJet J = phase_jet(atlas, x, c, 3);
    CHECK(std::abs(J.d3.x() + x.dot(et)) <= 1e-3 * (1 + x.norm()));
    CHECK(std::abs(J.d3.y() + x.dot(ep) / (std::sin(th) * std::sin(th))) <= 1e-3 * (1 + x.norm()));
  }
}

TEST_CASE("bump phase is exactly linear outside the glue radius") {
  const Background bump = make_background(Family::Bump, 0.05);
  PhaseAtlas atlas(bump, OmegaLattice::from_grid(9, 17), coarse_march());
  const DirectionKey c{3, 2};
  atlas.build(stencil(c, 2));
  const Vec3 w = atlas.direction(c);
  for (const Vec3& x : {Vec3(2.0, 0, 0), Vec3(-1.3, 1.3, 1.3), Vec3(0.5, -2.2, 1.0), Vec3(0, 0, -2.9)}) {
    const OmegaJet J = phase_jet(atlas, x, c, 2);
    CHECK(std::abs(J.value - x.dot(w)) <= 1e-12);
    CHECK((J.tangent() - (x - x.dot(w) * w)).norm() <= 1e-12);
  }
  // Inside, the phase is perturbed but stays tangent.
  const OmegaJet J = phase_jet(atlas, Vec3(0.2, -0.1, 0.3), c, 2);
  CHECK(std::abs(J.value - Vec3(0.2, -0.1, 0.3).dot(w)) > 1e-5);
  CHECK(std::abs(J.tangent().dot(w)) <= 1e-14);
}

TEST_CASE("flat omega identities hold to round-off") {
  const Background flat = make_background(Family::Flat, 0.0);
  PhaseAtlas atlas(flat, OmegaLattice::from_grid(9, 17), coarse_march());
  const auto rep = omega_identity_residuals(atlas, {3, 2}, ball_points(0.9, 0.3), 0.05);
  CHECK(rep.samples == ball_points(0.9, 0.3).size());
  CHECK(rep.leaf_gradient.max <= 1e-8);
  CHECK(rep.normal_derivative.max <= 1e-8);
  CHECK(rep.second_derivative.max <= 1e-6);
  CHECK(rep.tangency.max <= 1e-14);
  CHECK(std::isfinite(rep.d3_bound));
}

TEST_CASE("bump omega identities converge under joint refinement") {
  const Background bump = make_background(Family::Bump, 0.05);
  std::vector<double> t4, n4;
  for (int level = 0; level < 2; ++level) {
    const int m = 1 << level;
    PhaseAtlas atlas(bump, OmegaLattice::from_grid(8 * m + 1, 16 * m + 1), level_march(level));
    const auto rep = omega_identity_residuals(atlas, {3 * m, 2 * m}, ball_points(0.9, 0.3), 0.1 / m, false);
    t4.push_back(rep.leaf_gradient.max);
    n4.push_back(rep.normal_derivative.max);
    CHECK(rep.d3_bound == 0.0);
  }
  MESSAGE("leaf gradient " << t4[0] << " -> " << t4[1] << ", normal " << n4[0] << " -> " << n4[1]);
  CHECK(t4[0] < 1e-2);
  CHECK(std::log2(t4[0] / t4[1]) >= 1.6);
  CHECK(std::log2(n4[0] / n4[1]) >= 1.6);
}

TEST_CASE("flat charts are the identity") {
  const Background flat = make_background(Family::Flat, 0.0);
  PhaseAtlas atlas(flat, OmegaLattice::from_grid(9, 17), coarse_march());
  const ChartReport cu = chart_phi_u(atlas, {3, 2}, 0.0);
  CHECK(cu.samples == atlas.trace({3, 2}).grid.size());
  CHECK(std::abs(cu.det_min - 1.0) <= 1e-8);
  CHECK(std::abs(cu.det_max - 1.0) <= 1e-8);
  CHECK(cu.orthogonality <= 1e-8);
  CHECK(cu.collisions == 0);

  const ChartReport c = chart_phi(atlas, {3, 2}, Grid3::cube(2.4, 0.2));
  CHECK(std::abs(c.det_min - 1.0) <= 1e-8);
  CHECK(std::abs(c.det_max - 1.0) <= 1e-8);
  CHECK(c.collisions == 0);
  CHECK(c.det_identity_samples > 100);
  CHECK(c.det_identity <= 1e-8);
  // Phi(x) = x itself.
  const Vec3 x(0.3, -1.1, 0.7);
  const OmegaJet J = phase_jet(atlas, x, {3, 2}, 1);
  CHECK((J.value * J.omega + J.tangent() - x).norm() <= 1e-8);

  CHECK(kind_of([&] { chart_phi_u(atlas, {3, 2}, 0.01); }) == ErrorKind::InsufficientLeaves);
}

TEST_CASE("bump charts stay non-degenerate and the determinant identity refines") {
  const Background bump = make_background(Family::Bump, 0.05);
  std::vector<double> gl;
  for (int level = 0; level < 2; ++level) {
    const int m = 1 << level;
    PhaseAtlas atlas(bump, OmegaLattice::from_grid(8 * m + 1, 16 * m + 1), level_march(level));
    const DirectionKey c{3 * m, 2 * m};
    const ChartReport cu = chart_phi_u(atlas, c, 0.0);
    CHECK(cu.det_min > 0.5);
    CHECK(cu.det_max < 1.5);
    CHECK(cu.collisions == 0);
    CHECK(cu.det_deviation <= 0.05);
    const ChartReport r = chart_phi(atlas, c, Grid3::cube(2.4, 0.2 / m));
    CHECK(r.det_min > 0.5);
    CHECK(r.det_max < 1.5);
    CHECK(r.collisions == 0);
    gl.push_back(r.det_identity);
  }
  MESSAGE("determinant identity residual " << gl[0] << " -> " << gl[1]);
  CHECK(gl[0] < 2e-2);
  CHECK(gl[1] < gl[0] / 2.5);
}

TEST_CASE("Taylor comparison") {
  const std::vector<Vec3> pts = ball_points(1.8, 0.3);
  {
    const Background flat = make_background(Family::Flat, 0.0);
    PhaseAtlas atlas(flat, OmegaLattice::from_grid(129, 17), coarse_march());
    const TaylorReport r = taylor_compare(atlas, {40, 2}, {2, 4, 8}, pts);
    for (std::size_t k = 0; k < r.d0.size(); ++k) {
      CHECK(r.d0[k] <= 1e-8);
      CHECK(r.d1[k] <= 1e-8);
      CHECK(r.d2[k] <= 1e-8);
    }
    CHECK(kind_of([&] { taylor_compare(atlas, {40, 2}, {2, 4}, pts); }) == ErrorKind::InsufficientSeparations);
    CHECK(kind_of([&] { taylor_compare(atlas, {40, 2}, {2, 3, 4}, pts); }) == ErrorKind::InsufficientSeparations);
  }
  std::vector<double> d0;
  for (double eps : {0.025, 0.05}) {
    const Background bump = make_background(Family::Bump, eps);
    PhaseAtlas atlas(bump, OmegaLattice::from_grid(129, 17), coarse_march());
    const TaylorReport r = taylor_compare(atlas, {40, 2}, {2, 4, 8, 16}, pts);
    CHECK(r.separation.size() == 4);
    CHECK(std::abs(r.separation[0] - 2.0 * std::sin(M_PI / 128)) < 1e-12);
    CHECK(r.slope0 >= 1.8);
    CHECK(r.slope0 <= 2.2);
    d0.push_back(r.d0.back());
  }
  CHECK(std::abs(d0[1] / d0[0] - 2.0) <= 0.2);
}

TEST_CASE("log-log fit recovers a power law") {
  const std::vector<double> x{0.1, 0.2, 0.4, 0.8};
  std::vector<double> y;
  for (double v : x) y.push_back(3.0 * std::pow(v, 1.7));
  const auto [s, b] = loglog_fit(x, y);
  CHECK(std::abs(s - 1.7) < 1e-12);
  CHECK(std::abs(std::exp(b) - 3.0) < 1e-12);
}

TEST_CASE("Gauss-Legendre rule is exact to degree 2n - 1") {
  std::vector<double> x, w;
  gauss_legendre(7, x, w);
  for (int d = 0; d <= 13; ++d) {
    double q = 0.0;
    for (int i = 0; i < 7; ++i) q += w[i] * std::pow(x[i], d);
    const double exact = d % 2 ? 0.0 : 2.0 / (d + 1);
    CHECK(std::abs(q - exact) < 1e-14);
  }
}

TEST_CASE("flat parametrix reproduces the Gaussian transform") {
  std::vector<Vec3> pts{Vec3::Zero()};
  for (int k = 1; k < 20; ++k) {
    const double r = 0.13 * k, th = 0.7 * k, ph = 2.3 * k;
    pts.push_back(r * sph(std::fmod(th, M_PI), ph));
  }
  const auto res = evaluate_parametrix(flat_phase(), Symbol::gaussian(), pts);
  CHECK(res.values.size() == 20);
  CHECK(std::abs(res.values[0].real() - 15.7496) < 1e-4);
  for (std::size_t p = 0; p < pts.size(); ++p) {
    const double oracle = std::pow(2.0 * M_PI, 1.5) * std::exp(-0.5 * pts[p].squaredNorm());
    CHECK(std::abs(res.values[p] - oracle) <= 1e-3 * oracle);
  }
  CHECK(res.doubling_change <= 1e-3);

  const auto zero = evaluate_parametrix(flat_phase(), Symbol::zero(), pts);
  for (const auto& v : zero.values) CHECK(std::abs(v) == 0.0);

  ParametrixSpec coarse;
  coarse.n_cos = 4;
  coarse.n_lambda = 4;
  CHECK(kind_of([&] { evaluate_parametrix(flat_phase(), Symbol::gaussian(), pts, coarse); }) ==
        ErrorKind::QuadratureUnderResolved);
}

TEST_CASE("parametrix is linear and conjugate-symmetric") {
  const PhaseFn phase = [](const Vec3& x, const Vec3& w) { return x.dot(w) + 0.1 * std::sin(x.x() + w.z()); };
  const PhaseFn minus = [&](const Vec3& x, const Vec3& w) { return -phase(x, w); };
  const Symbol f{[](const Vec3& xi) { return std::exp(-0.5 * xi.squaredNorm()) * std::complex<double>(1.0, 0.3 * xi.z()); },
                 Symbol::gaussian().lambda_max + 0.5};
  const Symbol fbar{[&](const Vec3& xi) { return std::conj(f.f(xi)); }, f.lambda_max};
  const Symbol g = Symbol::gaussian_angular(0.5);
  const Symbol comb{[&](const Vec3& xi) { return f.f(xi) + 2.0 * g.f(xi); }, f.lambda_max};
  std::vector<Vec3> pts{Vec3(0.3, 0.2, -0.4), Vec3(-1.0, 0.5, 0.8)};
  ParametrixSpec spec;
  spec.check_doubling = false;
  const auto Sf = evaluate_parametrix(phase, f, pts, spec);
  const auto Sg = evaluate_parametrix(phase, {g.f, f.lambda_max}, pts, spec);
  const auto Sc = evaluate_parametrix(phase, comb, pts, spec);
  const auto Sb = evaluate_parametrix(minus, fbar, pts, spec);
  for (std::size_t p = 0; p < pts.size(); ++p) {
    CHECK(std::abs(Sc.values[p] - (Sf.values[p] + 2.0 * Sg.values[p])) <= 1e-12 * std::abs(Sc.values[p]));
    CHECK(std::abs(Sb.values[p] - std::conj(Sf.values[p])) <= 1e-12 * std::abs(Sf.values[p]));
  }
}

TEST_CASE("atlas phase interpolation and directory output") {
  const Background flat = make_background(Family::Flat, 0.0);
  PhaseAtlas atlas(flat, OmegaLattice::from_grid(9, 17), coarse_march());
  atlas.build_all();
  CHECK(atlas.keys().size() == 7 * 16 + 2);
  const PhaseFn p = atlas_phase(atlas);
  const Vec3 x(0.4, -0.7, 1.2);
  for (const Vec3& w : {sph(0.3, 1.0), sph(1.9, 4.0), Vec3(Vec3::UnitZ())}) CHECK(std::abs(p(x, w) - x.dot(w)) < 1e-12);

  PhaseAtlas small(flat, OmegaLattice::from_grid(9, 17), coarse_march());
  small.build({{3, 2}, {0, 0}});
  const auto dir = std::filesystem::temp_directory_path() / "eikon_atlas_test";
  std::filesystem::remove_all(dir);
  small.write(dir.string(), Grid3::cube(1.0, 0.5));
  CHECK(std::filesystem::exists(dir / "u_3_2.grid"));
  CHECK(std::filesystem::exists(dir / "u_0_0.grid"));
  std::ifstream man(dir / "manifest.txt");
  int lines = 0;
  for (std::string line; std::getline(man, line);)
    if (!line.empty() && line[0] != '#') ++lines;
  CHECK(lines == 2);
  std::filesystem::remove_all(dir);
}
