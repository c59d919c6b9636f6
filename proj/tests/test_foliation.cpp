#include <doctest.h>

#include "eikon/error.hpp"
#include "eikon/foliation.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

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

std::vector<double> sphere_cap(const LeafGrid& G, double r) {
  std::vector<double> h(G.size());
  for (int j = 0; j < G.n; ++j)
    for (int i = 0; i < G.n; ++i) h[G.index(i, j)] = std::sqrt(r * r - G.q(i, j).squaredNorm());
  return h;
}

double max_abs_diff(const std::vector<double>& a, double c) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v - c));
  return m;
}

}  // namespace

TEST_CASE("tangent frame is right-handed and orthonormal") {
  for (const Vec3& w : {Vec3(0, 0, 1), direction(0.7, 1.9), direction(2.3, -0.4), direction(M_PI / 2, 0.0)}) {
    Vec3 t1, t2;
    tangent_frame(w, t1, t2);
    CHECK(std::abs(t1.dot(w)) < 1e-15);
    CHECK(std::abs(t2.dot(w)) < 1e-15);
    CHECK(std::abs(t1.dot(t2)) < 1e-15);
    CHECK((t1.cross(t2) - w).norm() < 1e-15);
  }
}

TEST_CASE("planar leaf in flat space") {
  const Background bg = make_background(Family::Flat, 0.0);
  const LeafGrid G = LeafGrid::make(direction(0.9, 2.1), 3.0, 0.1);
  const Leaf L = leaf_geometry(bg, G, 0.3, std::vector<double>(G.size(), 0.3));
  for (std::size_t k = 0; k < G.size(); ++k) {
    CHECK(L.theta[k].norm() == 0.0);
    CHECK(L.K[k] == 0.0);
    CHECK(L.a[k] == 1.0);
    CHECK((L.N[k] - G.omega).norm() < 1e-15);
  }
  CHECK(L.orthonormality_residual(bg) < 1e-15);
}

TEST_CASE("sphere cap in flat space") {
  const Background bg = make_background(Family::Flat, 0.0);
  const double r = 4.0;
  const LeafGrid G = LeafGrid::make(Vec3::UnitZ(), 2.0, 0.025);
  const Leaf L = leaf_geometry(bg, G, 0.0, sphere_cap(G, r));
  // Outward normal: tr theta = +2/r, K = 1/r^2, a = 1 - 2/r.
  double etr = 0, eK = 0, ea = 0, gauss = 0;
  for (int j = 2; j < G.n - 2; ++j)
    for (int i = 2; i < G.n - 2; ++i) {
      const std::size_t k = G.index(i, j);
      etr = std::max(etr, std::abs(L.tr_theta[k] - 2.0 / r));
      eK = std::max(eK, std::abs(L.K[k] - 1.0 / (r * r)));
      ea = std::max(ea, std::abs(L.a[k] - 0.5));
      gauss = std::max(gauss, std::abs(2 * L.K[k] - L.tr_theta[k] * L.tr_theta[k] + L.theta_sq[k]));
      CHECK(std::abs(L.theta_hat[k].cwiseProduct(L.gamma_inv[k]).sum()) < 1e-12);
    }
  // Second-order differencing of the graph at dq = 0.025.
  CHECK(etr < 1e-3);
  CHECK(eK < 1e-3);
  CHECK(ea < 1e-3);
  // Flat ambient: the Gauss equation reduces to 2K - tr^2 + |theta|^2 = 0.
  CHECK(gauss < 1e-3);
  CHECK(L.lapse_definition_residual() < 1e-15);
  CHECK(L.orthonormality_residual(bg) < 1e-14);
}

TEST_CASE("sphere of radius 2 has vanishing lapse") {
  const Background bg = make_background(Family::Flat, 0.0);
  const LeafGrid G = LeafGrid::make(Vec3::UnitZ(), 1.0, 0.02);
  const Leaf L = leaf_geometry(bg, G, 0.0, sphere_cap(G, 2.0));
  CHECK(std::abs(L.a[G.index(G.n / 2, G.n / 2)]) < 1e-3);
  CHECK(kind_of([&] { check_lapse(L, 0.1); }) == ErrorKind::FlowDegenerate);
}

TEST_CASE("advance moves a flat plane at unit speed") {
  const Background bg = make_background(Family::Flat, 0.0);
  MarchParams p;
  const LeafGrid G = LeafGrid::make(direction(0.4, 0.8), p.half_width, p.dq);
  const std::vector<double> h(G.size(), -0.5);
  const std::vector<double> h1 = advance(bg, G, -0.5, h, p.du, p);
  CHECK(max_abs_diff(h1, -0.5 + p.du) < 1e-15);
}

TEST_CASE("advance moves a sphere-cap apex at half speed") {
  const Background bg = make_background(Family::Flat, 0.0);
  MarchParams p;
  p.r_pin = 1e9;  // no collar for a closed-form cap
  const LeafGrid G = LeafGrid::make(Vec3::UnitZ(), 2.0, 0.05);
  const std::vector<double> h = sphere_cap(G, 4.0);
  const double du = 1e-4;
  const std::vector<double> h1 = advance(bg, G, 0.0, h, du, p);
  const std::size_t c = G.index(G.n / 2, G.n / 2);
  // Apex rate (1 - 2/r) / N_omega with N_omega = 1 there.
  CHECK((h1[c] - h[c]) / du == doctest::Approx(0.5).epsilon(1e-3));
}

TEST_CASE("advance in the bump stays within 2 eps du of the flat step") {
  const double eps = 0.05;
  const Background bg = make_background(Family::Bump, eps);
  MarchParams p;
  const LeafGrid G = LeafGrid::make(Vec3::UnitZ(), p.half_width, p.dq);
  const std::vector<double> h(G.size(), 0.0);
  double def = 1.0;
  const std::vector<double> h1 = advance(bg, G, 0.0, h, p.du, p, &def);
  const double dev = max_abs_diff(h1, p.du);
  MESSAGE("one-step deviation constant: " << dev / (eps * p.du));
  CHECK(dev > 0.0);
  CHECK(dev <= 2.0 * eps * p.du);
  CHECK(def < 1e-12);
}

TEST_CASE("march parameter validation") {
  MarchParams p;
  p.du = 0.01;  // > 0.2 * 0.1^2
  CHECK(kind_of([&] { validate(p); }) == ErrorKind::StabilityViolated);
  const Background bg = make_background(Family::Flat, 0.0);
  CHECK(kind_of([&] { march(bg, Vec3::UnitZ(), p); }) == ErrorKind::StabilityViolated);
  p.du = 0.0015;
  CHECK(kind_of([&] { validate(p); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("flat march reproduces the plane-wave phase") {
  const Background bg = make_background(Family::Flat, 0.0);
  MarchParams p;
  p.dq = 0.2;
  p.du = 0.008;
  p.probe_u = {-0.4, 0.0, 0.4};
  const Vec3 w = direction(1.1, 0.6);
  const FoliationTrace T = march(bg, w, p);
  CHECK(T.min_rate_increment > 0.0);
  CHECK(T.max_definition_residual <= 1e-12);
  const PhaseField F = reconstruct(bg, T, Grid3::cube(3.0, 0.25), true);
  double eu = 0, ea = 0;
  for (int k = 0; k < F.grid.nz; ++k)
    for (int j = 0; j < F.grid.ny; ++j)
      for (int i = 0; i < F.grid.nx; ++i) {
        const std::size_t n = F.grid.index(i, j, k);
        const Vec3 x = F.grid.point(i, j, k);
        eu = std::max(eu, std::abs(F.u[n] - x.dot(w)));
        eu = std::max(eu, std::abs(F.u_raw[n] - x.dot(w)));
        ea = std::max(ea, std::abs(F.a[n] - 1.0));
      }
  CHECK(eu <= 1e-10);
  CHECK(ea <= 1e-12);
  const StructureReport s = structure_residuals(T, bg);
  CHECK(s.gauss.max <= 1e-8);
  CHECK(s.codazzi.max <= 1e-8);
  CHECK(s.lapse_parabolic.max <= 1e-8);
  CHECK(s.frame.max <= 1e-8);
  CHECK(s.commutator.max <= 1e-8);
}

TEST_CASE("glued phase equals x.omega outside radius 2") {
  const Background bg = make_background(Family::Bump, 0.05);
  MarchParams p;
  p.dq = 0.2;
  p.du = 0.008;
  const FoliationTrace T = march(bg, Vec3::UnitZ(), p);
  CHECK(T.min_rate_increment > 0.0);
  CHECK(T.max_definition_residual <= 1e-12);
  const PhaseField F = reconstruct(bg, T, Grid3::cube(3.0, 0.2), false);
  double dev_out = 0.0, dev_in = 0.0;
  for (int k = 0; k < F.grid.nz; ++k)
    for (int j = 0; j < F.grid.ny; ++j)
      for (int i = 0; i < F.grid.nx; ++i) {
        const Vec3 x = F.grid.point(i, j, k);
        const std::size_t n = F.grid.index(i, j, k);
        if (x.norm() >= 2.0)
          dev_out = std::max(dev_out, std::abs(F.u[n] - x.z()));
        else
          dev_in = std::max(dev_in, std::abs(F.u[n] - x.z()));
      }
  CHECK(dev_out == 0.0);
  CHECK(dev_in > 0.0);
  CHECK(glue_cutoff(1.0) == 1.0);
  CHECK(glue_cutoff(2.0) == 0.0);
  CHECK(glue_cutoff(1.5) == doctest::Approx(0.5));
}

TEST_CASE("missing probe leaves are reported") {
  const Background bg = make_background(Family::Flat, 0.0);
  MarchParams p;
  p.dq = 0.2;
  p.du = 0.008;
  p.probe_u.clear();
  const FoliationTrace T = march(bg, Vec3::UnitZ(), p);
  CHECK(kind_of([&] { structure_residuals(T, bg); }) == ErrorKind::InsufficientLeaves);
}

TEST_CASE("Gauss residual of a plane leaf converges at second order") {
  const Background bg = make_background(Family::Bump, 0.05);
  double prev = 0.0;
  for (double dq : {0.1, 0.05, 0.025}) {
    const LeafGrid G = LeafGrid::make(Vec3::UnitZ(), 3.0, dq);
    const Leaf L = leaf_geometry(bg, G, 0.1, std::vector<double>(G.size(), 0.1));
    double m = 0.0;
    for (std::size_t k = 0; k < G.size(); ++k) {
      const double RNN = L.N[k].dot(L.ricci[k] * L.N[k]);
      m = std::max(m, std::abs(2 * L.K[k] - L.tr_theta[k] * L.tr_theta[k] + L.theta_sq[k] - (L.scalar[k] - 2 * RNN)));
    }
    if (prev > 0.0) {
      const double order = std::log2(prev / m);
      MESSAGE("Gauss order at dq = " << dq << ": " << order);
      CHECK(order >= 1.8);
      CHECK(order <= 2.2);
    }
    prev = m;
    CHECK(L.orthonormality_residual(bg) < 1e-12);
  }
}

TEST_CASE("coarea and first-variation formulas in flat space") {
  const Background bg = make_background(Family::Flat, 0.0);
  const ProbeScalar f = ProbeScalar::gaussian(Vec3(0.1, -0.2, 0.15), 0.3);
  double prev = 0.0;
  for (double store : {0.032, 0.016, 0.008}) {
    MarchParams p;
    p.dq = 0.2;
    p.du = 0.008;
    p.store_du = store;
    const FoliationTrace T = march(bg, Vec3::UnitZ(), p);
    const CalculusReport c = calculus_checks(bg, T, f, 0.1);
    CHECK(c.coarea_mismatch <= 1e-6);
    if (prev > 0.0) {
      const double order = std::log2(prev / c.du_mismatch);
      MESSAGE("first-variation order: " << order);
      CHECK(order >= 1.8);
      CHECK(order <= 2.2);
    }
    prev = c.du_mismatch;
  }
}

TEST_CASE("coarea formula in the bump background") {
  const Background bg = make_background(Family::Bump, 0.05);
  MarchParams p;
  p.dq = 0.1;
  p.du = 0.002;
  const FoliationTrace T = march(bg, Vec3::UnitZ(), p);
  const CalculusReport c = calculus_checks(bg, T, ProbeScalar::gaussian(Vec3::Zero(), 0.3), 0.1);
  MESSAGE("bump coarea mismatch " << c.coarea_mismatch);
  CHECK(c.coarea_mismatch <= 1e-3);
}

TEST_CASE("trace serialisation writes one block per stored leaf") {
  const Background bg = make_background(Family::Flat, 0.0);
  MarchParams p;
  p.dq = 0.2;
  p.du = 0.008;
  p.store_du = 0.8;
  const FoliationTrace T = march(bg, Vec3::UnitZ(), p);
  const auto path = std::filesystem::temp_directory_path() / "eikon_trace.txt";
  write_trace(path.string(), T);
  std::ifstream in(path);
  std::string line;
  int blocks = 0;
  while (std::getline(in, line))
    if (line.rfind("LEAF u=", 0) == 0) ++blocks;
  CHECK(blocks == static_cast<int>(T.u_stored.size()));
  CHECK(T.u_stored.front() == -2.0);
  CHECK(T.u_stored.back() == doctest::Approx(2.0).epsilon(1e-14));
  std::filesystem::remove(path);
}
