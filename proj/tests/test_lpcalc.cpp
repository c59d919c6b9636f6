#include <doctest.h>

#include "eikon/error.hpp"
#include "eikon/lpcalc.hpp"

#include <cmath>
#include <numeric>

using namespace eikon;

namespace {

using Vec = std::vector<double>;

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

double max_abs(const Vec& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

double max_diff(const Vec& a, const Vec& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

Vec scaled(const Vec& a, double c) {
  Vec out(a);
  for (double& v : out) v *= c;
  return out;
}

// Shared frames; the dense factorisations dominate the run time.
const Surface2D& torus() {
  static const Surface2D s = Surface2D::flat_torus(33);
  return s;
}
const HeatFrame& torus_frame() {
  static const HeatFrame f(torus());
  return f;
}
const Surface2D& bumpy() {
  static const Surface2D s = Surface2D::perturbed_torus(33, 0.3);
  return s;
}
const HeatFrame& bumpy_frame() {
  static const HeatFrame f(bumpy());
  return f;
}

std::vector<std::pair<std::string, Vec>> probes(const Surface2D& s) {
  return {
      {"cos3", s.sample([](const Vec2& q) { return std::cos(3 * q.x()); })},
      {"mixed", s.sample([](const Vec2& q) { return std::cos(q.x() + 2 * q.y()) + 0.3 * std::sin(5 * q.y()); })},
      {"low", s.sample([](const Vec2& q) { return 1.0 + std::sin(q.x()); })},
      {"high", s.sample([](const Vec2& q) { return std::sin(11 * q.x()) * std::cos(9 * q.y()); })},
      {"bump", s.sample([](const Vec2& q) { return std::exp(2.0 * std::cos(q.x()) * std::cos(q.y())); })},
      {"ridge", s.sample([](const Vec2& q) { return std::exp(-4.0 * std::pow(std::sin(0.5 * (q.x() - q.y())), 2)); })},
  };
}

// Independent maximiser of s (e^{-s/4} - e^{-s}): bisection on the derivative.
double band_oracle() {
  const auto d = [](double s) { return std::exp(-s / 4) * (1 - s / 4) - std::exp(-s) * (1 - s); };
  double a = 1.0, b = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double m = 0.5 * (a + b);
    (d(a) * d(m) <= 0 ? b : a) = m;
  }
  const double s = 0.5 * (a + b);
  return s * (std::exp(-s / 4) - std::exp(-s));
}

}  // namespace

TEST_CASE("spectral derivative is exact on resolved modes") {
  const Surface2D& s = torus();
  const Vec f = s.sample([](const Vec2& q) { return std::cos(3 * q.x()) * std::sin(2 * q.y()); });
  const Vec fx = s.sample([](const Vec2& q) { return -3 * std::sin(3 * q.x()) * std::sin(2 * q.y()); });
  const Vec fy = s.sample([](const Vec2& q) { return 2 * std::cos(3 * q.x()) * std::cos(2 * q.y()); });
  CHECK(max_diff(s.derivative(f, 0), fx) < 1e-12);
  CHECK(max_diff(s.derivative(f, 1), fy) < 1e-12);
  CHECK(kind_of([] { Surface2D::flat_torus(32); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("Gauss curvature of a conformal torus metric") {
  // gamma = e^{2p} I has K = -e^{-2p} Lap p.
  const auto p = [](const Vec2& q) { return 0.2 * std::sin(q.x()) * std::cos(2 * q.y()); };
  const auto lap_p = [](const Vec2& q) { return -0.2 * 5.0 * std::sin(q.x()) * std::cos(2 * q.y()); };
  double prev = 0.0;
  for (int n : {33, 65, 129}) {
    const Surface2D c = Surface2D::from_metric(n, 2 * M_PI, Differencing::Central,
                                               [&](const Vec2& q) { return Mat2(std::exp(2 * p(q)) * Mat2::Identity()); });
    double e = 0.0;
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const Vec2 q = c.point(i, j);
        e = std::max(e, std::abs(c.K[c.index(i, j)] + std::exp(-2 * p(q)) * lap_p(q)));
      }
    if (prev > 0.0) CHECK(std::log2(prev / e) == doctest::Approx(2.0).epsilon(0.1));
    prev = e;
  }
  const Surface2D sp = Surface2D::from_metric(33, 2 * M_PI, Differencing::Spectral,
                                              [&](const Vec2& q) { return Mat2(std::exp(2 * p(q)) * Mat2::Identity()); });
  double e = 0.0;
  for (int j = 0; j < 33; ++j)
    for (int i = 0; i < 33; ++i) {
      const Vec2 q = sp.point(i, j);
      e = std::max(e, std::abs(sp.K[sp.index(i, j)] + std::exp(-2 * p(q)) * lap_p(q)));
    }
  CHECK(e < 1e-8);
}

TEST_CASE("heat frame invariants") {
  for (const HeatFrame* F : {&torus_frame(), &bumpy_frame()}) {
    const Surface2D& s = F->surface();
    CHECK(F->spectral());
    CHECK(F->self_adjointness_residual() <= 1e-10);
    CHECK(F->eigen_residual() <= 1e-8);
    CHECK(F->eigenvalues()[0] == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(F->eigenvalues()[1] > 1e-3);
    const Eigen::VectorXd phi0 = F->eigenvectors().col(0);
    CHECK((phi0.array() - phi0[0]).abs().maxCoeff() < 1e-8);
    CHECK(std::abs(phi0[0]) * std::sqrt(s.area()) == doctest::Approx(1.0).epsilon(1e-10));
  }
  // Flat torus: eigenvalues are the integer norms |k|^2 up to 2 * 16^2.
  CHECK(torus_frame().lambda_max() == doctest::Approx(512.0).epsilon(1e-10));
}

TEST_CASE("heat flow of a Fourier mode") {
  const Surface2D& s = torus();
  const Vec f = s.sample([](const Vec2& q) { return std::cos(3 * q.x()); });
  const Vec U = heat_evolve(torus_frame(), f, 0.1);
  CHECK(max_diff(U, scaled(f, std::exp(-0.9))) <= 1e-8 * std::exp(-0.9));
  CHECK(heat_evolve(torus_frame(), f, 0.0) == f);
}

TEST_CASE("heat flow conserves mass, obeys the semigroup law and dissipates energy") {
  const HeatFrame& F = bumpy_frame();
  const Surface2D& s = F.surface();
  for (const auto& [name, f] : probes(s)) {
    const double l1 = s.norm(f, 1.0);
    CHECK(std::abs(s.integrate(heat_evolve(F, f, 0.37)) - s.integrate(f)) <= 1e-10 * l1);
    const Vec a = heat_evolve(F, heat_evolve(F, f, 0.2), 0.3);
    const Vec b = heat_evolve(F, f, 0.5);
    CHECK(max_diff(a, b) <= 1e-10 * max_abs(f));
    double prev = s.norm(f);
    for (double tau : {0.01, 0.05, 0.2, 1.0}) {
      const double now = s.norm(heat_evolve(F, f, tau));
      CHECK(now <= prev + 1e-12);
      prev = now;
    }
    // int_0^tau |grad U|^2 = sum c_i^2 (1 - e^{-2 lambda tau}) / 2 <= |f|^2 / 2.
    const double tau = 0.3;
    const Vec integrand = F.apply_symbol(f, [tau](double l) {
      return l > 0 ? std::sqrt((1 - std::exp(-2 * l * tau)) / 2) : 0.0;
    });
    CHECK(s.norm(integrand) * s.norm(integrand) <= 0.5 * s.norm(f) * s.norm(f) + 1e-12);
  }
}

TEST_CASE("implicit Euler stepper matches the discrete symbol") {
  // Central differences: cos(3x) has eigenvalue sin^2(3h)/h^2 of -Delta_h.
  const Surface2D s = Surface2D::flat_torus(75, 2 * M_PI, Differencing::Central);
  const HeatFrame F(s, 100);
  CHECK_FALSE(F.spectral());
  CHECK(F.self_adjointness_residual() <= 1e-10);
  const double h = s.spacing();
  const double mu = std::pow(std::sin(3 * h) / h, 2);
  const Vec f = s.sample([](const Vec2& q) { return std::cos(3 * q.x()); });
  const double tau = 0.1;
  const Vec U = heat_evolve(F, f, tau);
  CHECK(max_diff(U, scaled(f, std::pow(1 + mu * tau / 16, -16))) < 1e-12);
  CHECK(std::abs(s.integrate(heat_evolve(F, f, 0.5)) - s.integrate(f)) <= 1e-10 * s.norm(f, 1.0));
  CHECK(kind_of([&] { F.apply_symbol(f, [](double) { return 1.0; }); }) == ErrorKind::SpectralUnavailable);
  // Telescoping holds on the stepper path as well.
  const LPSettings st = resolve({}, F);
  Vec sum = lp_low(F, st, f);
  for (int j = 0; j <= st.J; ++j) {
    const Vec P = lp_project(F, st, f, j);
    for (std::size_t k = 0; k < f.size(); ++k) sum[k] += P[k];
  }
  CHECK(s.norm(Vec([&] {
          Vec d(f.size());
          for (std::size_t k = 0; k < f.size(); ++k) d[k] = sum[k] - f[k];
          return d;
        }())) <= 1e-6 * s.norm(f));
}

TEST_CASE("LP projections of a Fourier mode and of constants") {
  const HeatFrame& F = torus_frame();
  const Surface2D& s = torus();
  const LPSettings st = resolve({}, F);
  CHECK(st.J == 17);
  CHECK(F.lambda_max() * std::pow(4.0, -(st.J + 1)) <= 1e-8);
  const Vec f = s.sample([](const Vec2& q) { return std::cos(3 * q.x()); });
  for (int j = 0; j <= st.J; ++j) {
    const double sym = std::exp(-9.0 * std::pow(2.0, -2 * (j + 1))) - std::exp(-9.0 * std::pow(2.0, -2 * j));
    CHECK(max_diff(lp_project(F, st, f, j), scaled(f, sym)) < 1e-12);
  }
  const Vec c(s.size(), 2.5);
  for (int j = 0; j <= st.J; ++j) CHECK(max_abs(lp_project(F, st, c, j)) < 1e-12);
  CHECK(max_diff(lp_low(F, st, c), c) < 1e-12);
  CHECK(kind_of([&] { lp_project(F, st, f, st.J + 1); }) == ErrorKind::LevelOutOfRange);
  CHECK(kind_of([&] { lp_project(F, st, f, -1); }) == ErrorKind::LevelOutOfRange);
  LPSettings low = st;
  low.J = 3;
  CHECK(kind_of([&] { resolve(low, F); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("LP projections are self-adjoint") {
  const HeatFrame& F = bumpy_frame();
  const Surface2D& s = F.surface();
  const LPSettings st = resolve({}, F);
  const auto P = probes(s);
  for (int j : {0, 2, 5}) {
    const double a = s.inner(lp_project(F, st, P[1].second, j), P[4].second);
    const double b = s.inner(P[1].second, lp_project(F, st, P[4].second, j));
    CHECK(std::abs(a - b) <= 1e-10 * (std::abs(a) + std::abs(b) + 1e-300) + 1e-14);
  }
}

TEST_CASE("partition of identity on the torus and on a perturbed torus") {
  for (const HeatFrame* F : {&torus_frame(), &bumpy_frame()}) {
    const LPBattery b = lp_property_battery(*F, {}, probes(F->surface()));
    CHECK(b.partition <= 1e-6);
  }
}

TEST_CASE("finite band, Bessel and Bernstein constants") {
  const double c_star = band_oracle();
  MESSAGE("band constant c* = " << c_star);
  CHECK(finite_band_bound() == doctest::Approx(c_star).epsilon(1e-10));
  CHECK(c_star > 1.4);
  CHECK(c_star < 1.42);

  const HeatFrame& F = torus_frame();
  const LPBattery b = lp_property_battery(F, {}, probes(torus()));
  CHECK(b.c_band <= c_star + 1e-6);
  // Symbol bound first, then the inequality it implies.
  CHECK(b.bessel_symbol <= 1.0);
  CHECK(b.c_bessel <= 1.0 + 1e-8);
  for (double c : b.c_bern) CHECK(std::isfinite(c));
  CHECK(std::isfinite(b.c_lp_1));
  CHECK(std::isfinite(b.c_lp_inf));
  for (const auto& row : b.rows) CHECK_MESSAGE(row.pass, row.property << " " << row.probe);
}

TEST_CASE("band constant of an eigenfunction sits at the symbol argmax") {
  const HeatFrame& F = torus_frame();
  const Surface2D& s = torus();
  const LPSettings st = resolve({}, F);
  for (int k : {1, 2, 5, 11}) {
    const Vec f = s.sample([k](const Vec2& q) { return std::cos(k * q.x()); });
    const double lam = k * k;
    int arg = 0;
    double best = -1.0;
    for (int j = 0; j <= st.J; ++j) {
      const double x = lam / std::pow(4.0, j);
      const double v = x * (std::exp(-x / 4) - std::exp(-x));
      if (v > best) best = v, arg = j;
    }
    const LPBattery b = lp_property_battery(F, st, {{"mode", f}});
    CHECK(b.band_argmax[0] == arg);
    CHECK(b.c_band == doctest::Approx(best).epsilon(1e-9));
  }
}

TEST_CASE("fractional powers") {
  const HeatFrame& F = torus_frame();
  const Surface2D& s = torus();
  for (int k : {1, 3, 7}) {
    const Vec f = s.sample([k](const Vec2& q) { return std::cos(k * q.x()); });
    CHECK(max_diff(lambda_alpha(F, f, -1.0), scaled(f, 1.0 / std::sqrt(1.0 + k * k))) < 1e-12);
  }
  const Vec g = probes(s)[4].second;
  CHECK(lambda_alpha(F, g, 0.0) == g);
  const Vec spec = lambda_alpha(F, g, -1.0);
  const Vec quad = lambda_alpha(F, g, -1.0, LambdaMethod::Quadrature);
  CHECK(max_diff(spec, quad) <= 1e-4 * max_abs(spec));
  CHECK(kind_of([&] { lambda_alpha(F, g, 0.5, LambdaMethod::Quadrature); }) == ErrorKind::QuadratureUnsupported);

  const HeatFrame& B = bumpy_frame();
  const Vec h = probes(B.surface())[5].second;
  for (auto [a, b] : {std::pair{-0.5, -0.5}, std::pair{1.0, -1.0}}) {
    const Vec lhs = lambda_alpha(B, lambda_alpha(B, h, b), a);
    const Vec rhs = lambda_alpha(B, h, a + b);
    CHECK(max_diff(lhs, rhs) <= 1e-10 * max_abs(h));
  }
}

TEST_CASE("Sobolev norms") {
  const HeatFrame& F = torus_frame();
  const Surface2D& s = torus();
  CHECK(sobolev_norm(F, {}, Vec(s.size(), 0.0), 1.0) == 0.0);
  const LPSettings st = resolve({}, F);
  for (int k : {1, 3, 6}) {
    const Vec f = s.sample([k](const Vec2& q) { return std::cos(k * q.x()); });
    const double lam = k * k;
    double exact = std::exp(-2 * lam);
    for (int j = 0; j <= st.J; ++j) exact += std::pow(4.0, j) * std::pow(lp_symbol(j, lam), 2);
    exact = std::sqrt(exact) * s.norm(f);
    const double val = sobolev_norm(F, st, f, 1.0);
    CHECK(val == doctest::Approx(exact).epsilon(1e-10));
    const double ref = std::sqrt(1.0 + lam) * s.norm(f);
    CHECK(val <= 4 * ref);
    CHECK(val >= ref / 4);
  }
  const auto [c1, c2] = sobolev_equivalence(F, st);
  MESSAGE("H^0 equivalence constants " << c1 << " " << c2);
  CHECK(c1 > 0.0);
  CHECK(c2 <= 1.0 + 1e-12);
  // Monotone in b once the low-frequency piece vanishes.
  const Vec f = s.sample([](const Vec2& q) { return std::cos(8 * q.x()) + 0.5 * std::sin(9 * q.y()); });
  CHECK(s.norm(lp_low(F, st, f)) < 1e-12 * s.norm(f));
  double prev = 0.0;
  for (double b = -2.0; b <= 2.0; b += 0.5) {
    const double v = sobolev_norm(F, st, f, b);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("Bochner identity") {
  const Surface2D& s = torus();
  CHECK(bochner_residual(s, s.sample([](const Vec2& q) { return std::cos(q.x() + 2 * q.y()); })) <= 1e-6);
  const IdentitySides c = bochner_identity(s, Vec(s.size(), 3.0));
  CHECK(std::abs(c.lhs) < 1e-20);
  CHECK(std::abs(c.rhs) < 1e-20);
  CHECK(bochner_residual_1form(s, probes(s)[1].second, probes(s)[4].second) <= 1e-6);
  CHECK(kind_of([] { bochner_residual_1form(bumpy(), bumpy().sample([](const Vec2&) { return 1.0; }),
                                            bumpy().sample([](const Vec2&) { return 1.0; })); }) ==
        ErrorKind::InvalidConfig);
  double prev = 0.0;
  for (int n : {33, 65, 129}) {
    const Surface2D p = Surface2D::perturbed_torus(n, 0.3, 2 * M_PI, Differencing::Central);
    const double r = bochner_residual(p, p.sample([](const Vec2& q) { return std::cos(q.x() + 2 * q.y()) + 0.3 * std::sin(q.x()); }));
    if (prev > 0.0) {
      MESSAGE("Bochner order " << std::log2(prev / r));
      CHECK(std::log2(prev / r) == doctest::Approx(2.0).epsilon(0.1));
    }
    prev = r;
  }
}

namespace {

// Traceless part of a symmetric tensor field.
std::vector<Mat2> traceless(const Surface2D& s, const std::function<Mat2(const Vec2&)>& X) {
  std::vector<Mat2> F(s.size());
  for (int j = 0; j < s.n; ++j)
    for (int i = 0; i < s.n; ++i) {
      const std::size_t k = s.index(i, j);
      const Mat2 x = X(s.point(i, j));
      F[k] = x - 0.5 * (s.gamma_inv[k] * x).trace() * s.gamma[k];
    }
  return F;
}

}  // namespace

TEST_CASE("Hodge identity") {
  const Surface2D& s = torus();
  CHECK(hodge_residual(s, std::vector<Mat2>(s.size(), Mat2::Zero())) == 0.0);
  Mat2 c;
  c << 0.4, -0.7, -0.7, -0.4;
  const IdentitySides sc = hodge_identity(s, std::vector<Mat2>(s.size(), c));
  CHECK(std::abs(sc.lhs) < 1e-20);
  CHECK(std::abs(sc.rhs) < 1e-20);
  // Hessian of a trigonometric potential minus half its trace.
  const auto pot = traceless(s, [](const Vec2& q) {
    const double a = q.x() + 2 * q.y(), b = 2 * q.x() - q.y();
    Mat2 H;
    H << -std::cos(a) - 4 * 0.5 * std::sin(b), -2 * std::cos(a) + 2 * 0.5 * std::sin(b),
        -2 * std::cos(a) + 2 * 0.5 * std::sin(b), -4 * std::cos(a) - 0.5 * std::sin(b);
    return H;
  });
  CHECK(hodge_residual(s, pot) <= 1e-4);
  std::vector<Mat2> bad(s.size(), Mat2::Identity());
  CHECK(kind_of([&] { hodge_residual(s, bad); }) == ErrorKind::NotTraceless);

  double prev = 0.0;
  for (int n : {33, 65, 129}) {
    const Surface2D p = Surface2D::perturbed_torus(n, 0.3, 2 * M_PI, Differencing::Central);
    const auto F = traceless(p, [](const Vec2& q) {
      Mat2 X;
      X << std::cos(q.x()), std::sin(q.y()), std::sin(q.y()), std::cos(q.x() + q.y());
      return X;
    });
    const double r = hodge_residual(p, F);
    if (prev > 0.0) {
      MESSAGE("Hodge order " << std::log2(prev / r));
      CHECK(std::log2(prev / r) == doctest::Approx(2.0).epsilon(0.1));
    }
    prev = r;
  }
}

TEST_CASE("calculus inequality ratios") {
  const Surface2D unit = Surface2D::flat_torus(15, 1.0);
  const InequalityReport c = inequality_ratios(unit, {{"const", Vec(unit.size(), 2.0)}});
  CHECK(c.isoperimetric[0] == doctest::Approx(1.0).epsilon(1e-12));

  const Surface2D& s = bumpy();
  const auto P = probes(s);
  const InequalityReport r = inequality_ratios(s, P);
  std::vector<std::pair<std::string, Vec>> doubled;
  for (const auto& [n, f] : P) doubled.emplace_back(n, scaled(f, 2.0));
  const InequalityReport r2 = inequality_ratios(s, doubled);
  for (std::size_t i = 0; i < P.size(); ++i) {
    CHECK(std::isfinite(r.gagliardo[i]));
    CHECK(std::abs(r.isoperimetric[i] - r2.isoperimetric[i]) <= 1e-12 * r.isoperimetric[i]);
    CHECK(std::abs(r.gagliardo[i] - r2.gagliardo[i]) <= 1e-12 * r.gagliardo[i]);
    CHECK(std::abs(r.sup[i] - r2.sup[i]) <= 1e-12 * r.sup[i]);
  }
  MESSAGE("max ratios: isoperimetric " << r.max_isoperimetric << ", Gagliardo-Nirenberg " << r.max_gagliardo
                                       << ", sup " << r.max_sup);
}

TEST_CASE("leaf surfaces and the Besov norm") {
  const Background flat = make_background(Family::Flat, 0.0);
  MarchParams p;
  p.half_width = M_PI;
  p.dq = M_PI / 15;
  p.du = 0.008;
  p.store_du = 0.8;
  p.probe_u.clear();
  const FoliationTrace T = march(flat, Vec3::UnitZ(), p);
  std::vector<Surface2D> surfaces;
  for (std::size_t l = 0; l < T.u_stored.size(); ++l) surfaces.push_back(Surface2D::from_leaf(flat, T, l, 31));
  for (const auto& s : surfaces) {
    for (std::size_t k = 0; k < s.size(); ++k) CHECK((s.gamma[k] - Mat2::Identity()).norm() < 1e-10);
    CHECK(max_abs(s.K) < 1e-10);
  }
  std::vector<HeatFrame> frames;
  for (const auto& s : surfaces) frames.emplace_back(s);
  std::vector<const HeatFrame*> fp;
  for (const auto& f : frames) fp.push_back(&f);

  std::vector<Vec> zero, one, wave;
  for (const auto& s : surfaces) {
    zero.emplace_back(s.size(), 0.0);
    one.emplace_back(s.size(), 1.0);
    wave.push_back(s.sample([](const Vec2& q) { return std::cos(3 * q.x()); }));
  }
  CHECK(besov_norm(fp, zero).value == 0.0);
  double root_area = 0.0;
  for (const auto& s : surfaces) root_area = std::max(root_area, std::sqrt(s.area()));
  CHECK(besov_norm(fp, one).value == doctest::Approx(root_area).epsilon(1e-10));

  const BesovReport b = besov_norm(fp, wave);
  LPSettings more;
  more.J = b.J + 2;
  const BesovReport b2 = besov_norm(fp, wave, more);
  MESSAGE("Besov norm " << b.value << " (J = " << b.J << "), " << b2.value << " (J = " << b2.J << "), tail " << b.tail);
  CHECK(std::isfinite(b.value));
  CHECK(std::abs(b2.value - b.value) <= 0.02 * b.value);
  CHECK(kind_of([&] { besov_norm({}, {}); }) == ErrorKind::InsufficientLeaves);
}

TEST_CASE("partition of identity on a perturbed leaf") {
  const Background bg = make_background(Family::Bump, 0.05);
  MarchParams p;
  p.dq = 0.2;
  p.du = 0.008;
  p.probe_u.clear();
  const FoliationTrace T = march(bg, Vec3::UnitZ(), p);
  std::size_t mid = 0;
  for (std::size_t l = 0; l < T.u_stored.size(); ++l)
    if (std::abs(T.u_stored[l]) < std::abs(T.u_stored[mid])) mid = l;
  const Surface2D s = Surface2D::from_leaf(bg, T, mid, 31);
  CHECK(max_abs(s.K) > 1e-3);
  const HeatFrame F(s);
  CHECK(F.self_adjointness_residual() <= 1e-10);
  const LPBattery b = lp_property_battery(F, {}, probes(s));
  CHECK(b.partition <= 1e-6);
  CHECK(b.c_bessel <= 1.0 + 1e-8);
}
