#include "eikon/foliation.hpp"

#include "eikon/error.hpp"
#include "eikon/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <type_traits>

namespace eikon {

void tangent_frame(const Vec3& omega, Vec3& t1, Vec3& t2) {
  const double z = std::clamp(omega.z(), -1.0, 1.0);
  const double th = std::acos(z);
  const double rho = std::hypot(omega.x(), omega.y());
  const double ph = rho > 1e-14 ? std::atan2(omega.y(), omega.x()) : 0.0;
  t1 = Vec3(std::cos(th) * std::cos(ph), std::cos(th) * std::sin(ph), -std::sin(th));
  t2 = Vec3(-std::sin(ph), std::cos(ph), 0.0);
}

Vec3 direction(double theta, double phi) {
  return Vec3(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta));
}

LeafGrid LeafGrid::make(const Vec3& omega, double half_width, double dq) {
  if (!(dq > 0.0) || !(half_width > 0.0)) throw Error(ErrorKind::InvalidConfig, "leaf spacing must be positive");
  LeafGrid g;
  g.omega = omega.normalized();
  tangent_frame(g.omega, g.t1, g.t2);
  g.n = static_cast<int>(std::lround(2.0 * half_width / dq)) + 1;
  g.dq = dq;
  g.half_width = 0.5 * (g.n - 1) * dq;
  return g;
}

namespace {

struct HDerivs {
  double h1, h2, h11, h12, h22;
};

inline int clampi(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

// Centred differences; indices are clamped at the edge, where every admissible
// leaf is the pinned plane and the one-sided value therefore coincides.
inline HDerivs h_derivs(const LeafGrid& G, const std::vector<double>& h, int i, int j) {
  const int n = G.n;
  const int ip = clampi(i + 1, n), im = clampi(i - 1, n), jp = clampi(j + 1, n), jm = clampi(j - 1, n);
  const double dq = G.dq;
  const double c = h[G.index(i, j)];
  HDerivs d;
  d.h1 = (h[G.index(ip, j)] - h[G.index(im, j)]) / (2 * dq);
  d.h2 = (h[G.index(i, jp)] - h[G.index(i, jm)]) / (2 * dq);
  d.h11 = (h[G.index(ip, j)] - 2 * c + h[G.index(im, j)]) / (dq * dq);
  d.h22 = (h[G.index(i, jp)] - 2 * c + h[G.index(i, jm)]) / (dq * dq);
  d.h12 = (h[G.index(ip, jp)] - h[G.index(ip, jm)] - h[G.index(im, jp)] + h[G.index(im, jm)]) / (4 * dq * dq);
  return d;
}

struct NodeGeom {
  Vec3 X, e1, e2, N, Ncov;
  Mat3 g;
  Mat2 gam, gami, th;
  double trth = 0, kNN = 0, a = 1, Nom = 1, sqrtg = 1, eucl = 1;
};

NodeGeom node_geometry(const Background& bg, const LeafGrid& G, const std::vector<double>& h, int i, int j) {
  NodeGeom r;
  const HDerivs d = h_derivs(G, h, i, j);
  const Vec3& w = G.omega;
  r.X = G.point(i, j, h[G.index(i, j)]);
  r.e1 = G.t1 + d.h1 * w;
  r.e2 = G.t2 + d.h2 * w;
  const Vec3 n = w - d.h1 * G.t1 - d.h2 * G.t2;
  r.eucl = 1.0 / std::sqrt(1.0 + d.h1 * d.h1 + d.h2 * d.h2);

  Sym3Array dg;
  const bool flat = bg.is_flat() || bg.flat_at(r.X);
  if (flat) {
    r.g.setIdentity();
  } else {
    bg.metric_and_gradient(r.X, r.g, dg);
  }
  const Mat3 gi = flat ? Mat3::Identity() : Mat3(r.g.inverse());
  const double nn = std::sqrt(n.dot(gi * n));
  r.Ncov = n / nn;
  r.N = gi * r.Ncov;
  r.Nom = r.Ncov.dot(w);

  const Vec3 ge1 = r.g * r.e1, ge2 = r.g * r.e2;
  r.gam << r.e1.dot(ge1), r.e1.dot(ge2), r.e2.dot(ge1), r.e2.dot(ge2);
  const double det = r.gam.determinant();
  if (!(det > 0.0) || !(r.gam(0, 0) > 0.0))
    throw Error(ErrorKind::DegenerateMetric, "induced metric lost positivity");
  r.sqrtg = std::sqrt(det);
  r.gami << r.gam(1, 1) / det, -r.gam(0, 1) / det, -r.gam(1, 0) / det, r.gam(0, 0) / det;

  const double nw = r.Ncov.dot(w);
  r.th(0, 0) = -nw * d.h11;
  r.th(0, 1) = r.th(1, 0) = -nw * d.h12;
  r.th(1, 1) = -nw * d.h22;
  if (!flat) {
    const Sym3Array G3 = christoffel(r.g, dg);
    const Vec3* e[2] = {&r.e1, &r.e2};
    for (int A = 0; A < 2; ++A)
      for (int B = A; B < 2; ++B) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += r.Ncov[k] * e[A]->dot(G3[k] * *e[B]);
        r.th(A, B) -= s;
        if (B != A) r.th(B, A) = r.th(A, B);
      }
    const Mat3 k = bg.extrinsic(r.X);
    r.kNN = r.N.dot(k * r.N);
  }
  r.trth = r.gami.cwiseProduct(r.th).sum();
  r.a = 1.0 + r.kNN - r.trth;
  return r;
}

std::string where(const Vec3& x) {
  std::ostringstream os;
  os << "(" << x.x() << ", " << x.y() << ", " << x.z() << ")";
  return os.str();
}

void check_graph(const NodeGeom& r) {
  if (r.eucl <= 0.1) throw Error(ErrorKind::GraphBreakdown, "leaf is no longer a graph near " + where(r.X));
}

// Brioschi formula for the Gauss curvature of E du^2 + 2F du dv + G dv^2.
double brioschi(double E, double F, double G, double Eu, double Ev, double Fu, double Fv, double Gu, double Gv,
                double Evv, double Fuv, double Guu) {
  Mat3 m1, m2;
  m1 << -0.5 * Evv + Fuv - 0.5 * Guu, 0.5 * Eu, Fu - 0.5 * Ev,
        Fv - 0.5 * Gu, E, F,
        0.5 * Gv, F, G;
  m2 << 0.0, 0.5 * Ev, 0.5 * Gu,
        0.5 * Ev, E, F,
        0.5 * Gu, F, G;
  const double W = E * G - F * F;
  return (m1.determinant() - m2.determinant()) / (W * W);
}

template <class T, class Get>
struct FieldDiff {
  const LeafGrid& G;
  Get get;
  T d1(int i, int j) const { return (get(clampi(i + 1, G.n), j) - get(clampi(i - 1, G.n), j)) / (2.0 * G.dq); }
  T d2(int i, int j) const { return (get(i, clampi(j + 1, G.n)) - get(i, clampi(j - 1, G.n))) / (2.0 * G.dq); }
  T d11(int i, int j) const {
    return (get(clampi(i + 1, G.n), j) - 2.0 * get(i, j) + get(clampi(i - 1, G.n), j)) / (G.dq * G.dq);
  }
  T d22(int i, int j) const {
    return (get(i, clampi(j + 1, G.n)) - 2.0 * get(i, j) + get(i, clampi(j - 1, G.n))) / (G.dq * G.dq);
  }
  T d12(int i, int j) const {
    const int ip = clampi(i + 1, G.n), im = clampi(i - 1, G.n), jp = clampi(j + 1, G.n), jm = clampi(j - 1, G.n);
    return (get(ip, jp) - get(ip, jm) - get(im, jp) + get(im, jm)) / (4.0 * G.dq * G.dq);
  }
};

template <class T, class Get>
FieldDiff<T, Get> diff(const LeafGrid& G, Get get) {
  return FieldDiff<T, Get>{G, get};
}

}  // namespace

double Leaf::lapse_definition_residual() const {
  double r = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n) r = std::max(r, std::abs(a[n] - (1.0 + kNN[n] - tr_theta[n])));
  return r;
}

double Leaf::orthonormality_residual(const Background& bg) const {
  double r = 0.0;
  for (std::size_t n = 0; n < N.size(); ++n) {
    const Mat3 g = bg.metric(X[n]);
    r = std::max(r, std::abs(N[n].dot(g * N[n]) - 1.0));
    r = std::max(r, std::abs(N[n].dot(g * e1[n])));
    r = std::max(r, std::abs(N[n].dot(g * e2[n])));
  }
  return r;
}

Leaf leaf_geometry(const Background& bg, const LeafGrid& grid, double u, const std::vector<double>& h,
                   GeometryDepth depth) {
  Leaf L;
  L.grid = grid;
  L.u = u;
  L.h = h;
  const std::size_t S = grid.size();
  L.X.resize(S);
  L.e1.resize(S);
  L.e2.resize(S);
  L.N.resize(S);
  L.Ncov.resize(S);
  L.gamma.resize(S);
  L.gamma_inv.resize(S);
  L.sqrt_gamma.resize(S);
  L.theta.resize(S);
  L.tr_theta.resize(S);
  L.theta_sq.resize(S);
  L.kNN.resize(S);
  L.a.resize(S);
  L.N_omega.resize(S);
  parallel_for(static_cast<std::size_t>(grid.n), [&](std::size_t jj) {
    const int j = static_cast<int>(jj);
    for (int i = 0; i < grid.n; ++i) {
      const NodeGeom r = node_geometry(bg, grid, h, i, j);
      check_graph(r);
      const std::size_t k = grid.index(i, j);
      L.X[k] = r.X;
      L.e1[k] = r.e1;
      L.e2[k] = r.e2;
      L.N[k] = r.N;
      L.Ncov[k] = r.Ncov;
      L.gamma[k] = r.gam;
      L.gamma_inv[k] = r.gami;
      L.sqrt_gamma[k] = r.sqrtg;
      L.theta[k] = r.th;
      L.tr_theta[k] = r.trth;
      const Mat2 m = r.gami * r.th;
      L.theta_sq[k] = (m * m).trace();
      L.kNN[k] = r.kNN;
      L.a[k] = r.a;
      L.N_omega[k] = r.Nom;
    }
  });
  if (depth == GeometryDepth::Rate) return L;

  L.theta_hat.resize(S);
  L.K.resize(S);
  L.ricci.resize(S);
  L.scalar.resize(S);
  auto gam = [&](int c) {
    return [&, c](int i, int j) {
      const Mat2& m = L.gamma[grid.index(i, j)];
      return c == 0 ? m(0, 0) : (c == 1 ? m(0, 1) : m(1, 1));
    };
  };
  const auto dE = diff<double>(grid, gam(0));
  const auto dF = diff<double>(grid, gam(1));
  const auto dG = diff<double>(grid, gam(2));
  parallel_for(static_cast<std::size_t>(grid.n), [&](std::size_t jj) {
    const int j = static_cast<int>(jj);
    for (int i = 0; i < grid.n; ++i) {
      const std::size_t k = grid.index(i, j);
      L.theta_hat[k] = L.theta[k] - 0.5 * L.tr_theta[k] * L.gamma[k];
      const Mat2& g = L.gamma[k];
      L.K[k] = brioschi(g(0, 0), g(0, 1), g(1, 1), dE.d1(i, j), dE.d2(i, j), dF.d1(i, j), dF.d2(i, j), dG.d1(i, j),
                        dG.d2(i, j), dE.d22(i, j), dF.d12(i, j), dG.d11(i, j));
      const CurvatureSample cs = curvature(bg, L.X[k]);
      L.ricci[k] = cs.ricci;
      L.scalar[k] = cs.scalar;
    }
  });
  return L;
}

void check_lapse(const Leaf& leaf, double a_min, double r_limit) {
  const LeafGrid& G = leaf.grid;
  for (int j = 0; j < G.n; ++j)
    for (int i = 0; i < G.n; ++i) {
      if (G.q(i, j).norm() >= r_limit) continue;
      const std::size_t k = G.index(i, j);
      if (leaf.a[k] <= a_min) {
        std::ostringstream os;
        os << "lapse " << leaf.a[k] << " <= a_min = " << a_min << " at " << where(leaf.X[k]) << ", u = " << leaf.u;
        throw Error(ErrorKind::FlowDegenerate, os.str());
      }
    }
}

void validate(const MarchParams& p) {
  if (!(p.dq > 0.0) || !(p.du > 0.0) || !(p.half_width > 0.0) || !(p.store_du > 0.0))
    throw Error(ErrorKind::InvalidConfig, "march spacings must be positive");
  if (p.du > p.c_stab * p.dq * p.dq * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "du = " << p.du << " exceeds c_stab dq^2 = " << p.c_stab * p.dq * p.dq;
    throw Error(ErrorKind::StabilityViolated, os.str());
  }
  const double M = 4.0 / p.du;
  if (std::abs(M - std::round(M)) > 1e-9 * M)
    throw Error(ErrorKind::InvalidConfig, "du must divide the strip length 4");
  if (p.r_pin < 2.0 || p.r_pin > p.half_width - 2.0 * p.dq)
    throw Error(ErrorKind::InvalidConfig, "pinning radius must lie in [2, L - 2 dq]");
  if (!(p.a_min > 0.0)) throw Error(ErrorKind::InvalidConfig, "a_min must be positive");
}

namespace {

// d_u h = a / N_omega on the evolving disc; the pinned collar moves at unit speed.
std::vector<double> rate(const Background& bg, const LeafGrid& G, const std::vector<double>& h, double u,
                         const MarchParams& p, double& def_res, double& a_lo) {
  std::vector<double> r(G.size(), 1.0);
  std::vector<double> dres(G.n, 0.0), amin(G.n, 1e300);
  const double rp2 = p.r_pin * p.r_pin;
  parallel_for(static_cast<std::size_t>(G.n), [&](std::size_t jj) {
    const int j = static_cast<int>(jj);
    for (int i = 0; i < G.n; ++i) {
      if (G.q(i, j).squaredNorm() >= rp2) continue;
      const NodeGeom g = node_geometry(bg, G, h, i, j);
      check_graph(g);
      if (g.a <= p.a_min) {
        std::ostringstream os;
        os << "lapse " << g.a << " <= a_min = " << p.a_min << " at " << where(g.X) << ", u = " << u;
        throw Error(ErrorKind::FlowDegenerate, os.str());
      }
      dres[j] = std::max(dres[j], std::abs(g.a - (1.0 + g.kNN - g.trth)));
      amin[j] = std::min(amin[j], g.a);
      r[G.index(i, j)] = g.a / g.Nom;
    }
  });
  for (int j = 0; j < G.n; ++j) {
    def_res = std::max(def_res, dres[j]);
    a_lo = std::min(a_lo, amin[j]);
  }
  return r;
}

void pin(const LeafGrid& G, std::vector<double>& h, double value, double r_pin) {
  const double rp2 = r_pin * r_pin;
  for (int j = 0; j < G.n; ++j)
    for (int i = 0; i < G.n; ++i)
      if (G.q(i, j).squaredNorm() >= rp2) h[G.index(i, j)] = value;
}

std::vector<double> heun(const Background& bg, const LeafGrid& G, double u, const std::vector<double>& h,
                         double du, const MarchParams& p, double& def_res, double& a_lo) {
  const std::vector<double> k1 = rate(bg, G, h, u, p, def_res, a_lo);
  std::vector<double> h1(h.size());
  for (std::size_t n = 0; n < h.size(); ++n) h1[n] = h[n] + du * k1[n];
  pin(G, h1, u + du, p.r_pin);
  const std::vector<double> k2 = rate(bg, G, h1, u + du, p, def_res, a_lo);
  std::vector<double> out(h.size());
  for (std::size_t n = 0; n < h.size(); ++n) out[n] = h[n] + 0.5 * du * (k1[n] + k2[n]);
  pin(G, out, u + du, p.r_pin);
  return out;
}

}  // namespace

std::vector<double> advance(const Background& bg, const LeafGrid& grid, double u, const std::vector<double>& h,
                            double du, const MarchParams& p, double* definition_residual) {
  if (du > p.c_stab * grid.dq * grid.dq * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "du = " << du << " exceeds c_stab dq^2 = " << p.c_stab * grid.dq * grid.dq;
    throw Error(ErrorKind::StabilityViolated, os.str());
  }
  double def_res = 0.0, a_lo = 1e300;
  std::vector<double> out = heun(bg, grid, u, h, du, p, def_res, a_lo);
  if (definition_residual) *definition_residual = def_res;
  return out;
}

FoliationTrace march(const Background& bg, const Vec3& omega, const MarchParams& p) {
  validate(p);
  FoliationTrace T;
  T.params = p;
  T.grid = LeafGrid::make(omega, p.half_width, p.dq);
  const LeafGrid& G = T.grid;
  const int M = static_cast<int>(std::lround(4.0 / p.du));
  int stride = std::max(1, static_cast<int>(std::lround(p.store_du / p.du)));
  while (M % stride != 0) --stride;

  std::vector<int> probe_m;
  for (double us : p.probe_u) {
    const int m = static_cast<int>(std::lround((us + 2.0) / p.du));
    if (m < 1 || m > M - 1) throw Error(ErrorKind::InvalidConfig, "probe leaf must lie strictly inside the strip");
    probe_m.push_back(m);
  }
  std::vector<std::array<std::vector<double>, 3>> probe_h(probe_m.size());

  auto u_of = [&](int m) { return -2.0 + m * p.du; };
  std::vector<double> h(G.size(), -2.0);
  auto keep = [&](int m) {
    if (m % stride == 0) {
      T.u_stored.push_back(u_of(m));
      T.h_stored.push_back(h);
    }
    for (std::size_t k = 0; k < probe_m.size(); ++k) {
      const int d = m - probe_m[k];
      if (d >= -1 && d <= 1) probe_h[k][d + 1] = h;
    }
  };
  keep(0);
  double def_res = 0.0, a_lo = 1e300;
  for (int m = 0; m < M; ++m) {
    std::vector<double> next;
    try {
      next = heun(bg, G, u_of(m), h, p.du, p, def_res, a_lo);
    } catch (const Error& e) {
      std::ostringstream os;
      os << e.what() << " [march failed at u = " << u_of(m) << "]";
      throw Error(e.kind(), os.str());
    }
    double inc = 1e300;
    for (std::size_t n = 0; n < h.size(); ++n) inc = std::min(inc, next[n] - h[n]);
    T.min_rate_increment = std::min(T.min_rate_increment, inc);
    h.swap(next);
    keep(m + 1);
  }
  T.steps = M;
  T.max_definition_residual = def_res;
  T.min_lapse = a_lo;

  for (std::size_t k = 0; k < probe_m.size(); ++k) {
    ProbeTriplet t;
    t.u = u_of(probe_m[k]);
    t.du = p.du;
    t.prev = leaf_geometry(bg, G, u_of(probe_m[k] - 1), probe_h[k][0]);
    t.mid = leaf_geometry(bg, G, t.u, probe_h[k][1]);
    t.next = leaf_geometry(bg, G, u_of(probe_m[k] + 1), probe_h[k][2]);
    T.max_definition_residual = std::max({T.max_definition_residual, t.prev.lapse_definition_residual(),
                                          t.mid.lapse_definition_residual(), t.next.lapse_definition_residual()});
    T.probes.push_back(std::move(t));
  }
  return T;
}

void write_trace(const std::string& path, const FoliationTrace& trace) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path);
  const LeafGrid& G = trace.grid;
  out << std::setprecision(17);
  out << "OMEGA " << G.omega.x() << ' ' << G.omega.y() << ' ' << G.omega.z() << " N " << G.n << " DQ " << G.dq
      << " HALFWIDTH " << G.half_width << '\n';
  for (std::size_t m = 0; m < trace.u_stored.size(); ++m) {
    out << "LEAF u=" << trace.u_stored[m] << '\n';
    for (int j = 0; j < G.n; ++j) {
      for (int i = 0; i < G.n; ++i) {
        if (i) out << ' ';
        out << trace.h_stored[m][G.index(i, j)];
      }
      out << '\n';
    }
  }
}

double glue_cutoff(double r) {
  if (r <= 1.0) return 1.0;
  if (r >= 2.0) return 0.0;
  const double t = 2.0 - r;
  return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
}

PhaseSampler::PhaseSampler(const Background& bg, const FoliationTrace& tr, bool with_leaf_data)
    : trace(tr), leaf_data(with_leaf_data) {
  if (!leaf_data) return;
  const std::size_t S = trace.u_stored.size();
  a_stored.resize(S);
  N_stored.resize(S);
  for (std::size_t m = 0; m < S; ++m) {
    const Leaf L = leaf_geometry(bg, trace.grid, trace.u_stored[m], trace.h_stored[m], GeometryDepth::Rate);
    a_stored[m] = L.a;
    N_stored[m] = L.Ncov;
  }
}

double PhaseSampler::u(const Vec3& x, double* a_out, Vec3* N_out) const {
  const LeafGrid& G = trace.grid;
  const double q1 = x.dot(G.t1), q2 = x.dot(G.t2), z = x.dot(G.omega);
  const double rp = trace.params.r_pin;
  if (q1 * q1 + q2 * q2 >= rp * rp) {
    if (a_out) *a_out = 1.0;
    if (N_out) *N_out = G.omega;
    return z;
  }
  const Stencil1 s1 = lagrange_stencil((q1 + G.half_width) / G.dq, G.n, 6);
  const Stencil1 s2 = lagrange_stencil((q2 + G.half_width) / G.dq, G.n, 6);
  auto qinterp = [&](const auto& field) {
    using T = std::decay_t<decltype(field[0])>;
    T acc = T();
    if constexpr (!std::is_arithmetic_v<T>) acc.setZero();
    for (int b = 0; b < s2.npts; ++b) {
      T row = T();
      if constexpr (!std::is_arithmetic_v<T>) row.setZero();
      for (int c = 0; c < s1.npts; ++c) row += s1.w[c] * field[G.index(s1.start + c, s2.start + b)];
      acc += s2.w[b] * row;
    }
    return acc;
  };
  const int S = static_cast<int>(trace.u_stored.size());
  auto H = [&](int m) { return qinterp(trace.h_stored[m]); };
  const std::vector<double>& us = trace.u_stored;

  int lo_idx;
  double u_val;
  const double H0 = H(0), HS = H(S - 1);
  if (z <= H0) {
    const double slope = (us[1] - us[0]) / (H(1) - H0);
    u_val = us[0] + (z - H0) * slope;
    lo_idx = -1;
  } else if (z >= HS) {
    const double slope = (us[S - 1] - us[S - 2]) / (HS - H(S - 2));
    u_val = us[S - 1] + (z - HS) * slope;
    lo_idx = S;
  } else {
    int lo = 0, hi = S - 1;  // H(lo) < z < H(hi)
    while (hi - lo > 1) {
      const int mid = (lo + hi) / 2;
      if (H(mid) <= z)
        lo = mid;
      else
        hi = mid;
    }
    lo_idx = lo;
    const int b = std::clamp(lo - 1, 0, std::max(0, S - 4));
    const int np = std::min(4, S);
    double uk[4], Hk[4];
    for (int k = 0; k < np; ++k) {
      uk[k] = us[b + k];
      Hk[k] = H(b + k);
    }
    auto P = [&](double uu, double& dP) {
      double val = 0.0;
      dP = 0.0;
      for (int k = 0; k < np; ++k) {
        double w = 1.0, dw = 0.0;
        for (int l = 0; l < np; ++l) {
          if (l == k) continue;
          const double den = uk[k] - uk[l];
          dw = dw * (uu - uk[l]) / den + w / den;
          w *= (uu - uk[l]) / den;
        }
        val += w * Hk[k];
        dP += dw * Hk[k];
      }
      return val;
    };
    double a = us[lo], bnd = us[lo + 1];
    const double Ha = H(lo), Hb = H(lo + 1);
    double uu = a + (z - Ha) * (bnd - a) / (Hb - Ha);
    for (int it = 0; it < 60; ++it) {
      double dP;
      const double f = P(uu, dP) - z;
      if (f > 0)
        bnd = uu;
      else
        a = uu;
      double next = (dP > 0) ? uu - f / dP : 0.5 * (a + bnd);
      if (!(next > a && next < bnd)) next = 0.5 * (a + bnd);
      if (std::abs(next - uu) <= 1e-15 * (1.0 + std::abs(uu))) {
        uu = next;
        break;
      }
      uu = next;
    }
    u_val = uu;
  }

  if ((a_out || N_out) && leaf_data) {
    if (lo_idx < 0 || lo_idx >= S) {
      const int m = lo_idx < 0 ? 0 : S - 1;
      if (a_out) *a_out = qinterp(a_stored[m]);
      if (N_out) *N_out = qinterp(N_stored[m]);
    } else {
      const int b = std::clamp(lo_idx - 1, 0, std::max(0, S - 4));
      const int np = std::min(4, S);
      double av = 0.0;
      Vec3 nv = Vec3::Zero();
      for (int k = 0; k < np; ++k) {
        double w = 1.0;
        for (int l = 0; l < np; ++l)
          if (l != k) w *= (u_val - us[b + l]) / (us[b + k] - us[b + l]);
        if (a_out) av += w * qinterp(a_stored[b + k]);
        if (N_out) nv += w * qinterp(N_stored[b + k]);
      }
      if (a_out) *a_out = av;
      if (N_out) *N_out = nv;
    }
  }
  return u_val;
}

PhaseField reconstruct(const Background& bg, const FoliationTrace& trace, const Grid3& grid, bool leaf_data) {
  PhaseField F;
  F.grid = grid;
  F.omega = trace.grid.omega;
  F.has_leaf_data = leaf_data;
  const PhaseSampler sampler(bg, trace, leaf_data);
  const std::size_t S = grid.size();
  F.u_raw.resize(S);
  F.u.resize(S);
  if (leaf_data) {
    F.a.resize(S);
    F.Ncov.resize(S);
  }
  parallel_for(static_cast<std::size_t>(grid.nz), [&](std::size_t kk) {
    const int k = static_cast<int>(kk);
    for (int j = 0; j < grid.ny; ++j)
      for (int i = 0; i < grid.nx; ++i) {
        const std::size_t n = grid.index(i, j, k);
        const Vec3 x = grid.point(i, j, k);
        double a = 1.0;
        Vec3 N = F.omega;
        const double u = sampler.u(x, leaf_data ? &a : nullptr, leaf_data ? &N : nullptr);
        F.u_raw[n] = u;
        const double phi = glue_cutoff(x.norm());
        F.u[n] = phi * u + (1.0 - phi) * x.dot(F.omega);
        if (leaf_data) {
          F.a[n] = a;
          F.Ncov[n] = N;
        }
      }
  });
  return F;
}

ProbeScalar ProbeScalar::quadratic() {
  const Vec3 b(0.3, -0.2, 0.5);
  Mat3 C;
  C << 0.8, 0.1, -0.3,
       0.1, -0.4, 0.2,
       -0.3, 0.2, 0.6;
  ProbeScalar p;
  p.f = [b, C](const Vec3& x) { return b.dot(x) + 0.5 * x.dot(C * x); };
  p.grad = [b, C](const Vec3& x) { return Vec3(b + C * x); };
  return p;
}

ProbeScalar ProbeScalar::gaussian(const Vec3& c, double sigma) {
  ProbeScalar p;
  const double s2 = sigma * sigma;
  p.f = [c, s2](const Vec3& x) { return std::exp(-(x - c).squaredNorm() / (2 * s2)); };
  p.grad = [c, s2](const Vec3& x) { return Vec3(-(x - c) / s2 * std::exp(-(x - c).squaredNorm() / (2 * s2))); };
  return p;
}

StructureReport structure_residuals(const ProbeTriplet& t, const Background& bg, const ProbeScalar& probe,
                                    double r_eval) {
  const Leaf& P = t.prev;
  const Leaf& L = t.mid;
  const Leaf& Q = t.next;
  const LeafGrid& G = L.grid;
  const double du = t.du;
  const std::size_t S = G.size();

  // Per-leaf probe data: N(f) and the tangential part zeta = df - N(f) N_flat.
  auto probe_fields = [&](const Leaf& lf, std::vector<double>& Nf, std::vector<Vec3>& zeta, std::vector<Vec3>& df) {
    Nf.resize(S);
    zeta.resize(S);
    df.resize(S);
    for (std::size_t k = 0; k < S; ++k) {
      df[k] = probe.grad(lf.X[k]);
      Nf[k] = lf.N[k].dot(df[k]);
      zeta[k] = df[k] - Nf[k] * lf.Ncov[k];
    }
  };
  std::vector<double> NfP, NfL, NfQ;
  std::vector<Vec3> zP, zL, zQ, dfP, dfL, dfQ;
  probe_fields(P, NfP, zP, dfP);
  probe_fields(L, NfL, zL, dfL);
  probe_fields(Q, NfQ, zQ, dfQ);

  auto at = [&](const auto& v) { return [&v, &G](int i, int j) { return v[G.index(i, j)]; }; };
  const auto D_a = diff<double>(G, at(L.a));
  const auto D_tr = diff<double>(G, at(L.tr_theta));
  const auto D_kNN = diff<double>(G, at(L.kNN));
  const auto D_Nf = diff<double>(G, at(NfL));
  const auto D_N = diff<Vec3>(G, at(L.N));
  const auto D_z = diff<Vec3>(G, at(zL));
  const auto D_gam = diff<Mat2>(G, at(L.gamma));
  const auto D_th = diff<Mat2>(G, at(L.theta_hat));

  struct Acc {
    double mx = 0, s2 = 0;
    void add(double r, double w) {
      mx = std::max(mx, std::abs(r));
      s2 += r * r * w;
    }
    ResidualStat stat() const { return {mx, std::sqrt(s2)}; }
  };
  Acc gauss, codazzi, lapse, frame, comm;
  const double r2 = r_eval * r_eval;
  const double dA = G.dq * G.dq;

  for (int j = 1; j + 1 < G.n; ++j)
    for (int i = 1; i + 1 < G.n; ++i) {
      if (G.q(i, j).squaredNorm() > r2) continue;
      const std::size_t k = G.index(i, j);
      const Mat2& gi = L.gamma_inv[k];
      const Vec3& N = L.N[k];
      const double a = L.a[k];
      const double w = L.sqrt_gamma[k] * dA;
      const Mat3 g = bg.metric(L.X[k]);
      const CurvatureSample cs = curvature(bg, L.X[k]);
      const Vec3 eA[2] = {L.e1[k], L.e2[k]};

      // Intrinsic Christoffel symbols of gamma: Gb[C](A,B).
      const Mat2 dgam[2] = {D_gam.d1(i, j), D_gam.d2(i, j)};
      Mat2 low[2];
      for (int C = 0; C < 2; ++C)
        for (int A = 0; A < 2; ++A)
          for (int B = 0; B < 2; ++B) low[C](A, B) = 0.5 * (dgam[A](B, C) + dgam[B](A, C) - dgam[C](A, B));
      Mat2 Gb[2];
      for (int C = 0; C < 2; ++C) Gb[C] = gi(C, 0) * low[0] + gi(C, 1) * low[1];

      // Gauss: 2K - tr^2 + |theta|^2 = R - 2 R_NN
      const double RNN = N.dot(cs.ricci * N);
      gauss.add(2 * L.K[k] - L.tr_theta[k] * L.tr_theta[k] + L.theta_sq[k] - (cs.scalar - 2 * RNN), w);

      // Codazzi: div theta_hat_A = 1/2 d_A tr theta + R_NA
      {
        const Mat2 dth[2] = {D_th.d1(i, j), D_th.d2(i, j)};
        const Mat2& th = L.theta_hat[k];
        const double dtr[2] = {D_tr.d1(i, j), D_tr.d2(i, j)};
        Vec2 r;
        for (int A = 0; A < 2; ++A) {
          double div = 0.0;
          for (int B = 0; B < 2; ++B)
            for (int C = 0; C < 2; ++C) {
              double cov = dth[B](C, A);
              for (int D = 0; D < 2; ++D) cov -= Gb[D](B, C) * th(D, A) + Gb[D](B, A) * th(C, D);
              div += gi(B, C) * cov;
            }
          r[A] = div - 0.5 * dtr[A] - N.dot(cs.ricci * eA[A]);
        }
        codazzi.add(std::sqrt(r.dot(gi * r)), w);
      }

      // Column derivative along the flow: d_u X = a N + T with T tangent.
      const double hu = (Q.h[k] - P.h[k]) / (2 * du);
      Vec2 T;
      {
        const Vec3 gw = g * G.omega;
        const Vec2 b(hu * gw.dot(eA[0]), hu * gw.dot(eA[1]));
        T = gi * b;
      }
      auto normal_scalar = [&](double fp, double fq, double d1, double d2) {
        return ((fq - fp) / (2 * du) - T[0] * d1 - T[1] * d2) / a;
      };
      auto normal_vec = [&](const Vec3& fp, const Vec3& fq, const Vec3& d1, const Vec3& d2) {
        return Vec3(((fq - fp) / (2 * du) - T[0] * d1 - T[1] * d2) / a);
      };
      const double da[2] = {D_a.d1(i, j), D_a.d2(i, j)};

      // Lapse equation: N(a) - a^-1 Lap a = |theta|^2 + N(k_NN) + R_NN
      {
        const double Na = normal_scalar(P.a[k], Q.a[k], da[0], da[1]);
        const double NkNN = normal_scalar(P.kNN[k], Q.kNN[k], D_kNN.d1(i, j), D_kNN.d2(i, j));
        const Mat2 hess = (Mat2() << D_a.d11(i, j), D_a.d12(i, j), D_a.d12(i, j), D_a.d22(i, j)).finished();
        double lap = 0.0;
        for (int A = 0; A < 2; ++A)
          for (int B = 0; B < 2; ++B) lap += gi(A, B) * (hess(A, B) - Gb[0](A, B) * da[0] - Gb[1](A, B) * da[1]);
        lapse.add(Na - lap / a - L.theta_sq[k] - NkNN - RNN, w);
      }

      // Frame: nabla_N N = -a^-1 grad a
      const Vec3 dN[2] = {D_N.d1(i, j), D_N.d2(i, j)};
      {
        Vec3 nabNN = normal_vec(P.N[k], Q.N[k], dN[0], dN[1]);
        for (int m = 0; m < 3; ++m) nabNN[m] += N.dot(cs.christoffel[m] * N);
        const Vec2 ga = gi * Vec2(da[0], da[1]);
        const Vec3 r = nabNN + (ga[0] * eA[0] + ga[1] * eA[1]) / a;
        frame.add(std::sqrt(r.dot(g * r)), w);
      }

      // Scalar commutator: [nabla_N, grad] f = a^-1 grad a N(f) - theta . grad f
      {
        const Vec3 dz[2] = {D_z.d1(i, j), D_z.d2(i, j)};
        Vec3 nz = normal_vec(zP[k], zQ[k], dz[0], dz[1]);
        const Vec3& z = zL[k];
        for (int m = 0; m < 3; ++m) {
          double s = 0.0;
          for (int l = 0; l < 3; ++l) s += cs.christoffel[l](m, 0) * N[0] * z[l] + cs.christoffel[l](m, 1) * N[1] * z[l] +
                                           cs.christoffel[l](m, 2) * N[2] * z[l];
          nz[m] -= s;
        }
        const double dNf[2] = {D_Nf.d1(i, j), D_Nf.d2(i, j)};
        const Vec2 dfl(eA[0].dot(dfL[k]), eA[1].dot(dfL[k]));
        const Vec2 thdf = L.theta[k] * (gi * dfl);
        Vec2 r;
        for (int A = 0; A < 2; ++A) {
          const double lhs = eA[A].dot(nz) - dNf[A];
          const double rhs = da[A] / a * NfL[k] - thdf[A];
          r[A] = lhs - rhs;
        }
        comm.add(std::sqrt(r.dot(gi * r)), w);
      }
    }

  StructureReport rep;
  rep.gauss = gauss.stat();
  rep.codazzi = codazzi.stat();
  rep.lapse_parabolic = lapse.stat();
  rep.frame = frame.stat();
  rep.commutator = comm.stat();
  rep.dq = G.dq;
  rep.du = du;
  return rep;
}

StructureReport structure_residuals(const FoliationTrace& trace, const Background& bg, const ProbeScalar& probe,
                                    double r_eval) {
  if (trace.probes.empty())
    throw Error(ErrorKind::InsufficientLeaves, "structure residuals need three consecutive leaves");
  StructureReport out;
  out.dq = trace.grid.dq;
  out.du = trace.params.du;
  auto merge = [](ResidualStat& a, const ResidualStat& b) {
    a.max = std::max(a.max, b.max);
    a.l2 = std::max(a.l2, b.l2);
  };
  for (const ProbeTriplet& t : trace.probes) {
    const StructureReport r = structure_residuals(t, bg, probe, r_eval);
    merge(out.gauss, r.gauss);
    merge(out.codazzi, r.codazzi);
    merge(out.lapse_parabolic, r.lapse_parabolic);
    merge(out.frame, r.frame);
    merge(out.commutator, r.commutator);
  }
  return out;
}

void write_structure_csv(const std::string& path, const std::vector<StructureReport>& reports) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path);
  out << "identity,max_residual,l2_residual,dx,du\n";
  out << std::scientific << std::setprecision(10);
  for (const StructureReport& r : reports) {
    const std::pair<const char*, const ResidualStat*> rows[] = {{"gauss", &r.gauss},
                                                                {"codazzi", &r.codazzi},
                                                                {"lapse_parabolic", &r.lapse_parabolic},
                                                                {"frame_nabNN", &r.frame},
                                                                {"commutator", &r.commutator}};
    for (const auto& [name, s] : rows)
      out << name << ',' << s->max << ',' << s->l2 << ',' << r.dq << ',' << r.du << '\n';
  }
}

CalculusReport calculus_checks(const Background& bg, const FoliationTrace& trace, const ProbeScalar& f,
                               double bulk_spacing) {
  CalculusReport rep;
  const LeafGrid& G = trace.grid;
  const std::size_t S = trace.u_stored.size();
  if (S < 3) throw Error(ErrorKind::InsufficientLeaves, "calculus checks need at least three stored leaves");

  // Bulk side: trapezoid over the cube (the probe vanishes at its faces).
  const Grid3 cube = Grid3::cube(G.half_width, bulk_spacing);
  std::vector<double> slab(cube.nz, 0.0);
  parallel_for(static_cast<std::size_t>(cube.nz), [&](std::size_t kk) {
    const int k = static_cast<int>(kk);
    double s = 0.0;
    for (int j = 0; j < cube.ny; ++j)
      for (int i = 0; i < cube.nx; ++i) {
        const Vec3 x = cube.point(i, j, k);
        s += f.f(x) * std::sqrt(bg.metric(x).determinant());
      }
    slab[k] = s;
  });
  double bulk = 0.0;
  for (double s : slab) bulk += s;
  rep.coarea_bulk = bulk * std::pow(bulk_spacing, 3);

  // Leaf side, plus the ingredients of the first-variation formula.
  std::vector<double> I(S, 0.0), rhs(S, 0.0), rhs_lit(S, 0.0), coarea(S, 0.0);
  const double dA = G.dq * G.dq;
  for (std::size_t m = 0; m < S; ++m) {
    const Leaf L = leaf_geometry(bg, G, trace.u_stored[m], trace.h_stored[m], GeometryDepth::Rate);
    for (std::size_t k = 0; k < G.size(); ++k) {
      const double fv = f.f(L.X[k]);
      if (fv == 0.0 && L.tr_theta[k] == 0.0) continue;
      const double w = L.sqrt_gamma[k] * dA;
      const double Nf = L.N[k].dot(f.grad(L.X[k]));
      I[m] += fv * w;
      coarea[m] += fv * L.a[k] * w;
      rhs[m] += (L.a[k] * Nf + L.a[k] * L.tr_theta[k] * fv) * w;
      rhs_lit[m] += (L.a[k] * Nf + L.tr_theta[k] * fv) * w;
    }
  }
  double leaves = 0.0;
  for (std::size_t m = 0; m + 1 < S; ++m)
    leaves += 0.5 * (coarea[m] + coarea[m + 1]) * (trace.u_stored[m + 1] - trace.u_stored[m]);
  rep.coarea_leaves = leaves;
  rep.coarea_mismatch = std::abs(leaves - rep.coarea_bulk) / std::max(std::abs(rep.coarea_bulk), 1e-300);

  double err = 0.0, err_lit = 0.0, scale = 0.0;
  for (std::size_t m = 1; m + 1 < S; ++m) {
    const double lhs = (I[m + 1] - I[m - 1]) / (trace.u_stored[m + 1] - trace.u_stored[m - 1]);
    err = std::max(err, std::abs(lhs - rhs[m]));
    err_lit = std::max(err_lit, std::abs(lhs - rhs_lit[m]));
    scale = std::max(scale, std::abs(lhs));
  }
  rep.du_mismatch = err / std::max(scale, 1e-300);
  rep.du_mismatch_literal = err_lit / std::max(scale, 1e-300);
  rep.du_step = trace.u_stored[1] - trace.u_stored[0];
  return rep;
}

double eikonal_residual(const Background& bg, const PhaseField& F, double r) {
  if (!F.has_leaf_data) throw Error(ErrorKind::InvalidConfig, "eikonal residual needs leaf data");
  const Grid3& g3 = F.grid;
  const double h = g3.spacing;
  double worst = 0.0;
  for (int k = 1; k + 1 < g3.nz; ++k)
    for (int j = 1; j + 1 < g3.ny; ++j)
      for (int i = 1; i + 1 < g3.nx; ++i) {
        const Vec3 x = g3.point(i, j, k);
        if (x.norm() > r + 1e-12) continue;
        const Vec3 grad((F.u[g3.index(i + 1, j, k)] - F.u[g3.index(i - 1, j, k)]) / (2 * h),
                        (F.u[g3.index(i, j + 1, k)] - F.u[g3.index(i, j - 1, k)]) / (2 * h),
                        (F.u[g3.index(i, j, k + 1)] - F.u[g3.index(i, j, k - 1)]) / (2 * h));
        const Mat3 gi = bg.metric(x).inverse();
        const double n = std::sqrt(grad.dot(gi * grad));
        worst = std::max(worst, std::abs(n * F.a[g3.index(i, j, k)] - 1.0));
      }
  return worst;
}

}  // namespace eikon
