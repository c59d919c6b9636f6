#include "eikon/lpcalc.hpp"

#include "eikon/error.hpp"
#include "eikon/parallel.hpp"

#include <lapacke.h>

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace eikon {

namespace {

using Vec = std::vector<double>;

Eigen::Map<const Eigen::VectorXd> view(const Vec& f) { return {f.data(), static_cast<Eigen::Index>(f.size())}; }

Vec to_vec(const Eigen::VectorXd& v) { return Vec(v.data(), v.data() + v.size()); }

// Fourier collocation derivative on n (odd) equispaced periodic nodes.
Eigen::MatrixXd spectral_matrix(int n, double period) {
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, n);
  const double h = 2.0 * M_PI / n;
  const double scale = 2.0 * M_PI / period;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const int k = i - j;
      D(i, j) = scale * 0.5 * ((k % 2 == 0) ? 1.0 : -1.0) / std::sin(0.5 * k * h);
    }
  return D;
}

inline double sym_norm2(const Mat2& gi, const Mat2& F) { return (gi * F * gi * F.transpose()).trace(); }

}  // namespace

// ---------------------------------------------------------------------------
// Surface2D

std::vector<double> Surface2D::derivative(const std::vector<double>& f, int axis) const {
  Vec out(size(), 0.0);
  const double h = spacing();
  if (scheme == Differencing::Central) {
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const std::size_t p = axis == 0 ? index((i + 1) % n, j) : index(i, (j + 1) % n);
        const std::size_t m = axis == 0 ? index((i + n - 1) % n, j) : index(i, (j + n - 1) % n);
        out[index(i, j)] = (f[p] - f[m]) / (2.0 * h);
      }
    return out;
  }
  if (!dmat_) dmat_ = std::make_shared<Eigen::MatrixXd>(spectral_matrix(n, period));
  const Eigen::MatrixXd& D = *dmat_;
  Eigen::Map<const Eigen::MatrixXd> F(f.data(), n, n);  // F(i, j), i fastest
  Eigen::Map<Eigen::MatrixXd> O(out.data(), n, n);
  if (axis == 0)
    O.noalias() = D * F;
  else
    O.noalias() = F * D.transpose();
  return out;
}

void Surface2D::finish() {
  if (n < 3) throw Error(ErrorKind::InvalidConfig, "surface needs at least 3 nodes per side");
  if (scheme == Differencing::Spectral && n % 2 == 0)
    throw Error(ErrorKind::InvalidConfig, "spectral differencing needs an odd node count, got " + std::to_string(n));
  const std::size_t N = size();
  gamma_inv.resize(N);
  sqrt_gamma.resize(N);
  for (std::size_t k = 0; k < N; ++k) {
    const Mat2& g = gamma[k];
    const double det = g.determinant();
    if (!(g(0, 0) > 0.0 && det > 0.0) || std::abs(g(0, 1) - g(1, 0)) > 1e-12)
      throw Error(ErrorKind::DegenerateMetric, "surface metric not SPD at node " + std::to_string(k));
    gamma_inv[k] = g.inverse();
    sqrt_gamma[k] = std::sqrt(det);
  }
  // dg[C][A][B] = d_C gamma_AB
  Vec comp(N);
  std::array<std::array<std::array<Vec, 2>, 2>, 2> dg;
  for (int A = 0; A < 2; ++A)
    for (int B = A; B < 2; ++B) {
      for (std::size_t k = 0; k < N; ++k) comp[k] = gamma[k](A, B);
      for (int C = 0; C < 2; ++C) {
        dg[C][A][B] = derivative(comp, C);
        if (A != B) dg[C][B][A] = dg[C][A][B];
      }
    }
  christoffel.assign(N, {Mat2::Zero(), Mat2::Zero()});
  for (std::size_t k = 0; k < N; ++k)
    for (int C = 0; C < 2; ++C)
      for (int A = 0; A < 2; ++A)
        for (int B = 0; B < 2; ++B) {
          double s = 0.0;
          for (int D = 0; D < 2; ++D)
            s += gamma_inv[k](C, D) * (dg[A][D][B][k] + dg[B][D][A][k] - dg[D][A][B][k]);
          christoffel[k][C](A, B) = 0.5 * s;
        }
  // K det(gamma) = gamma_1A (d_1 G^A_22 - d_2 G^A_12 + G^A_1E G^E_22 - G^A_2E G^E_12)
  std::array<Vec, 2> G22, G12;
  for (int A = 0; A < 2; ++A) {
    G22[A].resize(N);
    G12[A].resize(N);
    for (std::size_t k = 0; k < N; ++k) {
      G22[A][k] = christoffel[k][A](1, 1);
      G12[A][k] = christoffel[k][A](0, 1);
    }
  }
  std::array<Vec, 2> d1G22, d2G12;
  for (int A = 0; A < 2; ++A) {
    d1G22[A] = derivative(G22[A], 0);
    d2G12[A] = derivative(G12[A], 1);
  }
  K.resize(N);
  for (std::size_t k = 0; k < N; ++k) {
    const auto& G = christoffel[k];
    double r = 0.0;
    for (int A = 0; A < 2; ++A) {
      double RA = d1G22[A][k] - d2G12[A][k];
      for (int E = 0; E < 2; ++E) RA += G[A](0, E) * G[E](1, 1) - G[A](1, E) * G[E](0, 1);
      r += gamma[k](0, A) * RA;
    }
    K[k] = r / gamma[k].determinant();
  }
}

Surface2D Surface2D::from_metric(int n, double period, Differencing scheme,
                                 const std::function<Mat2(const Vec2&)>& metric) {
  Surface2D s;
  s.n = n;
  s.period = period;
  s.scheme = scheme;
  s.gamma.resize(s.size());
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) s.gamma[s.index(i, j)] = metric(s.point(i, j));
  s.finish();
  return s;
}

Surface2D Surface2D::flat_torus(int n, double period, Differencing scheme) {
  return from_metric(n, period, scheme, [](const Vec2&) { return Mat2::Identity(); });
}

Surface2D Surface2D::perturbed_torus(int n, double eps, double period, Differencing scheme) {
  const double w = 2.0 * M_PI / period;
  return from_metric(n, period, scheme, [eps, w](const Vec2& q) {
    const double x = w * q.x(), y = w * q.y();
    Mat2 P;
    P(0, 0) = 0.6 * std::sin(x) * std::cos(y);
    P(0, 1) = P(1, 0) = 0.3 * std::cos(x - y);
    P(1, 1) = -0.5 * std::cos(x) * std::sin(2.0 * y);
    return Mat2(Mat2::Identity() + eps * P);
  });
}

Surface2D Surface2D::from_leaf(const Background& bg, const FoliationTrace& trace, std::size_t leaf, int n,
                               Differencing scheme) {
  if (leaf >= trace.h_stored.size()) throw Error(ErrorKind::InsufficientLeaves, "no stored leaf " + std::to_string(leaf));
  const LeafGrid& G = trace.grid;
  const double L = G.half_width;
  const double u = trace.u_stored[leaf];
  const std::vector<double>& hs = trace.h_stored[leaf];
  Surface2D s;
  s.n = n;
  s.period = 2.0 * L;
  s.origin = Vec2(-L, -L);
  s.scheme = scheme;
  const std::size_t N = s.size();
  Vec w(N);  // h - u, periodic because the collar is pinned at u
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const Vec2 q = s.point(i, j);
      const Stencil1 a = lagrange_stencil((q.x() + L) / G.dq, G.n, 6);
      const Stencil1 b = lagrange_stencil((q.y() + L) / G.dq, G.n, 6);
      double v = 0.0;
      for (int jj = 0; jj < b.npts; ++jj)
        for (int ii = 0; ii < a.npts; ++ii) v += a.w[ii] * b.w[jj] * hs[G.index(a.start + ii, b.start + jj)];
      w[s.index(i, j)] = v - u;
    }
  const Vec w1 = s.derivative(w, 0), w2 = s.derivative(w, 1);
  s.gamma.resize(N);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const std::size_t k = s.index(i, j);
      const Vec2 q = s.point(i, j);
      const Vec3 X = q.x() * G.t1 + q.y() * G.t2 + (u + w[k]) * G.omega;
      const Mat3 g = bg.metric(X);
      const Vec3 e1 = G.t1 + w1[k] * G.omega, e2 = G.t2 + w2[k] * G.omega;
      Mat2 gm;
      gm(0, 0) = e1.dot(g * e1);
      gm(0, 1) = gm(1, 0) = e1.dot(g * e2);
      gm(1, 1) = e2.dot(g * e2);
      s.gamma[k] = gm;
    }
  s.finish();
  return s;
}

double Surface2D::integrate(const std::vector<double>& f) const {
  double s = 0.0;
  for (std::size_t k = 0; k < size(); ++k) s += f[k] * sqrt_gamma[k];
  return s * spacing() * spacing();
}

double Surface2D::area() const { return integrate(Vec(size(), 1.0)); }

double Surface2D::norm(const std::vector<double>& f, double p) const {
  if (p <= 0.0) {
    double m = 0.0;
    for (double v : f) m = std::max(m, std::abs(v));
    return m;
  }
  Vec g(size());
  for (std::size_t k = 0; k < size(); ++k) g[k] = std::pow(std::abs(f[k]), p);
  return std::pow(integrate(g), 1.0 / p);
}

double Surface2D::inner(const std::vector<double>& f, const std::vector<double>& g) const {
  Vec fg(size());
  for (std::size_t k = 0; k < size(); ++k) fg[k] = f[k] * g[k];
  return integrate(fg);
}

std::vector<double> Surface2D::gradient_norm(const std::vector<double>& f) const {
  const Vec f1 = derivative(f, 0), f2 = derivative(f, 1);
  Vec out(size());
  for (std::size_t k = 0; k < size(); ++k) {
    const Vec2 df(f1[k], f2[k]);
    out[k] = std::sqrt(std::max(0.0, df.dot(gamma_inv[k] * df)));
  }
  return out;
}

std::vector<double> Surface2D::laplacian(const std::vector<double>& f) const {
  const Vec f1 = derivative(f, 0), f2 = derivative(f, 1);
  Vec v1(size()), v2(size());
  for (std::size_t k = 0; k < size(); ++k) {
    const Vec2 w = sqrt_gamma[k] * (gamma_inv[k] * Vec2(f1[k], f2[k]));
    v1[k] = w.x();
    v2[k] = w.y();
  }
  const Vec d1 = derivative(v1, 0), d2 = derivative(v2, 1);
  Vec out(size());
  for (std::size_t k = 0; k < size(); ++k) out[k] = (d1[k] + d2[k]) / sqrt_gamma[k];
  return out;
}

std::vector<double> Surface2D::sample(const std::function<double(const Vec2&)>& f) const {
  Vec out(size());
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) out[index(i, j)] = f(point(i, j));
  return out;
}

// ---------------------------------------------------------------------------
// HeatFrame

HeatFrame::HeatFrame(const Surface2D& surface, std::size_t dense_limit) : surface_(surface) {
  const Surface2D& s = surface_;
  const std::size_t N = s.size();
  const double h2 = s.spacing() * s.spacing();
  mass_.resize(N);
  for (std::size_t k = 0; k < N; ++k) mass_[k] = s.sqrt_gamma[k] * h2;
  spectral_ = N <= dense_limit;

  if (!spectral_) {
    // Stepper path: second-order central operator assembled sparsely.
    const int n = s.n;
    const double h = s.spacing();
    std::array<Eigen::SparseMatrix<double>, 2> D;
    for (int axis = 0; axis < 2; ++axis) {
      std::vector<Eigen::Triplet<double>> t;
      t.reserve(2 * N);
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
          const std::size_t r = s.index(i, j);
          const std::size_t p = axis == 0 ? s.index((i + 1) % n, j) : s.index(i, (j + 1) % n);
          const std::size_t m = axis == 0 ? s.index((i + n - 1) % n, j) : s.index(i, (j + n - 1) % n);
          t.emplace_back(r, p, 0.5 / h);
          t.emplace_back(r, m, -0.5 / h);
        }
      D[axis].resize(N, N);
      D[axis].setFromTriplets(t.begin(), t.end());
    }
    Eigen::SparseMatrix<double> A(N, N);
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        Eigen::VectorXd w(N);
        for (std::size_t k = 0; k < N; ++k) w[k] = s.sqrt_gamma[k] * s.gamma_inv[k](a, b) * h2;
        A += Eigen::SparseMatrix<double>(D[a].transpose()) * w.asDiagonal() * D[b];
      }
    sparse_stiffness_ = A;
    const Eigen::SparseMatrix<double> At = A.transpose();
    asym_ = (A - At).norm() / A.norm();
    // Gershgorin bound on M^{-1} A for the level cut-off.
    Eigen::VectorXd rowsum = Eigen::VectorXd::Zero(N);
    for (int c = 0; c < A.outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator it(A, c); it; ++it) rowsum[it.row()] += std::abs(it.value());
    lambda_max_ = (rowsum.array() / mass_.array()).maxCoeff();
    return;
  }

  // A = -M L assembled column by column from the surface differencing.
  stiffness_.resize(N, N);
  parallel_for(N, [&](std::size_t c) {
    Vec e(N, 0.0);
    e[c] = 1.0;
    const Vec Le = s.laplacian(e);
    for (std::size_t r = 0; r < N; ++r) stiffness_(r, c) = -mass_[r] * Le[r];
  });
  asym_ = (stiffness_ - stiffness_.transpose()).norm() / stiffness_.norm();
  stiffness_ = 0.5 * (stiffness_ + stiffness_.transpose()).eval();

  const Eigen::VectorXd isq = mass_.array().rsqrt();
  Eigen::MatrixXd S = isq.asDiagonal() * stiffness_ * isq.asDiagonal();
  lambda_.resize(N);
  const lapack_int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'U', static_cast<lapack_int>(N), S.data(),
                                         static_cast<lapack_int>(N), lambda_.data());
  if (info != 0) throw Error(ErrorKind::SpectralUnavailable, "dsyevd failed with info " + std::to_string(info));
  // Round-off negatives of the null mode.
  lambda_ = lambda_.cwiseMax(0.0);
  phi_ = isq.asDiagonal() * S;
  lambda_max_ = lambda_.maxCoeff();
}

std::vector<double> HeatFrame::apply_symbol(const std::vector<double>& f, const std::function<double(double)>& s) const {
  if (!spectral_) throw Error(ErrorKind::SpectralUnavailable, "frame has no eigenbasis (stepper path)");
  Eigen::VectorXd c = phi_.transpose() * (mass_.array() * view(f).array()).matrix();
  for (Eigen::Index i = 0; i < c.size(); ++i) c[i] *= s(lambda_[i]);
  return to_vec(phi_ * c);
}

std::vector<double> HeatFrame::laplacian(const std::vector<double>& f) const {
  Eigen::VectorXd Af = spectral_ ? Eigen::VectorXd(stiffness_ * view(f)) : Eigen::VectorXd(sparse_stiffness_ * view(f));
  return to_vec(-(Af.array() / mass_.array()).matrix());
}

double HeatFrame::eigen_residual() const {
  if (!spectral_) return 0.0;
  const Eigen::MatrixXd R = (mass_.cwiseInverse().asDiagonal() * (stiffness_ * phi_)) - phi_ * lambda_.asDiagonal();
  double m = 0.0;
  for (Eigen::Index i = 0; i < R.cols(); ++i)
    m = std::max(m, std::sqrt((R.col(i).array().square() * mass_.array()).sum()));
  return m;
}

std::vector<double> HeatFrame::step_heat(const std::vector<double>& f, double tau, int substeps) const {
  if (tau == 0.0) return f;
  substeps = std::max(substeps, 16);
  const double dt = tau / substeps;
  const std::size_t N = surface_.size();
  Eigen::VectorXd x = view(f);
  if (spectral_) {
    Eigen::MatrixXd B = stiffness_ * dt;
    B.diagonal() += mass_;
    const Eigen::LLT<Eigen::MatrixXd> llt(B);
    for (int k = 0; k < substeps; ++k) {
      const Eigen::VectorXd rhs = mass_.cwiseProduct(x);
      x = llt.solve(rhs);
    }
    return to_vec(x);
  }
  Eigen::SparseMatrix<double> B = sparse_stiffness_ * dt;
  Eigen::SparseMatrix<double> Mdiag(N, N);
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t k = 0; k < N; ++k) t.emplace_back(k, k, mass_[k]);
  Mdiag.setFromTriplets(t.begin(), t.end());
  B += Mdiag;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(B);
  if (ldlt.info() != Eigen::Success) throw Error(ErrorKind::DegenerateMetric, "heat step matrix not factorisable");
  for (int k = 0; k < substeps; ++k) {
    const Eigen::VectorXd rhs = mass_.cwiseProduct(x);
    x = ldlt.solve(rhs);
  }
  return to_vec(x);
}

std::vector<double> heat_evolve(const HeatFrame& frame, const std::vector<double>& f, double tau) {
  if (tau < 0.0) throw Error(ErrorKind::InvalidConfig, "negative heat time");
  if (tau == 0.0) return f;
  if (frame.spectral()) return frame.apply_symbol(f, [tau](double l) { return std::exp(-l * tau); });
  return frame.step_heat(f, tau, 16);
}

// ---------------------------------------------------------------------------
// LP projections

LPSettings resolve(const LPSettings& s, const HeatFrame& frame) {
  LPSettings r = s;
  const double lmax = frame.lambda_max();
  if (r.J < 0) {
    r.J = 0;
    while (lmax * std::pow(4.0, -(r.J + 1)) > r.tail_tol) ++r.J;
  } else if (frame.spectral() && lmax * std::pow(4.0, -(r.J + 1)) > r.tail_tol) {
    std::ostringstream os;
    os << "J = " << r.J << " leaves a partition tail of " << lmax * std::pow(4.0, -(r.J + 1)) << " > " << r.tail_tol;
    throw Error(ErrorKind::InvalidConfig, os.str());
  }
  return r;
}

double lp_symbol(int j, double lambda) {
  return std::exp(-lambda * std::pow(4.0, -(j + 1))) - std::exp(-lambda * std::pow(4.0, -j));
}

double lp_low_symbol(double lambda) { return std::exp(-lambda); }

std::vector<double> lp_project(const HeatFrame& frame, const LPSettings& s, const std::vector<double>& f, int j) {
  if (j < 0 || (s.J >= 0 && j > s.J))
    throw Error(ErrorKind::LevelOutOfRange, "level " + std::to_string(j) + " outside [0, " + std::to_string(s.J) + "]");
  if (frame.spectral()) return frame.apply_symbol(f, [j](double l) { return lp_symbol(j, l); });
  const Vec a = frame.step_heat(f, std::pow(4.0, -(j + 1)));
  const Vec b = frame.step_heat(f, std::pow(4.0, -j));
  Vec out(f.size());
  for (std::size_t k = 0; k < f.size(); ++k) out[k] = a[k] - b[k];
  return out;
}

std::vector<double> lp_low(const HeatFrame& frame, const LPSettings&, const std::vector<double>& f) {
  return heat_evolve(frame, f, 1.0);
}

double finite_band_bound() {
  const auto m = [](double s) { return s * (std::exp(-s / 4.0) - std::exp(-s)); };
  double best = 0.0, arg = 0.0;
  for (int i = 0; i <= 4000; ++i) {
    const double s = 0.01 * i;
    if (m(s) > best) best = m(s), arg = s;
  }
  double a = std::max(0.0, arg - 0.01), b = arg + 0.01;
  const double r = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int it = 0; it < 200 && b - a > 1e-14; ++it) {
    const double c = b - r * (b - a), d = a + r * (b - a);
    if (m(c) > m(d))
      b = d;
    else
      a = c;
  }
  return m(0.5 * (a + b));
}

double bessel_symbol_bound(double lambda_max, int J) {
  const auto total = [J](double l) {
    double t = 0.0;
    for (int j = 0; j <= J; ++j) t += lp_symbol(j, l) * lp_symbol(j, l);
    return t;
  };
  double m = total(0.0);
  const int n = 20000;
  const double lo = 1e-6, hi = std::max(lambda_max, 1e-6);
  for (int i = 0; i <= n; ++i) m = std::max(m, total(lo * std::pow(hi / lo, static_cast<double>(i) / n)));
  return m;
}

LPBattery lp_property_battery(const HeatFrame& frame, const LPSettings& s0,
                              const std::vector<std::pair<std::string, std::vector<double>>>& probes) {
  const LPSettings s = resolve(s0, frame);
  const Surface2D& S = frame.surface();
  LPBattery r;
  r.c_star = finite_band_bound();
  r.bessel_symbol = bessel_symbol_bound(frame.lambda_max(), s.J);
  if (frame.spectral())
    for (Eigen::Index i = 0; i < frame.eigenvalues().size(); ++i) {
      double t = 0.0;
      for (int j = 0; j <= s.J; ++j) t += std::pow(lp_symbol(j, frame.eigenvalues()[i]), 2);
      r.bessel_symbol = std::max(r.bessel_symbol, t);
    }
  r.rows.push_back({"bessel_symbol", "all", r.bessel_symbol, 1.0, r.bessel_symbol <= 1.0});
  r.c_bern.assign(r.bern_p.size(), 0.0);
  for (const auto& [name, f] : probes) {
    const double n2 = S.norm(f), n1 = S.norm(f, 1.0), ninf = S.norm(f, 0.0);
    double band = 0.0, bessel = 0.0, lp1 = 0.0, lpinf = 0.0;
    int arg = 0;
    std::vector<double> bern(r.bern_p.size(), 0.0);
    Vec sum = lp_low(frame, s, f);
    for (int j = 0; j <= s.J; ++j) {
      const Vec P = lp_project(frame, s, f, j);
      for (std::size_t k = 0; k < f.size(); ++k) sum[k] += P[k];
      const double b = S.norm(frame.laplacian(P)) / (std::pow(4.0, j) * n2);
      if (b > band) band = b, arg = j;
      const double pn = S.norm(P);
      bessel += pn * pn / (n2 * n2);
      lp1 = std::max(lp1, S.norm(P, 1.0) / n1);
      lpinf = std::max(lpinf, S.norm(P, 0.0) / ninf);
      for (std::size_t i = 0; i < r.bern_p.size(); ++i) {
        const double p = r.bern_p[i];
        bern[i] = std::max(bern[i], S.norm(P, p) / ((std::pow(2.0, (1.0 - 2.0 / p) * j) + 1.0) * n2));
      }
    }
    for (std::size_t k = 0; k < f.size(); ++k) sum[k] -= f[k];
    const double part = S.norm(sum) / n2;

    r.c_band = std::max(r.c_band, band);
    r.c_bessel = std::max(r.c_bessel, bessel);
    r.c_lp_1 = std::max(r.c_lp_1, lp1);
    r.c_lp_inf = std::max(r.c_lp_inf, lpinf);
    r.partition = std::max(r.partition, part);
    r.band_argmax.push_back(arg);
    r.rows.push_back({"finite_band", name, band, r.c_star + 1e-6, band <= r.c_star + 1e-6});
    r.rows.push_back({"bessel", name, bessel, 1.0 + 1e-8, bessel <= 1.0 + 1e-8});
    r.rows.push_back({"partition", name, part, 1e-6, part <= 1e-6});
    for (std::size_t i = 0; i < r.bern_p.size(); ++i) {
      r.c_bern[i] = std::max(r.c_bern[i], bern[i]);
      std::ostringstream os;
      os << "weak_bernstein_p" << r.bern_p[i];
      r.rows.push_back({os.str(), name, bern[i], 0.0, true});
    }
    r.rows.push_back({"lp_bound_p1", name, lp1, 0.0, true});
    r.rows.push_back({"lp_bound_pinf", name, lpinf, 0.0, true});
  }
  return r;
}

void write_battery_csv(const std::string& path, const std::vector<BatteryRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out.precision(12);
  out << "property,probe,measured_constant,tolerance,pass\n";
  for (const auto& r : rows)
    out << r.property << ',' << r.probe << ',' << r.value << ',' << r.tolerance << ','
        << (r.tolerance > 0.0 ? (r.pass ? "PASS" : "FAIL") : "REPORT") << '\n';
}

// ---------------------------------------------------------------------------
// Fractional powers and norms

std::vector<double> lambda_alpha(const HeatFrame& frame, const std::vector<double>& f, double alpha,
                                 LambdaMethod method, const LPSettings& s) {
  if (alpha == 0.0) return f;
  if (method == LambdaMethod::Spectral)
    return frame.apply_symbol(f, [alpha](double l) { return std::pow(1.0 + l, 0.5 * alpha); });

  if (alpha >= 0.0) throw Error(ErrorKind::QuadratureUnsupported, "Gamma-integral route needs alpha < 0");
  const double b = -0.5 * alpha;  // integrand tau^{b-1} e^{-tau} U(tau) f
  const int m = std::max(2, s.quad_nodes);
  const double s0 = std::log(s.quad_tau_min), s1 = std::log(s.quad_tau_max);
  const double ds = (s1 - s0) / (m - 1);
  Vec out(f.size(), 0.0);
  // Below tau_min the heat flow is the identity to first order.
  const double tail = std::pow(s.quad_tau_min, b) / b;
  for (std::size_t k = 0; k < f.size(); ++k) out[k] = tail * f[k];
  Vec U = f;
  double tau_prev = 0.0;
  for (int i = 0; i < m; ++i) {
    const double tau = std::exp(s0 + i * ds);
    if (frame.spectral()) {
      U = heat_evolve(frame, f, tau);
    } else {
      U = frame.step_heat(U, tau - tau_prev);
      tau_prev = tau;
    }
    const double w = ((i == 0 || i == m - 1) ? 0.5 : 1.0) * ds * std::pow(tau, b) * std::exp(-tau);
    for (std::size_t k = 0; k < f.size(); ++k) out[k] += w * U[k];
  }
  const double g = std::tgamma(b);
  for (double& v : out) v /= g;
  return out;
}

double sobolev_norm(const HeatFrame& frame, const LPSettings& s0, const std::vector<double>& f, double b) {
  if (std::abs(b) > 4.0) throw Error(ErrorKind::InvalidConfig, "Sobolev index outside [-4, 4]");
  const LPSettings s = resolve(s0, frame);
  const Surface2D& S = frame.surface();
  const double low = S.norm(lp_low(frame, s, f));
  double t = low * low;
  for (int j = 0; j <= s.J; ++j) {
    const double p = S.norm(lp_project(frame, s, f, j));
    t += std::pow(4.0, j * b) * p * p;
  }
  return std::sqrt(t);
}

std::pair<double, double> sobolev_equivalence(const HeatFrame& frame, const LPSettings& s0) {
  if (!frame.spectral()) throw Error(ErrorKind::SpectralUnavailable, "equivalence constants need the eigenbasis");
  const LPSettings s = resolve(s0, frame);
  double lo = 1e300, hi = 0.0;
  for (Eigen::Index i = 0; i < frame.eigenvalues().size(); ++i) {
    const double l = frame.eigenvalues()[i];
    double t = lp_low_symbol(l) * lp_low_symbol(l);
    for (int j = 0; j <= s.J; ++j) t += lp_symbol(j, l) * lp_symbol(j, l);
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  return {std::sqrt(lo), std::sqrt(hi)};
}

BesovReport besov_norm(const std::vector<const HeatFrame*>& frames, const std::vector<std::vector<double>>& F,
                       const LPSettings& s0) {
  if (frames.empty() || frames.size() != F.size())
    throw Error(ErrorKind::InsufficientLeaves, "Besov norm needs one field per leaf frame");
  BesovReport r;
  r.J = s0.J;
  if (r.J < 0)
    for (const HeatFrame* fr : frames) r.J = std::max(r.J, resolve(s0, *fr).J);
  LPSettings s = s0;
  s.J = r.J;
  std::vector<double> level(r.J + 1, 0.0);
  double low = 0.0, rem = 0.0;
  for (std::size_t l = 0; l < frames.size(); ++l) {
    const HeatFrame& fr = *frames[l];
    const Surface2D& S = fr.surface();
    low = std::max(low, S.norm(lp_low(fr, s, F[l])));
    for (int j = 0; j <= r.J; ++j) level[j] = std::max(level[j], S.norm(lp_project(fr, s, F[l], j)));
    Vec tail = heat_evolve(fr, F[l], std::pow(4.0, -(r.J + 1)));
    for (std::size_t k = 0; k < tail.size(); ++k) tail[k] = F[l][k] - tail[k];
    rem = std::max(rem, S.norm(tail));
  }
  r.value = low;
  for (int j = 0; j <= r.J; ++j) r.value += std::pow(2.0, j) * level[j];
  r.tail = std::pow(2.0, r.J + 1) * rem;
  return r;
}

// ---------------------------------------------------------------------------
// Integral identities

namespace {

IdentitySides sides(double lhs, double rhs) {
  return {lhs, rhs, std::abs(lhs - rhs) / (std::abs(lhs) + std::abs(rhs) + 1e-30)};
}

// Covariant Hessian components H[A][B] of a scalar.
std::array<std::array<Vec, 2>, 2> hessian(const Surface2D& s, const Vec& f, std::array<Vec, 2>& df) {
  df = {s.derivative(f, 0), s.derivative(f, 1)};
  std::array<std::array<Vec, 2>, 2> H;
  H[0][0] = s.derivative(df[0], 0);
  H[0][1] = s.derivative(df[1], 0);
  H[1][1] = s.derivative(df[1], 1);
  H[1][0] = H[0][1];
  for (std::size_t k = 0; k < s.size(); ++k)
    for (int A = 0; A < 2; ++A)
      for (int B = A; B < 2; ++B) {
        double c = 0.0;
        for (int C = 0; C < 2; ++C) c += s.christoffel[k][C](A, B) * df[C][k];
        H[A][B][k] -= c;
        if (A != B) H[B][A][k] = H[A][B][k];
      }
  return H;
}

}  // namespace

IdentitySides bochner_identity(const Surface2D& s, const std::vector<double>& f) {
  std::array<Vec, 2> df;
  const auto H = hessian(s, f, df);
  const Vec lap = s.laplacian(f);
  Vec hess2(s.size()), lap2(s.size()), kgrad(s.size());
  for (std::size_t k = 0; k < s.size(); ++k) {
    Mat2 Hk;
    Hk << H[0][0][k], H[0][1][k], H[1][0][k], H[1][1][k];
    hess2[k] = sym_norm2(s.gamma_inv[k], Hk);
    lap2[k] = lap[k] * lap[k];
    const Vec2 g(df[0][k], df[1][k]);
    kgrad[k] = s.K[k] * g.dot(s.gamma_inv[k] * g);
  }
  return sides(s.integrate(hess2), s.integrate(lap2) - s.integrate(kgrad));
}

IdentitySides bochner_identity_1form(const Surface2D& s, const std::vector<double>& F1, const std::vector<double>& F2) {
  for (double k : s.K)
    if (std::abs(k) > 1e-10) throw Error(ErrorKind::InvalidConfig, "1-form Bochner check is restricted to flat surfaces");
  double lhs = 0.0, rhs = 0.0;
  for (const Vec* F : {&F1, &F2}) {
    std::array<Vec, 2> df;
    const auto H = hessian(s, *F, df);
    const Vec lap = s.laplacian(*F);
    Vec h2(s.size()), l2(s.size());
    for (std::size_t k = 0; k < s.size(); ++k) {
      Mat2 Hk;
      Hk << H[0][0][k], H[0][1][k], H[1][0][k], H[1][1][k];
      h2[k] = sym_norm2(s.gamma_inv[k], Hk);
      l2[k] = lap[k] * lap[k];
    }
    lhs += s.integrate(h2);
    rhs += s.integrate(l2);
  }
  return sides(lhs, rhs);
}

IdentitySides hodge_identity(const Surface2D& s, const std::vector<Mat2>& F) {
  const std::size_t N = s.size();
  for (std::size_t k = 0; k < N; ++k) {
    const double tr = (s.gamma_inv[k] * F[k]).trace();
    const double mag = std::sqrt(std::max(0.0, sym_norm2(s.gamma_inv[k], F[k])));
    if (std::abs(tr) > 1e-10 * mag || !std::isfinite(tr))
      throw Error(ErrorKind::NotTraceless, "tr F = " + std::to_string(tr) + " at node " + std::to_string(k));
  }
  // dF[C][A][B]
  std::array<std::array<std::array<Vec, 2>, 2>, 2> dF;
  Vec comp(N);
  for (int A = 0; A < 2; ++A)
    for (int B = A; B < 2; ++B) {
      for (std::size_t k = 0; k < N; ++k) comp[k] = F[k](A, B);
      for (int C = 0; C < 2; ++C) {
        dF[C][A][B] = s.derivative(comp, C);
        if (A != B) dF[C][B][A] = dF[C][A][B];
      }
    }
  Vec grad2(N), kF(N), div2(N);
  for (std::size_t k = 0; k < N; ++k) {
    const auto& G = s.christoffel[k];
    const Mat2& gi = s.gamma_inv[k];
    std::array<Mat2, 2> DF;  // DF[C](A, B) = nabla_C F_AB
    for (int C = 0; C < 2; ++C)
      for (int A = 0; A < 2; ++A)
        for (int B = 0; B < 2; ++B) {
          double v = dF[C][A][B][k];
          for (int D = 0; D < 2; ++D) v -= G[D](C, A) * F[k](D, B) + G[D](C, B) * F[k](A, D);
          DF[C](A, B) = v;
        }
    double g2 = 0.0;
    for (int C = 0; C < 2; ++C)
      for (int Cp = 0; Cp < 2; ++Cp) g2 += gi(C, Cp) * (gi * DF[C] * gi * DF[Cp].transpose()).trace();
    Vec2 div = Vec2::Zero();
    for (int B = 0; B < 2; ++B)
      for (int A = 0; A < 2; ++A)
        for (int C = 0; C < 2; ++C) div[B] += gi(A, C) * DF[C](A, B);
    grad2[k] = g2;
    kF[k] = 2.0 * s.K[k] * sym_norm2(gi, F[k]);
    div2[k] = 2.0 * div.dot(gi * div);
  }
  return sides(s.integrate(grad2) + s.integrate(kF), s.integrate(div2));
}

double bochner_residual(const Surface2D& s, const std::vector<double>& f) { return bochner_identity(s, f).residual; }

double bochner_residual_1form(const Surface2D& s, const std::vector<double>& F1, const std::vector<double>& F2) {
  return bochner_identity_1form(s, F1, F2).residual;
}

double hodge_residual(const Surface2D& s, const std::vector<Mat2>& F) { return hodge_identity(s, F).residual; }

InequalityReport inequality_ratios(const Surface2D& s,
                                   const std::vector<std::pair<std::string, std::vector<double>>>& probes,
                                   double p) {
  if (probes.empty()) throw Error(ErrorKind::InvalidConfig, "inequality ratios need at least one probe");
  InequalityReport r;
  for (const auto& [name, f] : probes) {
    const Vec g = s.gradient_norm(f);
    const double f1 = s.norm(f, 1.0), f2 = s.norm(f), fp = s.norm(f, p), finf = s.norm(f, 0.0);
    const double g1 = s.norm(g, 1.0), g2 = s.norm(g), gp = s.norm(g, p);
    r.probes.push_back(name);
    r.isoperimetric.push_back(f2 / (g1 + f1));
    r.gagliardo.push_back(fp / (std::pow(g2, 1.0 - 2.0 / p) * std::pow(f2, 2.0 / p) + f2));
    r.sup.push_back(finf / (gp + fp));
    r.max_isoperimetric = std::max(r.max_isoperimetric, r.isoperimetric.back());
    r.max_gagliardo = std::max(r.max_gagliardo, r.gagliardo.back());
    r.max_sup = std::max(r.max_sup, r.sup.back());
  }
  return r;
}

}  // namespace eikon
