#include "eikon/background.hpp"

#include "eikon/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace eikon {

namespace {

// Flat collar starts here for every admissible background.
constexpr double kFlatRadius = 2.0;

void zero(Sym3Array& a) {
  for (auto& m : a) m.setZero();
}

Mat3 kshape_default() {
  Mat3 k;
  k << 0.30, 0.10, 0.00,
       0.10, -0.20, 0.15,
       0.00, 0.15, -0.10;
  return k;
}

}  // namespace

MetricJet::MetricJet() {
  for (auto& row : ddg) zero(row);
}

Family parse_family(const std::string& name) {
  if (name == "flat") return Family::Flat;
  if (name == "bump") return Family::Bump;
  if (name == "table" || name == "custom-table") return Family::Table;
  throw Error(ErrorKind::InvalidConfig, "unknown background family '" + name + "'");
}

const char* family_name(Family f) {
  switch (f) {
    case Family::Flat: return "flat";
    case Family::Bump: return "bump";
    case Family::Table: return "table";
  }
  return "?";
}

Mat3 bump_shape() {
  Mat3 m;
  m << 0.55, 0.30, -0.20,
       0.30, 0.10, 0.25,
       -0.20, 0.25, -0.35;
  return m;
}

void bump_profile(double s, double& psi, double& dpsi, double& d2psi) {
  if (s >= 1.0) {
    psi = dpsi = d2psi = 0.0;
    return;
  }
  const double w = 1.0 - s;
  const double w2 = w * w;
  const double w4 = w2 * w2;
  psi = w4 * w2;
  dpsi = -6.0 * w4 * w;
  d2psi = 30.0 * w4;
}

bool Background::is_flat() const {
  switch (params_.family) {
    case Family::Flat: return true;
    case Family::Bump: return params_.epsilon == 0.0 && params_.extrinsic_amplitude == 0.0;
    case Family::Table: return false;
  }
  return false;
}

bool Background::flat_at(const Vec3& x) const {
  switch (params_.family) {
    case Family::Flat: return true;
    case Family::Bump: {
      if (is_flat()) return true;
      const double rho = params_.support_radius;
      return x.squaredNorm() >= rho * rho;
    }
    case Family::Table: return x.norm() >= kFlatRadius + 2.0 * gtable_->grid.spacing;
  }
  return false;
}

Mat3 Background::table_value(const Field3& t, const Vec3& x) const {
  if (!t.grid.contains(x)) return Mat3::Zero();
  const Stencil3 s = make_stencil(t.grid, x, 4);
  double c[6];
  for (int i = 0; i < 6; ++i) c[i] = apply(t, s, i);
  return sym_from6(c);
}

Mat3 Background::metric(const Vec3& x) const {
  switch (params_.family) {
    case Family::Flat: return Mat3::Identity();
    case Family::Bump: {
      const double rho = params_.support_radius;
      double psi, dpsi, d2psi;
      bump_profile(x.squaredNorm() / (rho * rho), psi, dpsi, d2psi);
      return Mat3::Identity() + params_.epsilon * psi * shape_;
    }
    case Family::Table:
      if (!gtable_->grid.contains(x)) return Mat3::Identity();
      return table_value(*gtable_, x);
  }
  return Mat3::Identity();
}

Mat3 Background::extrinsic(const Vec3& x) const {
  switch (params_.family) {
    case Family::Flat: return Mat3::Zero();
    case Family::Bump: {
      if (params_.extrinsic_amplitude == 0.0) return Mat3::Zero();
      const double rho = params_.support_radius;
      double psi, dpsi, d2psi;
      bump_profile(x.squaredNorm() / (rho * rho), psi, dpsi, d2psi);
      if (psi == 0.0) return Mat3::Zero();
      // Remove the g-trace so that tr_g k = 0 holds pointwise.
      const Mat3 g = metric(x);
      const double tr = (g.inverse() * kshape_).trace();
      return params_.extrinsic_amplitude * psi * (kshape_ - (tr / 3.0) * g);
    }
    case Family::Table:
      if (!ktable_) return Mat3::Zero();
      return table_value(*ktable_, x);
  }
  return Mat3::Zero();
}

void Background::metric_and_gradient(const Vec3& x, Mat3& g, Sym3Array& dg) const {
  if (params_.family == Family::Bump) {
    const double rho = params_.support_radius;
    double psi, dpsi, d2psi;
    const double r2 = 1.0 / (rho * rho);
    bump_profile(x.squaredNorm() * r2, psi, dpsi, d2psi);
    g = Mat3::Identity() + params_.epsilon * psi * shape_;
    for (int k = 0; k < 3; ++k) dg[k] = (params_.epsilon * dpsi * 2.0 * x[k] * r2) * shape_;
    return;
  }
  if (params_.family == Family::Flat || flat_at(x)) {
    g.setIdentity();
    zero(dg);
    return;
  }
  const MetricJet j = jet(x);
  g = j.g;
  dg = j.dg;
}

MetricJet Background::jet(const Vec3& x) const {
  MetricJet j;
  switch (params_.family) {
    case Family::Flat: return j;
    case Family::Bump: {
      const double rho = params_.support_radius;
      const double r2 = 1.0 / (rho * rho);
      double psi, dpsi, d2psi;
      bump_profile(x.squaredNorm() * r2, psi, dpsi, d2psi);
      const double e = params_.epsilon;
      j.g = Mat3::Identity() + e * psi * shape_;
      for (int k = 0; k < 3; ++k) {
        j.dg[k] = (e * dpsi * 2.0 * x[k] * r2) * shape_;
        for (int l = 0; l < 3; ++l) {
          const double c = d2psi * 4.0 * x[k] * x[l] * r2 * r2 + (k == l ? dpsi * 2.0 * r2 : 0.0);
          j.ddg[k][l] = (e * c) * shape_;
        }
      }
      return j;
    }
    case Family::Table: {
      if (flat_at(x)) return j;
      const double h = gtable_->grid.spacing;
      // Table stencils fall back to the flat collar outside the sampled box.
      const Grid3& tg = gtable_->grid;
      if (!tg.contains(x, h)) {
        std::ostringstream os;
        os << "table stencil at (" << x.transpose() << ") exits the sampled box";
        throw Error(ErrorKind::BoundaryStencil, os.str());
      }
      Mat3 gp, gm;
      j.g = metric(x);
      for (int k = 0; k < 3; ++k) {
        const Vec3 ek = Vec3::Unit(k) * h;
        gp = metric(x + ek);
        gm = metric(x - ek);
        j.dg[k] = (gp - gm) / (2.0 * h);
        j.ddg[k][k] = (gp - 2.0 * j.g + gm) / (h * h);
        for (int l = 0; l < k; ++l) {
          const Vec3 el = Vec3::Unit(l) * h;
          const Mat3 m = (metric(x + ek + el) - metric(x + ek - el) - metric(x - ek + el) +
                          metric(x - ek - el)) / (4.0 * h * h);
          j.ddg[k][l] = m;
          j.ddg[l][k] = m;
        }
      }
      return j;
    }
  }
  return j;
}

MetricJet Background::fd_jet(const Vec3& x, double dx) const {
  const double L = params_.grid.half_width;
  for (int d = 0; d < 3; ++d) {
    if (std::abs(x[d]) + dx > L + 1e-12) {
      std::ostringstream os;
      os << "stencil of width " << dx << " at (" << x.transpose() << ") exits [-" << L << ", " << L << "]^3";
      throw Error(ErrorKind::BoundaryStencil, os.str());
    }
  }
  MetricJet j;
  j.g = metric(x);
  for (int k = 0; k < 3; ++k) {
    const Vec3 ek = Vec3::Unit(k) * dx;
    const Mat3 gp = metric(x + ek);
    const Mat3 gm = metric(x - ek);
    j.dg[k] = (gp - gm) / (2.0 * dx);
    j.ddg[k][k] = (gp - 2.0 * j.g + gm) / (dx * dx);
    for (int l = 0; l < k; ++l) {
      const Vec3 el = Vec3::Unit(l) * dx;
      const Mat3 m = (metric(x + ek + el) - metric(x + ek - el) - metric(x - ek + el) +
                      metric(x - ek - el)) / (4.0 * dx * dx);
      j.ddg[k][l] = m;
      j.ddg[l][k] = m;
    }
  }
  return j;
}

Sym3Array Background::extrinsic_gradient(const Vec3& x, double dx) const {
  Sym3Array dk;
  for (int l = 0; l < 3; ++l) {
    const Vec3 el = Vec3::Unit(l) * dx;
    dk[l] = (extrinsic(x + el) - extrinsic(x - el)) / (2.0 * dx);
  }
  return dk;
}

Sym3Array christoffel(const Mat3& g, const Sym3Array& dg) {
  const Mat3 gi = g.inverse();
  // Lowered symbols [ij, l] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij).
  Sym3Array low;
  for (int l = 0; l < 3; ++l)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) low[l](i, j) = 0.5 * (dg[i](j, l) + dg[j](i, l) - dg[l](i, j));
  Sym3Array G;
  for (int k = 0; k < 3; ++k) {
    G[k].setZero();
    for (int l = 0; l < 3; ++l) G[k] += gi(k, l) * low[l];
  }
  return G;
}

CurvatureSample curvature_from_jet(const MetricJet& jet) {
  CurvatureSample cs;
  const Mat3 gi = jet.g.inverse();
  cs.christoffel = christoffel(jet.g, jet.dg);
  const Sym3Array& G = cs.christoffel;

  // d_m g^{kl} = -g^{ka} d_m g_ab g^{bl}
  Sym3Array dgi;
  for (int m = 0; m < 3; ++m) dgi[m] = -gi * jet.dg[m] * gi;

  // dG[m][k](i,j) = d_m Gamma^k_ij
  std::array<Sym3Array, 3> dG;
  for (int m = 0; m < 3; ++m) {
    Sym3Array low, dlow;
    for (int l = 0; l < 3; ++l)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          low[l](i, j) = 0.5 * (jet.dg[i](j, l) + jet.dg[j](i, l) - jet.dg[l](i, j));
          dlow[l](i, j) = 0.5 * (jet.ddg[m][i](j, l) + jet.ddg[m][j](i, l) - jet.ddg[m][l](i, j));
        }
    for (int k = 0; k < 3; ++k) {
      dG[m][k].setZero();
      for (int l = 0; l < 3; ++l) dG[m][k] += dgi[m](k, l) * low[l] + gi(k, l) * dlow[l];
    }
  }

  // R_ij = d_k G^k_ij - d_j G^k_ik + G^k_kl G^l_ij - G^k_jl G^l_ik
  Mat3 ric = Mat3::Zero();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double r = 0.0;
      for (int k = 0; k < 3; ++k) {
        r += dG[k][k](i, j) - dG[j][k](i, k);
        for (int l = 0; l < 3; ++l) r += G[k](k, l) * G[l](i, j) - G[k](j, l) * G[l](i, k);
      }
      ric(i, j) = r;
    }
  cs.ricci = 0.5 * (ric + ric.transpose());
  cs.scalar = (gi.cwiseProduct(cs.ricci)).sum();
  return cs;
}

CurvatureSample curvature(const Background& bg, const Vec3& x) {
  if (bg.is_flat() || bg.flat_at(x)) {
    CurvatureSample cs;
    for (auto& m : cs.christoffel) m.setZero();
    return cs;
  }
  return curvature_from_jet(bg.jet(x));
}

CurvatureSample curvature_fd(const Background& bg, const Vec3& x, double dx) {
  return curvature_from_jet(bg.fd_jet(x, dx));
}

namespace {

void check_elliptic(const Mat3& g, const Vec3& x) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(g, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues()[0];
  const double hi = es.eigenvalues()[2];
  if (lo < 0.5 || hi > 2.0) {
    std::ostringstream os;
    os << "metric eigenvalues [" << lo << ", " << hi << "] at (" << x.transpose()
       << ") leave [0.5, 2]";
    throw Error(ErrorKind::EllipticityViolated, os.str());
  }
}

std::shared_ptr<const Field3> load_table(const std::string& path) {
  auto f = std::make_shared<Field3>(read_grid_file(path));
  if (f->components != 6)
    throw Error(ErrorKind::InvalidBackground, path + ": expected 6 tensor components per row");
  return f;
}

}  // namespace

Background make_background(const BackgroundParams& p) {
  if (!(p.epsilon >= 0.0)) throw Error(ErrorKind::InvalidBackground, "epsilon must be nonnegative");
  if (p.grid.half_width < 3.0 - 1e-12)
    throw Error(ErrorKind::InvalidBackground, "grid half width must be at least 3");
  if (!(p.grid.spacing > 0.0)) throw Error(ErrorKind::InvalidBackground, "grid spacing must be positive");

  Background bg;
  bg.params_ = p;
  const Grid3 grid = Grid3::cube(p.grid.half_width, p.grid.spacing);

  switch (p.family) {
    case Family::Flat:
      bg.params_.epsilon = 0.0;
      bg.params_.extrinsic_amplitude = 0.0;
      return bg;
    case Family::Bump: {
      if (!(p.support_radius > 0.0) || p.support_radius > 1.0 + 1e-12)
        throw Error(ErrorKind::InvalidBackground, "bump support radius must lie in (0, 1]");
      bg.shape_ = bump_shape();
      bg.kshape_ = kshape_default();
      check_elliptic(bg.metric(Vec3::Zero()), Vec3::Zero());
      const double rho2 = p.support_radius * p.support_radius;
      for (int k = 0; k < grid.nz; ++k)
        for (int j = 0; j < grid.ny; ++j)
          for (int i = 0; i < grid.nx; ++i) {
            const Vec3 x = grid.point(i, j, k);
            if (x.squaredNorm() >= rho2) continue;
            check_elliptic(bg.metric(x), x);
          }
      return bg;
    }
    case Family::Table: {
      if (p.metric_table.empty()) throw Error(ErrorKind::InvalidBackground, "table family needs a metric table");
      bg.gtable_ = load_table(p.metric_table);
      if (!p.extrinsic_table.empty()) bg.ktable_ = load_table(p.extrinsic_table);
      const Field3& gt = *bg.gtable_;
      const Vec3 hi = gt.grid.origin + gt.grid.spacing * Vec3(gt.grid.nx - 1, gt.grid.ny - 1, gt.grid.nz - 1);
      if ((gt.grid.origin.array() > -kFlatRadius).any() || (hi.array() < kFlatRadius).any())
        throw Error(ErrorKind::InvalidBackground, "metric table must cover [-2, 2]^3");
      for (int k = 0; k < gt.grid.nz; ++k)
        for (int j = 0; j < gt.grid.ny; ++j)
          for (int i = 0; i < gt.grid.nx; ++i) {
            const std::size_t n = gt.grid.index(i, j, k);
            const Vec3 x = gt.grid.point(i, j, k);
            const Mat3 g = sym_from6(&gt.data[n * 6]);
            check_elliptic(g, x);
            if (x.norm() >= kFlatRadius - 1e-12 && (g - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-12) {
              std::ostringstream os;
              os << "metric differs from delta at |x| >= 2, x = (" << x.transpose() << ")";
              throw Error(ErrorKind::InvalidBackground, os.str());
            }
          }
      if (bg.ktable_) {
        const Field3& kt = *bg.ktable_;
        for (int k = 0; k < kt.grid.nz; ++k)
          for (int j = 0; j < kt.grid.ny; ++j)
            for (int i = 0; i < kt.grid.nx; ++i) {
              const std::size_t n = kt.grid.index(i, j, k);
              const Vec3 x = kt.grid.point(i, j, k);
              const Mat3 kk = sym_from6(&kt.data[n * 6]);
              if (x.norm() >= kFlatRadius - 1e-12 && kk.cwiseAbs().maxCoeff() > 1e-12)
                throw Error(ErrorKind::InvalidBackground, "extrinsic table nonzero at |x| >= 2");
              const double tr = (bg.metric(x).inverse() * kk).trace();
              if (std::abs(tr) > 1e-10 * std::max(1.0, kk.norm()))
                throw Error(ErrorKind::InvalidBackground, "extrinsic table is not g-traceless");
            }
      }
      return bg;
    }
  }
  return bg;
}

Background make_background(Family family, double epsilon, const GridSpec& grid) {
  BackgroundParams p;
  p.family = family;
  p.epsilon = epsilon;
  p.grid = grid;
  return make_background(p);
}

ConstraintResiduals constraint_residuals(const Background& bg) {
  ConstraintResiduals r;
  if (bg.is_flat()) return r;
  const Grid3 grid = Grid3::cube(bg.grid().half_width, bg.grid().spacing);
  const double dx = grid.spacing;
  for (int k = 1; k + 1 < grid.nz; ++k)
    for (int j = 1; j + 1 < grid.ny; ++j)
      for (int i = 1; i + 1 < grid.nx; ++i) {
        const Vec3 x = grid.point(i, j, k);
        if (bg.flat_at(x)) continue;
        const MetricJet jet = bg.jet(x);
        const CurvatureSample cs = curvature_from_jet(jet);
        const Mat3 gi = jet.g.inverse();
        const Mat3 kk = bg.extrinsic(x);
        const double trk = gi.cwiseProduct(kk).sum();
        const Mat3 kup = gi * kk * gi;
        const double k2 = kup.cwiseProduct(kk).sum();
        r.trace = std::max(r.trace, std::abs(trk));
        r.hamiltonian = std::max(r.hamiltonian, std::abs(cs.scalar - k2 + trk * trk));
        if (kk.cwiseAbs().maxCoeff() == 0.0 && bg.family() != Family::Table) continue;
        const Sym3Array dk = bg.extrinsic_gradient(x, dx);
        // (div k)_i = g^{lj} (d_l k_ij - G^m_li k_mj - G^m_lj k_im)
        const Sym3Array& G = cs.christoffel;
        Vec3 div = Vec3::Zero();
        for (int a = 0; a < 3; ++a)
          for (int l = 0; l < 3; ++l)
            for (int b = 0; b < 3; ++b) {
              double cov = dk[l](a, b);
              for (int m = 0; m < 3; ++m) cov -= G[m](l, a) * kk(m, b) + G[m](l, b) * kk(a, m);
              div[a] += gi(l, b) * cov;
            }
        r.momentum = std::max(r.momentum, div.cwiseAbs().maxCoeff());
      }
  return r;
}

namespace {

Field3 sample_tensor(const Background& bg, const Grid3& grid, bool metric) {
  Field3 f(grid, 6);
  for (int k = 0; k < grid.nz; ++k)
    for (int j = 0; j < grid.ny; ++j)
      for (int i = 0; i < grid.nx; ++i) {
        const std::size_t n = grid.index(i, j, k);
        const Vec3 x = grid.point(i, j, k);
        const Mat3 m = metric ? bg.metric(x) : bg.extrinsic(x);
        const double c[6] = {m(0, 0), m(0, 1), m(0, 2), m(1, 1), m(1, 2), m(2, 2)};
        for (int c6 = 0; c6 < 6; ++c6) f.at(n, c6) = c[c6];
      }
  return f;
}

}  // namespace

Field3 sample_metric_table(const Background& bg, const Grid3& grid) { return sample_tensor(bg, grid, true); }
Field3 sample_extrinsic_table(const Background& bg, const Grid3& grid) { return sample_tensor(bg, grid, false); }

}  // namespace eikon
