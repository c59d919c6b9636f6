#include "eikon/phase.hpp"

#include "eikon/error.hpp"
#include "eikon/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace eikon {

// ---------------------------------------------------------------------------
// Lattice and atlas

OmegaLattice OmegaLattice::from_grid(int n_theta, int n_phi) {
  if (n_theta < 3 || n_phi < 3) throw Error(ErrorKind::InvalidConfig, "omega grid needs at least 3 x 3 samples");
  OmegaLattice l;
  l.dtheta = M_PI / (n_theta - 1);
  l.dphi = 2.0 * M_PI / (n_phi - 1);
  return l;
}

int OmegaLattice::n_theta() const { return static_cast<int>(std::lround(M_PI / dtheta)) + 1; }
int OmegaLattice::phi_period() const { return static_cast<int>(std::lround(2.0 * M_PI / dphi)); }

std::vector<DirectionKey> stencil(const DirectionKey& c, int order) {
  std::vector<DirectionKey> k{c, {c.it + 1, c.ip}, {c.it - 1, c.ip}, {c.it, c.ip + 1}, {c.it, c.ip - 1}};
  if (order >= 2)
    for (int a : {-1, 1})
      for (int b : {-1, 1}) k.push_back({c.it + a, c.ip + b});
  if (order >= 3)
    for (int a : {-2, 2}) {
      k.push_back({c.it + a, c.ip});
      k.push_back({c.it, c.ip + a});
    }
  return k;
}

PhaseAtlas::PhaseAtlas(const Background& bg, const OmegaLattice& lattice, const MarchParams& march, bool leaf_data)
    : bg_(bg), lattice_(lattice), march_(march), leaf_data_(leaf_data) {
  validate(march_);
  if (std::abs(M_PI / lattice_.dtheta - std::round(M_PI / lattice_.dtheta)) > 1e-9 ||
      std::abs(2 * M_PI / lattice_.dphi - std::round(2 * M_PI / lattice_.dphi)) > 1e-9)
    throw Error(ErrorKind::InvalidConfig, "omega lattice spacings must divide pi and 2 pi");
}

DirectionKey PhaseAtlas::canonical(const DirectionKey& k) const {
  const int nt = lattice_.n_theta();
  if (k.it < 0 || k.it >= nt) {
    std::ostringstream os;
    os << "direction (" << k.it << ", " << k.ip << ") lies beyond a pole of the lattice";
    throw Error(ErrorKind::MissingDirection, os.str());
  }
  const int P = lattice_.phi_period();
  DirectionKey c{k.it, ((k.ip % P) + P) % P};
  if (c.it == 0 || c.it == nt - 1) c.ip = 0;
  return c;
}

Vec3 PhaseAtlas::direction(const DirectionKey& k) const {
  const DirectionKey c = canonical(k);
  if (c.it == 0) return Vec3::UnitZ();
  if (c.it == lattice_.n_theta() - 1) return -Vec3::UnitZ();
  return eikon::direction(lattice_.theta(c.it), lattice_.phi(c.ip));
}

void PhaseAtlas::build(const std::vector<DirectionKey>& keys) {
  std::vector<DirectionKey> todo;
  for (const auto& k : keys) {
    const DirectionKey c = canonical(k);
    if (!entries_.count(c) && std::find(todo.begin(), todo.end(), c) == todo.end()) todo.push_back(c);
  }
  std::vector<std::unique_ptr<Entry>> made(todo.size());
  parallel_for(todo.size(), [&](std::size_t n) {
    const DirectionKey& k = todo[n];
    try {
      auto e = std::make_unique<Entry>();
      e->trace = march(bg_, direction(k), march_);
      e->sampler = std::make_unique<PhaseSampler>(bg_, e->trace, leaf_data_);
      made[n] = std::move(e);
    } catch (const Error& err) {
      std::string msg = err.what();
      const auto colon = msg.find(": ");
      if (colon != std::string::npos) msg = msg.substr(colon + 2);
      std::ostringstream os;
      os << "[direction (" << k.it << ", " << k.ip << ")] " << msg;
      throw Error(err.kind(), os.str());
    }
  });
  for (std::size_t n = 0; n < todo.size(); ++n) entries_[todo[n]] = std::move(made[n]);
}

void PhaseAtlas::build_all() {
  std::vector<DirectionKey> keys;
  for (int it = 0; it < lattice_.n_theta(); ++it)
    for (int ip = 0; ip < lattice_.phi_period(); ++ip) keys.push_back({it, ip});
  build(keys);
}

bool PhaseAtlas::has(const DirectionKey& k) const { return entries_.count(canonical(k)) > 0; }

std::vector<DirectionKey> PhaseAtlas::keys() const {
  std::vector<DirectionKey> out;
  for (const auto& [k, e] : entries_) out.push_back(k);
  return out;
}

const PhaseAtlas::Entry& PhaseAtlas::entry(const DirectionKey& k) const {
  const auto it = entries_.find(canonical(k));
  if (it == entries_.end()) {
    std::ostringstream os;
    os << "direction (" << k.it << ", " << k.ip << ") has not been built";
    throw Error(ErrorKind::MissingDirection, os.str());
  }
  return *it->second;
}

const FoliationTrace& PhaseAtlas::trace(const DirectionKey& k) const { return entry(k).trace; }

double PhaseAtlas::u_raw(const Vec3& x, const DirectionKey& k, double* a, Vec3* Ncov) const {
  return entry(k).sampler->u(x, a, Ncov);
}

double PhaseAtlas::u(const Vec3& x, const DirectionKey& k) const {
  const double phi = glue_cutoff(x.norm());
  const double lin = x.dot(direction(k));
  if (phi == 0.0) return lin;
  return phi * u_raw(x, k) + (1.0 - phi) * lin;
}

void PhaseAtlas::write(const std::string& dir, const Grid3& grid) const {
  std::filesystem::create_directories(dir);
  std::ofstream man(std::filesystem::path(dir) / "manifest.txt");
  if (!man) throw Error(ErrorKind::Io, "cannot write manifest in " + dir);
  man.precision(17);
  man << "# it ip theta phi omega_x omega_y omega_z file\n";
  for (const auto& [k, e] : entries_) {
    Field3 f(grid, 1);
    parallel_for(static_cast<std::size_t>(grid.nz), [&](std::size_t kk) {
      for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i) {
          const std::size_t n = grid.index(i, j, static_cast<int>(kk));
          f.at(n) = u(grid.point(i, j, static_cast<int>(kk)), k);
        }
    });
    const std::string name = "u_" + std::to_string(k.it) + "_" + std::to_string(k.ip) + ".grid";
    write_grid_file((std::filesystem::path(dir) / name).string(), f);
    const Vec3 w = direction(k);
    man << k.it << ' ' << k.ip << ' ' << lattice_.theta(k.it) << ' ' << lattice_.phi(k.ip) << ' ' << w.x() << ' '
        << w.y() << ' ' << w.z() << ' ' << name << '\n';
  }
}

// ---------------------------------------------------------------------------
// omega-derivatives

OmegaJet omega_jet(const PhaseAtlas& atlas, const DirectionKey& c, int order,
                   const std::function<double(const DirectionKey&)>& sample) {
  const OmegaLattice& L = atlas.lattice();
  const int reach = order >= 3 ? 2 : 1;
  if (c.it - reach < 0 || c.it + reach > L.n_theta() - 1) {
    std::ostringstream os;
    os << "omega-derivatives at it = " << c.it << " need directions past a pole";
    throw Error(ErrorKind::MissingDirection, os.str());
  }
  const double th = L.theta(c.it), h = L.dtheta, k = L.dphi;
  const double s = std::sin(th), ct = std::cos(th) / s;
  OmegaJet J;
  J.omega = atlas.direction(c);
  J.e_theta = Vec3(std::cos(th) * std::cos(L.phi(c.ip)), std::cos(th) * std::sin(L.phi(c.ip)), -s);
  J.e_phi = Vec3(-std::sin(L.phi(c.ip)), std::cos(L.phi(c.ip)), 0.0);
  auto f = [&](int a, int b) { return sample({c.it + a, c.ip + b}); };
  const double f0 = f(0, 0), fp = f(1, 0), fm = f(-1, 0), gp = f(0, 1), gm = f(0, -1);
  J.value = f0;
  const double ft = (fp - fm) / (2.0 * std::sin(h));
  const double fph = (gp - gm) / (2.0 * std::sin(k));
  J.d1 = Vec2(ft, fph / s);
  if (order >= 2) {
    const double ftt = (fp - 2.0 * f0 + fm) / (2.0 * (1.0 - std::cos(h)));
    const double fpp = (gp - 2.0 * f0 + gm) / (2.0 * (1.0 - std::cos(k)));
    const double ftp = (f(1, 1) - f(1, -1) - f(-1, 1) + f(-1, -1)) / (4.0 * std::sin(h) * std::sin(k));
    J.d2(0, 0) = ftt;
    J.d2(0, 1) = J.d2(1, 0) = (ftp - ct * fph) / s;
    J.d2(1, 1) = fpp / (s * s) + ct * ft;
  }
  if (order >= 3) {
    J.d3.x() = (f(2, 0) - 2.0 * fp + 2.0 * fm - f(-2, 0)) / (2.0 * h * h * h);
    J.d3.y() = (f(0, 2) - 2.0 * gp + 2.0 * gm - f(0, -2)) / (2.0 * k * k * k * s * s * s);
  }
  return J;
}

OmegaJet phase_jet(const PhaseAtlas& atlas, const Vec3& x, const DirectionKey& c, int order) {
  return omega_jet(atlas, c, order, [&](const DirectionKey& k) { return atlas.u(x, k); });
}

std::vector<Vec3> ball_points(double r, double h) {
  std::vector<Vec3> out;
  const int n = static_cast<int>(std::floor(r / h + 1e-9));
  for (int k = -n; k <= n; ++k)
    for (int j = -n; j <= n; ++j)
      for (int i = -n; i <= n; ++i) {
        const Vec3 x = h * Vec3(i, j, k);
        if (x.norm() <= r + 1e-12) out.push_back(x);
      }
  return out;
}

namespace {

void accumulate(IdentityStat& s, double v) {
  s.max = std::max(s.max, v);
  s.l2 += v * v;
}

// Covariant leaf-tangential projection of a covector.
Vec3 tangential(const Vec3& w, const Vec3& Ncov, const Mat3& ginv) {
  const Vec3 Nup = ginv * Ncov;
  return w - Nup.dot(w) * Ncov;
}

double cov_norm(const Vec3& w, const Mat3& ginv) { return std::sqrt(std::max(0.0, w.dot(ginv * w))); }

}  // namespace

OmegaIdentityReport omega_identity_residuals(PhaseAtlas& atlas, const DirectionKey& c,
                                             const std::vector<Vec3>& points, double dx, bool third) {
  const std::vector<DirectionKey> keys = stencil(c, third ? 3 : 2);
  atlas.build(keys);
  OmegaIdentityReport rep;
  rep.samples = points.size();
  rep.dtheta = atlas.lattice().dtheta;
  rep.dx = dx;
  const Background& bg = atlas.background();

  struct PointResult {
    double t4 = 0, n4 = 0, o2 = 0, tan = 0, d3 = 0;
  };
  std::vector<PointResult> res(points.size());
  parallel_for(points.size(), [&](std::size_t pi) {
    const Vec3& x = points[pi];
    // Values of u at x and its six neighbours, and leaf data at x, per direction.
    std::map<DirectionKey, std::array<double, 7>> U;
    std::map<DirectionKey, double> A;
    std::map<DirectionKey, Vec3> N;
    for (const auto& k : keys) {
      std::array<double, 7> v;
      double a;
      Vec3 n;
      v[0] = atlas.u_raw(x, k, &a, &n);
      for (int i = 0; i < 3; ++i) {
        v[1 + 2 * i] = atlas.u_raw(x + dx * Vec3::Unit(i), k);
        v[2 + 2 * i] = atlas.u_raw(x - dx * Vec3::Unit(i), k);
      }
      U[k] = v;
      A[k] = a;
      N[k] = n;
    }
    auto jet_u = [&](int slot, int order) {
      return omega_jet(atlas, c, order, [&](const DirectionKey& k) { return U.at(k)[slot]; });
    };
    const OmegaJet J0 = jet_u(0, third ? 3 : 2);
    std::array<OmegaJet, 6> Jn;
    for (int s = 0; s < 6; ++s) Jn[s] = jet_u(s + 1, 2);
    const OmegaJet Ja = omega_jet(atlas, c, 2, [&](const DirectionKey& k) { return A.at(k); });
    const OmegaJet Jloga = omega_jet(atlas, c, 2, [&](const DirectionKey& k) { return std::log(A.at(k)); });
    std::array<OmegaJet, 3> JN;
    for (int i = 0; i < 3; ++i) JN[i] = omega_jet(atlas, c, 2, [&](const DirectionKey& k) { return N.at(k)[i]; });

    const double a = Ja.value;
    const Vec3 Nc(JN[0].value, JN[1].value, JN[2].value);
    const Mat3 ginv = bg.metric(x).inverse();
    const Vec3 Nup = ginv * Nc;
    PointResult r;
    r.tan = std::abs(J0.tangent().dot(J0.omega));
    r.d3 = J0.d3.cwiseAbs().maxCoeff();
    std::array<Vec3, 2> dN;
    for (int al = 0; al < 2; ++al) dN[al] = Vec3(JN[0].d1[al], JN[1].d1[al], JN[2].d1[al]);
    for (int al = 0; al < 2; ++al) {
      Vec3 grad;
      for (int i = 0; i < 3; ++i) grad[i] = (Jn[2 * i].d1[al] - Jn[2 * i + 1].d1[al]) / (2.0 * dx);
      r.t4 = std::max(r.t4, cov_norm(tangential(grad, Nc, ginv) - dN[al] / a, ginv));
      r.n4 = std::max(r.n4, std::abs(Nup.dot(grad) + Jloga.d1[al] / a));
    }
    for (int al = 0; al < 2; ++al)
      for (int be = al; be < 2; ++be) {
        const Vec3 lhs(JN[0].d2(al, be), JN[1].d2(al, be), JN[2].d2(al, be));
        Vec3 grad;
        for (int i = 0; i < 3; ++i) grad[i] = (Jn[2 * i].d2(al, be) - Jn[2 * i + 1].d2(al, be)) / (2.0 * dx);
        const Vec3 rhs = a * tangential(grad, Nc, ginv) + Jloga.d1[al] * dN[be] + Jloga.d1[be] * dN[al] -
                         dN[al].dot(ginv * dN[be]) * Nc;
        r.o2 = std::max(r.o2, cov_norm(lhs - rhs, ginv));
      }
    res[pi] = r;
  });
  for (const auto& r : res) {
    accumulate(rep.leaf_gradient, r.t4);
    accumulate(rep.normal_derivative, r.n4);
    accumulate(rep.second_derivative, r.o2);
    accumulate(rep.tangency, r.tan);
    rep.d3_bound = std::max(rep.d3_bound, r.d3);
  }
  const double n = std::max<std::size_t>(1, points.size());
  for (IdentityStat* s : {&rep.leaf_gradient, &rep.normal_derivative, &rep.second_derivative, &rep.tangency})
    s->l2 = std::sqrt(s->l2 / n);
  return rep;
}

// ---------------------------------------------------------------------------
// Charts

namespace {

// g-orthonormal basis of ker(Ncov), built from the frame of omega.
std::array<Vec3, 2> leaf_frame(const Vec3& Ncov, const Vec3& omega, const Mat3& g) {
  Vec3 t1, t2;
  tangent_frame(omega, t1, t2);
  const double no = Ncov.dot(omega);
  Vec3 w1 = t1 - (Ncov.dot(t1) / no) * omega;
  Vec3 w2 = t2 - (Ncov.dot(t2) / no) * omega;
  w1 /= std::sqrt(w1.dot(g * w1));
  w2 -= w1.dot(g * w2) * w1;
  w2 /= std::sqrt(w2.dot(g * w2));
  return {w1, w2};
}

template <int D>
int count_collisions(const std::vector<Eigen::Matrix<double, D, 1>>& pts, const std::array<int, D>& bins) {
  using V = Eigen::Matrix<double, D, 1>;
  V lo = V::Constant(1e300), hi = V::Constant(-1e300);
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  std::unordered_map<long long, int> cells;
  int collisions = 0;
  for (const auto& p : pts) {
    long long key = 0;
    for (int d = 0; d < D; ++d) {
      const double ext = std::max(hi[d] - lo[d], 1e-300);
      const int b = std::clamp(static_cast<int>((p[d] - lo[d]) / ext * bins[d]), 0, bins[d] - 1);
      key = key * bins[d] + b;
    }
    if (cells[key]++ > 0) ++collisions;
  }
  return collisions;
}

}  // namespace

ChartReport chart_phi_u(PhaseAtlas& atlas, const DirectionKey& c, double u, int bins) {
  const std::vector<DirectionKey> keys = stencil(c, 1);
  atlas.build(keys);
  const FoliationTrace& T = atlas.trace(c);
  std::size_t m = 0;
  for (std::size_t l = 0; l < T.u_stored.size(); ++l)
    if (std::abs(T.u_stored[l] - u) < std::abs(T.u_stored[m] - u)) m = l;
  if (std::abs(T.u_stored[m] - u) > 1e-9) {
    std::ostringstream os;
    os << "leaf u = " << u << " is not stored (nearest " << T.u_stored[m] << ")";
    throw Error(ErrorKind::InsufficientLeaves, os.str());
  }
  const LeafGrid& G = T.grid;
  const Background& bg = atlas.background();
  const std::size_t n = G.size();
  std::vector<Vec2> img(n);
  std::vector<double> det(n), orth(n);
  parallel_for(n, [&](std::size_t idx) {
    const int i = static_cast<int>(idx % G.n), j = static_cast<int>(idx / G.n);
    const Vec3 X = G.point(i, j, T.h_stored[m][idx]);
    std::map<DirectionKey, double> A;
    std::map<DirectionKey, Vec3> N;
    std::map<DirectionKey, double> U;
    for (const auto& k : keys) {
      double a;
      Vec3 nn;
      U[k] = atlas.u_raw(X, k, &a, &nn);
      A[k] = a;
      N[k] = nn;
    }
    const OmegaJet Ju = omega_jet(atlas, c, 1, [&](const DirectionKey& k) { return U.at(k); });
    img[idx] = Ju.d1;
    std::array<OmegaJet, 3> JN;
    for (int d = 0; d < 3; ++d) JN[d] = omega_jet(atlas, c, 1, [&](const DirectionKey& k) { return N.at(k)[d]; });
    const Vec3 Nc(JN[0].value, JN[1].value, JN[2].value);
    const auto f = leaf_frame(Nc, Ju.omega, bg.metric(X));
    Mat2 J;
    for (int al = 0; al < 2; ++al) {
      const Vec3 dN(JN[0].d1[al], JN[1].d1[al], JN[2].d1[al]);
      for (int B = 0; B < 2; ++B) J(al, B) = dN.dot(f[B]) / A.at(c);
    }
    det[idx] = J.determinant();
    orth[idx] = (J.transpose() * J - Mat2::Identity()).cwiseAbs().maxCoeff();
  });
  ChartReport r;
  r.samples = n;
  r.det_min = *std::min_element(det.begin(), det.end());
  r.det_max = *std::max_element(det.begin(), det.end());
  for (std::size_t k = 0; k < n; ++k) {
    r.det_deviation = std::max(r.det_deviation, std::abs(std::abs(det[k]) - 1.0));
    r.orthogonality = std::max(r.orthogonality, orth[k]);
    if (std::abs(det[k]) < 0.1) {
      std::ostringstream os;
      os << "|det Jac Phi_u| = " << std::abs(det[k]) << " at leaf node " << k;
      throw Error(ErrorKind::DegenerateJacobian, os.str());
    }
  }
  r.collisions = count_collisions<2>(img, {bins, bins});
  return r;
}

ChartReport chart_phi(PhaseAtlas& atlas, const DirectionKey& c, const Grid3& grid, double identity_radius) {
  const std::vector<DirectionKey> keys = stencil(c, 1);
  atlas.build(keys);
  const Background& bg = atlas.background();
  const std::size_t n = grid.size();
  std::vector<Vec3> Phi(n);
  parallel_for(n, [&](std::size_t idx) {
    const int i = static_cast<int>(idx % grid.nx);
    const int j = static_cast<int>((idx / grid.nx) % grid.ny);
    const int k = static_cast<int>(idx / (static_cast<std::size_t>(grid.nx) * grid.ny));
    const OmegaJet J = phase_jet(atlas, grid.point(i, j, k), c, 1);
    Phi[idx] = J.value * J.omega + J.tangent();
  });
  const double h = grid.spacing;
  struct NodeOut {
    double det = 1.0;
    double det_identity = -1.0;  // < 0: not evaluated
    bool interior = false;
  };
  std::vector<NodeOut> out(n);
  parallel_for(n, [&](std::size_t idx) {
    const int i = static_cast<int>(idx % grid.nx);
    const int j = static_cast<int>((idx / grid.nx) % grid.ny);
    const int k = static_cast<int>(idx / (static_cast<std::size_t>(grid.nx) * grid.ny));
    if (i == 0 || j == 0 || k == 0 || i == grid.nx - 1 || j == grid.ny - 1 || k == grid.nz - 1) return;
    const Vec3 x = grid.point(i, j, k);
    Mat3 D;
    D.col(0) = (Phi[grid.index(i + 1, j, k)] - Phi[grid.index(i - 1, j, k)]) / (2 * h);
    D.col(1) = (Phi[grid.index(i, j + 1, k)] - Phi[grid.index(i, j - 1, k)]) / (2 * h);
    D.col(2) = (Phi[grid.index(i, j, k + 1)] - Phi[grid.index(i, j, k - 1)]) / (2 * h);
    const Mat3 g = bg.metric(x);
    const double detg = g.determinant();
    NodeOut o;
    o.interior = true;
    o.det = D.determinant() / std::sqrt(detg);
    if (x.norm() + h <= identity_radius) {
      std::map<DirectionKey, double> A;
      std::map<DirectionKey, Vec3> N;
      for (const auto& key : keys) {
        double a;
        Vec3 nn;
        atlas.u_raw(x, key, &a, &nn);
        A[key] = a;
        N[key] = nn;
      }
      std::array<OmegaJet, 3> JN;
      for (int d = 0; d < 3; ++d)
        JN[d] = omega_jet(atlas, c, 1, [&](const DirectionKey& key) { return N.at(key)[d]; });
      const Vec3 Nc(JN[0].value, JN[1].value, JN[2].value);
      const auto f = leaf_frame(Nc, JN[0].omega, g);
      const double a = A.at(c);
      Mat2 Ju;
      for (int al = 0; al < 2; ++al) {
        const Vec3 dN(JN[0].d1[al], JN[1].d1[al], JN[2].d1[al]);
        for (int B = 0; B < 2; ++B) Ju(al, B) = dN.dot(f[B]) / a;
      }
      const double lhs = D.determinant() * D.determinant() / detg;
      const double rhs = std::pow(Ju.determinant(), 2) / (a * a);
      o.det_identity = std::abs(lhs - rhs);
    }
    out[idx] = o;
  });
  ChartReport r;
  r.det_min = 1e300;
  r.det_max = -1e300;
  std::vector<Vec3> img;
  for (std::size_t idx = 0; idx < n; ++idx) {
    const NodeOut& o = out[idx];
    if (!o.interior) continue;
    ++r.samples;
    r.det_min = std::min(r.det_min, o.det);
    r.det_max = std::max(r.det_max, o.det);
    r.det_deviation = std::max(r.det_deviation, std::abs(std::abs(o.det) - 1.0));
    if (o.det_identity >= 0.0) {
      r.det_identity = std::max(r.det_identity, o.det_identity);
      ++r.det_identity_samples;
    }
    if (std::abs(o.det) < 0.1) {
      std::ostringstream os;
      os << "|det Jac Phi| = " << std::abs(o.det) << " at grid node " << idx;
      throw Error(ErrorKind::DegenerateJacobian, os.str());
    }
    img.push_back(Phi[idx]);
  }
  // Bins of half the grid spacing along each axis of the image box.
  r.collisions = count_collisions<3>(img, {2 * grid.nx, 2 * grid.ny, 2 * grid.nz});
  return r;
}

// ---------------------------------------------------------------------------
// Taylor comparison

std::pair<double, double> loglog_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return {slope, (sy - slope * sx) / n};
}

TaylorReport taylor_compare(PhaseAtlas& atlas, const DirectionKey& nu, const std::vector<int>& offsets,
                            const std::vector<Vec3>& points) {
  std::vector<int> offs = offsets;
  std::sort(offs.begin(), offs.end());
  offs.erase(std::unique(offs.begin(), offs.end()), offs.end());
  if (offs.size() < 3 || offs.front() <= 0 || offs.back() < 4 * offs.front())
    throw Error(ErrorKind::InsufficientSeparations, "need three or more separations spanning a factor 4");
  std::vector<DirectionKey> keys = stencil(nu, 1);
  for (int m : offs)
    for (const auto& k : stencil({nu.it + m, nu.ip}, 2)) keys.push_back(k);
  atlas.build(keys);

  // Frozen chart of nu at every point.
  std::vector<Vec3> Phi(points.size());
  parallel_for(points.size(), [&](std::size_t p) {
    const OmegaJet J = phase_jet(atlas, points[p], nu, 1);
    Phi[p] = J.value * J.omega + J.tangent();
  });
  TaylorReport r;
  const Vec3 wnu = atlas.direction(nu);
  for (int m : offs) {
    const DirectionKey om{nu.it + m, nu.ip};
    std::vector<std::array<double, 3>> d(points.size());
    parallel_for(points.size(), [&](std::size_t p) {
      const OmegaJet J = phase_jet(atlas, points[p], om, 2);
      const double lin = Phi[p].dot(J.omega);
      const Vec3 proj = Phi[p] - lin * J.omega;
      d[p] = {std::abs(J.value - lin), (J.tangent() - proj).norm(), (J.d2 + lin * Mat2::Identity()).norm()};
    });
    std::array<double, 3> mx{0, 0, 0};
    for (const auto& v : d)
      for (int i = 0; i < 3; ++i) mx[i] = std::max(mx[i], v[i]);
    r.separation.push_back((atlas.direction(om) - wnu).norm());
    r.d0.push_back(mx[0]);
    r.d1.push_back(mx[1]);
    r.d2.push_back(mx[2]);
  }
  auto fit = [&](const std::vector<double>& y, double& slope, double& pref) {
    for (double v : y)
      if (!(v > 0.0)) {
        slope = 0.0;
        pref = 0.0;
        return;
      }
    const auto [s, b] = loglog_fit(r.separation, y);
    slope = s;
    pref = std::exp(b);
  };
  fit(r.d0, r.slope0, r.prefactor0);
  fit(r.d1, r.slope1, r.prefactor1);
  fit(r.d2, r.slope2, r.prefactor2);
  return r;
}

// ---------------------------------------------------------------------------
// Parametrix

void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double dp = 1.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1.0, p1 = z;
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
}

PhaseFn flat_phase() {
  return [](const Vec3& x, const Vec3& w) { return x.dot(w); };
}

PhaseFn atlas_phase(const PhaseAtlas& atlas) {
  return [&atlas](const Vec3& x, const Vec3& w) {
    const OmegaLattice& L = atlas.lattice();
    const double th = std::acos(std::clamp(w.z(), -1.0, 1.0));
    double ph = std::atan2(w.y(), w.x());
    if (ph < 0) ph += 2 * M_PI;
    const Stencil1 st = lagrange_stencil(th / L.dtheta, L.n_theta(), 4);
    const double pp = ph / L.dphi;
    const int base = static_cast<int>(std::floor(pp)) - 1;
    double val = 0.0;
    for (int a = 0; a < st.npts; ++a) {
      double row = 0.0;
      for (int b = 0; b < 4; ++b) {
        double wb = 1.0;
        for (int c = 0; c < 4; ++c)
          if (c != b) wb *= (pp - (base + c)) / static_cast<double>(b - c);
        const DirectionKey k{st.start + a, base + b};
        row += wb * (atlas.u(x, k) - x.dot(atlas.direction(k)));
      }
      val += st.w[a] * row;
    }
    return x.dot(w) + val;
  };
}

Symbol Symbol::gaussian() {
  return {[](const Vec3& xi) { return std::complex<double>(std::exp(-0.5 * xi.squaredNorm()), 0.0); },
          std::sqrt(2.0 * std::log(1e12))};
}

Symbol Symbol::gaussian_angular(double c) {
  return {[c](const Vec3& xi) {
            const double r = xi.norm();
            const double wz = r > 0 ? xi.z() / r : 0.0;
            return std::complex<double>(std::exp(-0.5 * r * r) * (1.0 + c * wz), 0.0);
          },
          std::sqrt(2.0 * std::log((1.0 + std::abs(c)) * 1e12))};
}

Symbol Symbol::zero() {
  return {[](const Vec3&) { return std::complex<double>(0.0, 0.0); }, 1.0};
}

namespace {

std::vector<std::complex<double>> parametrix_pass(const PhaseFn& phase, const Symbol& f,
                                                  const std::vector<Vec3>& points, int nc, int np, int nl) {
  std::vector<double> cx, cw, lx, lw;
  gauss_legendre(nc, cx, cw);
  gauss_legendre(nl, lx, lw);
  const double L = f.lambda_max;
  // Direction nodes with their weights, and radial nodes on [0, L].
  std::vector<Vec3> dirs;
  std::vector<double> dw;
  for (int a = 0; a < nc; ++a) {
    const double ct = cx[a], st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
    for (int b = 0; b < np; ++b) {
      const double ph = 2.0 * M_PI * b / np;
      dirs.emplace_back(st * std::cos(ph), st * std::sin(ph), ct);
      dw.push_back(cw[a] * 2.0 * M_PI / np);
    }
  }
  std::vector<double> lam(nl), lwt(nl);
  for (int l = 0; l < nl; ++l) {
    lam[l] = 0.5 * L * (lx[l] + 1.0);
    lwt[l] = 0.5 * L * lw[l] * lam[l] * lam[l];
  }
  // Symbol table shared by all points.
  std::vector<std::complex<double>> F(dirs.size() * nl);
  for (std::size_t d = 0; d < dirs.size(); ++d)
    for (int l = 0; l < nl; ++l) F[d * nl + l] = f.f(lam[l] * dirs[d]);
  std::vector<std::complex<double>> out(points.size());
  parallel_for(points.size(), [&](std::size_t p) {
    std::complex<double> acc = 0.0;
    for (std::size_t d = 0; d < dirs.size(); ++d) {
      const double u = phase(points[p], dirs[d]);
      std::complex<double> inner = 0.0;
      for (int l = 0; l < nl; ++l) inner += lwt[l] * std::polar(1.0, lam[l] * u) * F[d * nl + l];
      acc += dw[d] * inner;
    }
    out[p] = acc;
  });
  return out;
}

}  // namespace

ParametrixResult evaluate_parametrix(const PhaseFn& phase, const Symbol& f, const std::vector<Vec3>& points,
                                     const ParametrixSpec& spec) {
  ParametrixResult r;
  r.points = points;
  r.values = parametrix_pass(phase, f, points, spec.n_cos, spec.n_phi, spec.n_lambda);
  if (!spec.check_doubling) return r;
  const auto fine = parametrix_pass(phase, f, points, 2 * spec.n_cos, 2 * spec.n_phi, 2 * spec.n_lambda);
  double scale = 0.0, diff = 0.0;
  for (std::size_t p = 0; p < points.size(); ++p) {
    scale = std::max(scale, std::abs(fine[p]));
    diff = std::max(diff, std::abs(fine[p] - r.values[p]));
  }
  r.doubling_change = scale > 0.0 ? diff / scale : 0.0;
  if (r.doubling_change > spec.tolerance) {
    std::ostringstream os;
    os << "doubling the nodes changed S f by " << r.doubling_change << " (relative), tolerance " << spec.tolerance;
    throw Error(ErrorKind::QuadratureUnderResolved, os.str());
  }
  return r;
}

void write_parametrix_csv(const std::string& path, const ParametrixResult& r) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out.precision(12);
  out << "x,y,z,re_S,im_S\n";
  for (std::size_t p = 0; p < r.points.size(); ++p)
    out << r.points[p].x() << ',' << r.points[p].y() << ',' << r.points[p].z() << ',' << r.values[p].real() << ','
        << r.values[p].imag() << '\n';
}

}  // namespace eikon
