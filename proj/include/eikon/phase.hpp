#pragma once

#include "eikon/background.hpp"
#include "eikon/foliation.hpp"

#include <complex>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace eikon {

/// Integer lattice of directions theta = it * dtheta, phi = ip * dphi.
struct OmegaLattice {
  double dtheta = M_PI / 8;
  double dphi = M_PI / 8;

  /// n_theta latitudes pole to pole, n_phi longitudes with the 2 pi endpoint repeated (9 x 17 -> pi / 8).
  static OmegaLattice from_grid(int n_theta, int n_phi);
  int n_theta() const;        // latitudes including both poles
  int phi_period() const;     // longitudes per turn
  double theta(int it) const { return it * dtheta; }
  double phi(int ip) const { return ip * dphi; }
};

struct DirectionKey {
  int it = 0;
  int ip = 0;
  bool operator<(const DirectionKey& o) const { return it != o.it ? it < o.it : ip < o.ip; }
  bool operator==(const DirectionKey& o) const { return it == o.it && ip == o.ip; }
};

/// Directions needed for omega-derivatives up to `order` (1: 5 points, 2: 3 x 3, 3: adds +-2 on both axes).
std::vector<DirectionKey> stencil(const DirectionKey& c, int order);

/// Per-direction foliations of one background, marched on demand.
class PhaseAtlas {
 public:
  PhaseAtlas(const Background& bg, const OmegaLattice& lattice, const MarchParams& march, bool leaf_data = true);

  /// Marches every missing direction (in parallel). Errors carry the direction.
  void build(const std::vector<DirectionKey>& keys);
  /// Every direction of the lattice, poles included once.
  void build_all();
  bool has(const DirectionKey& k) const;
  std::vector<DirectionKey> keys() const;

  const Background& background() const { return bg_; }
  const OmegaLattice& lattice() const { return lattice_; }
  const MarchParams& march_params() const { return march_; }
  Vec3 direction(const DirectionKey& k) const;
  const FoliationTrace& trace(const DirectionKey& k) const;

  /// Inverted foliation (no glue); optional lapse and covariant conormal of the leaf through x.
  double u_raw(const Vec3& x, const DirectionKey& k, double* a = nullptr, Vec3* Ncov = nullptr) const;
  /// Glued phase phi(|x|) u_raw + (1 - phi(|x|)) x.omega.
  double u(const Vec3& x, const DirectionKey& k) const;

  /// One `u_<it>_<ip>.grid` per built direction plus `manifest.txt`.
  void write(const std::string& dir, const Grid3& grid) const;

 private:
  struct Entry {
    FoliationTrace trace;
    std::unique_ptr<PhaseSampler> sampler;
  };
  DirectionKey canonical(const DirectionKey& k) const;
  const Entry& entry(const DirectionKey& k) const;

  const Background& bg_;
  OmegaLattice lattice_;
  MarchParams march_;
  bool leaf_data_;
  std::map<DirectionKey, std::unique_ptr<Entry>> entries_;
};

/// omega-derivatives of a scalar at fixed x, in the orthonormal frame (e_theta, e_phi).
struct OmegaJet {
  Vec3 omega, e_theta, e_phi;
  double value = 0.0;
  Vec2 d1 = Vec2::Zero();
  Mat2 d2 = Mat2::Zero();  // covariant Hessian on the unit sphere
  Vec2 d3 = Vec2::Zero();  // third derivatives along the theta and phi coordinate lines
  Vec3 tangent() const { return d1.x() * e_theta + d1.y() * e_phi; }
};

/// Differences of sample(key) over the stencil of c. Divisors are chosen so that first
/// spherical harmonics (such as x.omega) are differentiated exactly.
OmegaJet omega_jet(const PhaseAtlas& atlas, const DirectionKey& c, int order,
                   const std::function<double(const DirectionKey&)>& sample);
/// Jet of the glued phase at x.
OmegaJet phase_jet(const PhaseAtlas& atlas, const Vec3& x, const DirectionKey& c, int order);

struct IdentityStat {
  double max = 0.0;
  double l2 = 0.0;  // root mean square over the samples
};

struct OmegaIdentityReport {
  IdentityStat leaf_gradient;  // grad-slash d_omega u - a^{-1} d_omega N
  IdentityStat normal_derivative;      // N(d_omega u) + a^{-1} d_omega log a
  IdentityStat second_derivative;             // second-derivative identity for N
  IdentityStat tangency;         // |d_omega u . omega|
  double d3_bound = 0.0;         // max |d_omega^3 u| (report only)
  std::size_t samples = 0;
  double dtheta = 0.0;
  double dx = 0.0;
};

/// Residuals of the omega-derivative identities at the given points (raw foliation and
/// leaf data; keep the points inside the unglued ball |x| <= 1). Spatial derivatives by
/// centred differences with step dx. `third` adds the +-2 directions for d3_bound.
OmegaIdentityReport omega_identity_residuals(PhaseAtlas& atlas, const DirectionKey& c,
                                             const std::vector<Vec3>& points, double dx, bool third = true);

/// Lattice of sample points with spacing h inside |x| <= r.
std::vector<Vec3> ball_points(double r, double h);

struct ChartReport {
  std::size_t samples = 0;
  double det_min = 0.0;
  double det_max = 0.0;
  double det_deviation = 0.0;  // max | |det| - 1 |
  double orthogonality = 0.0;  // max |J^T J - I| (Phi_u only)
  int collisions = 0;
  double det_identity = 0.0;           // max |det(J_Phi^T J_Phi) - a^{-2} det(J_u^T J_u)| (Phi only)
  std::size_t det_identity_samples = 0;
};

/// Phi_u = d_omega u on the stored leaf u of direction c, Jacobian from a^{-1} d_omega N.
/// Injectivity is checked by binning the images on a bins x bins raster.
ChartReport chart_phi_u(PhaseAtlas& atlas, const DirectionKey& c, double u, int bins = 256);
/// Phi = u omega + d_omega u on the nodes of grid, Jacobian by centred differences; the
/// determinant identity is compared on nodes with |x| <= identity_radius.
ChartReport chart_phi(PhaseAtlas& atlas, const DirectionKey& c, const Grid3& grid, double identity_radius = 1.0);

struct TaylorReport {
  std::vector<double> separation;  // |omega - nu|
  std::vector<double> d0, d1, d2;  // max over points of the three differences
  double slope0 = 0.0, slope1 = 0.0, slope2 = 0.0;
  double prefactor0 = 0.0, prefactor1 = 0.0, prefactor2 = 0.0;  // exp(intercept) of the fits
};

/// Compares u(., omega) with the frozen chart Phi_nu(.) . omega for omega = nu shifted by
/// `offsets` lattice steps in theta. Needs at least three separations spanning a factor 4.
TaylorReport taylor_compare(PhaseAtlas& atlas, const DirectionKey& nu, const std::vector<int>& offsets,
                            const std::vector<Vec3>& points);

/// Least-squares slope and intercept of log y against log x.
std::pair<double, double> loglog_fit(const std::vector<double>& x, const std::vector<double>& y);

using PhaseFn = std::function<double(const Vec3& x, const Vec3& omega)>;
PhaseFn flat_phase();
/// x.omega plus a cubic interpolation of u - x.omega over the built lattice.
PhaseFn atlas_phase(const PhaseAtlas& atlas);

struct Symbol {
  std::function<std::complex<double>(const Vec3& xi)> f;
  double lambda_max = 0.0;  // |f(lambda omega)| < 1e-12 beyond
  static Symbol gaussian();
  /// e^{-|xi|^2/2} times a smooth angular factor 1 + c * omega_z.
  static Symbol gaussian_angular(double c);
  static Symbol zero();
};

struct ParametrixSpec {
  int n_cos = 40;     // Gauss-Legendre in cos(theta)
  int n_phi = 48;     // trapezoid in phi
  int n_lambda = 48;  // Gauss-Legendre in lambda on [0, lambda_max]
  double tolerance = 1e-3;
  bool check_doubling = true;
};

struct ParametrixResult {
  std::vector<Vec3> points;
  std::vector<std::complex<double>> values;
  double doubling_change = 0.0;  // max relative change when every node count doubles
};

/// S f(0, x) = int_{S^2} int_0^inf e^{i lambda u(x, omega)} f(lambda omega) lambda^2 dlambda domega.
/// Throws QuadratureUnderResolved when doubling moves a value by more than the tolerance.
ParametrixResult evaluate_parametrix(const PhaseFn& phase, const Symbol& f, const std::vector<Vec3>& points,
                                     const ParametrixSpec& spec = {});
void write_parametrix_csv(const std::string& path, const ParametrixResult& r);

/// Gauss-Legendre nodes and weights on [-1, 1].
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w);

}  // namespace eikon
