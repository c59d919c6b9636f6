#pragma once

#include "eikon/foliation.hpp"
#include "eikon/grid.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace eikon {

/// How tangential derivatives are taken on a periodic surface grid. Spectral
/// (Fourier collocation) needs an odd node count per side so that only the
/// constant mode is annihilated.
enum class Differencing { Spectral, Central };

/// Periodic n x n patch [origin, origin + period)^2 carrying a metric gamma.
struct Surface2D {
  int n = 0;
  double period = 0.0;
  Vec2 origin = Vec2::Zero();
  Differencing scheme = Differencing::Spectral;

  std::vector<Mat2> gamma;
  std::vector<Mat2> gamma_inv;
  std::vector<double> sqrt_gamma;
  std::vector<std::array<Mat2, 2>> christoffel;  // christoffel[C](A, B) = Gamma^C_AB
  std::vector<double> K;                          // Gauss curvature

  std::size_t size() const { return static_cast<std::size_t>(n) * n; }
  std::size_t index(int i, int j) const { return static_cast<std::size_t>(i) + static_cast<std::size_t>(n) * j; }
  double spacing() const { return period / n; }
  Vec2 point(int i, int j) const { return origin + spacing() * Vec2(i, j); }

  /// Builds gamma from a closed form and derives the connection and K with the
  /// chosen differencing. Throws DegenerateMetric if gamma is not SPD somewhere.
  static Surface2D from_metric(int n, double period, Differencing scheme,
                               const std::function<Mat2(const Vec2&)>& metric);
  /// Flat square torus of the given period.
  static Surface2D flat_torus(int n, double period = 2.0 * M_PI, Differencing scheme = Differencing::Spectral);
  /// Torus [0, period)^2 with gamma = I + eps P(2 pi x / period), P a fixed trigonometric
  /// symmetric matrix with entries bounded by 0.6.
  static Surface2D perturbed_torus(int n, double eps, double period = 2.0 * M_PI,
                                   Differencing scheme = Differencing::Spectral);
  /// Leaf u_stored[leaf] of a trace, resampled onto n x n periodic nodes over
  /// [-L, L)^2. The pinned collar is flat, so the periodic extension is smooth when
  /// the ambient metric is Euclidean near the collar.
  static Surface2D from_leaf(const Background& bg, const FoliationTrace& trace, std::size_t leaf, int n,
                             Differencing scheme = Differencing::Spectral);

  /// d f / d q^axis.
  std::vector<double> derivative(const std::vector<double>& f, int axis) const;
  double integrate(const std::vector<double>& f) const;
  double area() const;
  /// L^p norm against the area element; p <= 0 means the sup norm.
  double norm(const std::vector<double>& f, double p = 2.0) const;
  double inner(const std::vector<double>& f, const std::vector<double>& g) const;
  /// Pointwise |grad f|_gamma.
  std::vector<double> gradient_norm(const std::vector<double>& f) const;
  /// (1/sqrt gamma) d_A (sqrt gamma gamma^AB d_B f).
  std::vector<double> laplacian(const std::vector<double>& f) const;
  /// Samples a function of the patch coordinates.
  std::vector<double> sample(const std::function<double(const Vec2&)>& f) const;

 private:
  void finish();
  mutable std::shared_ptr<Eigen::MatrixXd> dmat_;  // 1D spectral differentiation matrix
};

/// Laplace-Beltrami operator with its spectral factorisation (dense path) or an
/// implicit-Euler heat stepper (large grids).
class HeatFrame {
 public:
  explicit HeatFrame(const Surface2D& surface, std::size_t dense_limit = 4096);

  const Surface2D& surface() const { return surface_; }
  bool spectral() const { return spectral_; }
  const Eigen::VectorXd& eigenvalues() const { return lambda_; }
  /// Area-orthonormal eigenfunctions as columns.
  const Eigen::MatrixXd& eigenvectors() const { return phi_; }
  double lambda_max() const { return lambda_max_; }

  /// f -> sum_i s(lambda_i) <f, phi_i> phi_i. Throws SpectralUnavailable on the stepper path.
  std::vector<double> apply_symbol(const std::vector<double>& f, const std::function<double(double)>& s) const;
  /// Delta f through the assembled operator.
  std::vector<double> laplacian(const std::vector<double>& f) const;

  /// ||M L - (M L)^T|| / ||M L|| of the assembled operator before symmetrisation.
  double self_adjointness_residual() const { return asym_; }
  /// max_i ||L phi_i + lambda_i phi_i||_2 (area-weighted); 0 on the stepper path.
  double eigen_residual() const;

  /// Implicit-Euler heat flow over time tau in at least 16 substeps.
  std::vector<double> step_heat(const std::vector<double>& f, double tau, int substeps = 16) const;

 private:
  Surface2D surface_;
  bool spectral_ = true;
  Eigen::VectorXd mass_;          // sqrt(gamma) h^2
  Eigen::MatrixXd stiffness_;     // dense A with M L = -A (spectral path)
  Eigen::SparseMatrix<double> sparse_stiffness_;
  Eigen::VectorXd lambda_;
  Eigen::MatrixXd phi_;
  double lambda_max_ = 0.0;
  double asym_ = 0.0;
};

/// U(tau) f.
std::vector<double> heat_evolve(const HeatFrame& frame, const std::vector<double>& f, double tau);

struct LPSettings {
  int J = -1;  // top level; -1 picks the smallest J meeting the tail bound
  int quad_nodes = 400;
  double quad_tau_min = 1e-8;
  double quad_tau_max = 50.0;
  double tail_tol = 1e-8;
};

/// Resolves J = -1 and checks 4^{-(J+1)} lambda_max <= tail_tol on spectral frames.
LPSettings resolve(const LPSettings& s, const HeatFrame& frame);

/// Symbol of P_j: exp(-lambda 4^{-(j+1)}) - exp(-lambda 4^{-j}); of P_{<0}: exp(-lambda).
double lp_symbol(int j, double lambda);
double lp_low_symbol(double lambda);

std::vector<double> lp_project(const HeatFrame& frame, const LPSettings& s, const std::vector<double>& f, int j);
std::vector<double> lp_low(const HeatFrame& frame, const LPSettings& s, const std::vector<double>& f);

/// max_{s >= 0} s (exp(-s/4) - exp(-s)): the sharp band constant of the heat-difference kernel.
double finite_band_bound();
/// max over a lambda grid on [0, lambda_max] of sum_j symbol_j(lambda)^2.
double bessel_symbol_bound(double lambda_max, int J);

struct BatteryRow {
  std::string property;
  std::string probe;
  double value = 0.0;
  double tolerance = 0.0;  // <= 0: report only
  bool pass = true;
};

struct LPBattery {
  double c_band = 0.0;
  double c_star = 0.0;
  double c_bessel = 0.0;
  double bessel_symbol = 0.0;
  std::vector<double> bern_p{4.0, 8.0};
  std::vector<double> c_bern;
  double c_lp_1 = 0.0, c_lp_inf = 0.0;  // max_j ||P_j f||_p / ||f||_p
  double partition = 0.0;                // max relative partition defect
  std::vector<int> band_argmax;          // per probe, level realising c_band
  std::vector<BatteryRow> rows;
};

/// Finite band, Bessel, weak Bernstein, L^p boundedness and partition over the probes.
LPBattery lp_property_battery(const HeatFrame& frame, const LPSettings& s,
                              const std::vector<std::pair<std::string, std::vector<double>>>& probes);
void write_battery_csv(const std::string& path, const std::vector<BatteryRow>& rows);

enum class LambdaMethod { Spectral, Quadrature };

/// Fractional power of I - Delta. The quadrature route evaluates the Gamma-function
/// integral of the heat flow on log-spaced nodes and needs alpha < 0.
std::vector<double> lambda_alpha(const HeatFrame& frame, const std::vector<double>& f, double alpha,
                                 LambdaMethod method = LambdaMethod::Spectral, const LPSettings& s = {});

double sobolev_norm(const HeatFrame& frame, const LPSettings& s, const std::vector<double>& f, double b);
/// Range [c1, c2] of ||f||_{H^0} / ||f||_2 over the resolved spectrum.
std::pair<double, double> sobolev_equivalence(const HeatFrame& frame, const LPSettings& s);

struct BesovReport {
  double value = 0.0;
  double tail = 0.0;  // 2^{J+1} max_u ||(I - U(4^{-(J+1)})) F||
  int J = 0;
};

/// sum_j 2^j max_u ||P_j F||_2 + max_u ||P_{<0} F||_2 over per-leaf frames.
BesovReport besov_norm(const std::vector<const HeatFrame*>& frames, const std::vector<std::vector<double>>& F,
                       const LPSettings& s = {});

/// Both integrals of an identity and |LHS - RHS| / (|LHS| + |RHS| + 1e-30).
struct IdentitySides {
  double lhs = 0.0;
  double rhs = 0.0;
  double residual = 0.0;
};

/// int |Hess f|^2 against int |Lap f|^2 - int K |grad f|^2.
IdentitySides bochner_identity(const Surface2D& s, const std::vector<double>& f);
IdentitySides bochner_identity_1form(const Surface2D& s, const std::vector<double>& F1, const std::vector<double>& F2);
/// int |nabla F|^2 + 2 K |F|^2 against 2 int |div F|^2.
IdentitySides hodge_identity(const Surface2D& s, const std::vector<Mat2>& F);

double bochner_residual(const Surface2D& s, const std::vector<double>& f);
/// Componentwise Bochner identity for a 1-form on a flat surface.
double bochner_residual_1form(const Surface2D& s, const std::vector<double>& F1, const std::vector<double>& F2);
/// Hodge identity for a symmetric traceless 2-tensor. Throws NotTraceless.
double hodge_residual(const Surface2D& s, const std::vector<Mat2>& F);

struct InequalityReport {
  std::vector<std::string> probes;
  std::vector<double> isoperimetric;  // ||f||_2 / (||grad f||_1 + ||f||_1)
  std::vector<double> gagliardo;      // ||f||_p / (||grad f||_2^{1-2/p} ||f||_2^{2/p} + ||f||_2)
  std::vector<double> sup;            // ||f||_inf / (||grad f||_p + ||f||_p)
  double max_isoperimetric = 0.0, max_gagliardo = 0.0, max_sup = 0.0;
};

InequalityReport inequality_ratios(const Surface2D& s,
                                   const std::vector<std::pair<std::string, std::vector<double>>>& probes,
                                   double p = 4.0);

}  // namespace eikon
