#pragma once

#include "eikon/background.hpp"
#include "eikon/grid.hpp"

#include <functional>
#include <string>
#include <vector>

namespace eikon {

/// Spherical-coordinate tangent frame (e_theta, e_phi) of a unit direction;
/// right-handed so that t1 x t2 = omega. At the poles phi is taken as 0.
void tangent_frame(const Vec3& omega, Vec3& t1, Vec3& t2);
Vec3 direction(double theta, double phi);

/// Uniform square grid on the plane orthogonal to omega; q in [-L, L]^2.
struct LeafGrid {
  Vec3 omega = Vec3::UnitZ();
  Vec3 t1 = Vec3::UnitX();
  Vec3 t2 = Vec3::UnitY();
  int n = 0;
  double dq = 0.1;
  double half_width = 3.0;

  static LeafGrid make(const Vec3& omega, double half_width, double dq);
  std::size_t size() const { return static_cast<std::size_t>(n) * n; }
  std::size_t index(int i, int j) const { return static_cast<std::size_t>(i) + static_cast<std::size_t>(n) * j; }
  double coord(int i) const { return -half_width + i * dq; }
  Vec2 q(int i, int j) const { return Vec2(coord(i), coord(j)); }
  Vec3 point(int i, int j, double h) const { return coord(i) * t1 + coord(j) * t2 + h * omega; }
};

/// One level surface {q + h(q) omega} with its cached geometry.
struct Leaf {
  LeafGrid grid;
  double u = 0.0;
  std::vector<double> h;

  std::vector<Vec3> X;           // embedded point
  std::vector<Vec3> e1, e2;      // coordinate tangents t_A + h_A omega
  std::vector<Vec3> N;           // unit normal, contravariant
  std::vector<Vec3> Ncov;        // unit conormal, covariant
  std::vector<Mat2> gamma;       // induced metric
  std::vector<Mat2> gamma_inv;
  std::vector<double> sqrt_gamma;
  std::vector<Mat2> theta;       // second fundamental form g(nabla_{e_A} N, e_B)
  std::vector<Mat2> theta_hat;   // traceless part
  std::vector<double> tr_theta;
  std::vector<double> theta_sq;  // |theta|^2
  std::vector<double> kNN;
  std::vector<double> a;         // lapse 1 + k_NN - tr theta
  std::vector<double> N_omega;   // omega-component of the covariant conormal
  std::vector<double> K;         // intrinsic Gauss curvature of gamma
  std::vector<Mat3> ricci;       // ambient Ricci at X
  std::vector<double> scalar;    // ambient scalar curvature at X

  /// Largest |a - (1 + k_NN - tr theta)| over the nodes (definitional check).
  double lapse_definition_residual() const;
  /// Largest |g(N,N) - 1| and |g(N, e_A)| over the nodes.
  double orthonormality_residual(const Background& bg) const;
};

enum class GeometryDepth { Rate, Full };

/// Geometry of the graph leaf h over grid; Full adds intrinsic K, theta_hat and
/// ambient curvature. Throws GraphBreakdown or DegenerateMetric.
Leaf leaf_geometry(const Background& bg, const LeafGrid& grid, double u, const std::vector<double>& h,
                   GeometryDepth depth = GeometryDepth::Full);

/// Lapse check: throws FlowDegenerate when min a <= a_min on nodes with |q| < r_limit.
void check_lapse(const Leaf& leaf, double a_min, double r_limit = 1e300);

struct MarchParams {
  double half_width = 3.0;
  double dq = 0.1;
  double du = 0.002;
  double a_min = 0.1;
  double c_stab = 0.2;
  double r_pin = 2.5;
  double store_du = 0.016;
  /// Leaves whose full geometry (with both neighbours) is kept for structure checks.
  std::vector<double> probe_u{0.0};
};

/// Checks spacings, the parabolic step bound and the pinning collar.
void validate(const MarchParams& p);

/// One Heun step of d_u h = a / N_omega; nodes with |q| >= r_pin are pinned to u + du.
/// Reports the largest definitional lapse residual seen in either stage.
std::vector<double> advance(const Background& bg, const LeafGrid& grid, double u, const std::vector<double>& h,
                            double du, const MarchParams& p, double* definition_residual = nullptr);

/// Three consecutive leaves u* - du, u*, u* + du with full geometry.
struct ProbeTriplet {
  double u = 0.0;
  double du = 0.0;
  Leaf prev, mid, next;
};

struct FoliationTrace {
  LeafGrid grid;
  MarchParams params;
  std::vector<double> u_stored;
  std::vector<std::vector<double>> h_stored;
  std::vector<ProbeTriplet> probes;
  double max_definition_residual = 0.0;
  double min_lapse = 1.0;
  double min_rate_increment = 1e300;  // min over steps and nodes of h' - h
  int steps = 0;
};

FoliationTrace march(const Background& bg, const Vec3& omega, const MarchParams& p);

/// Write stored leaves as `LEAF u=<val>` blocks of h values, one grid row per line.
void write_trace(const std::string& path, const FoliationTrace& trace);

/// Quintic smoothstep cutoff: 1 on |x| <= 1, 0 on |x| >= 2.
double glue_cutoff(double r);

/// u and leaf data sampled on a 3D grid.
struct PhaseField {
  Grid3 grid;
  Vec3 omega;
  std::vector<double> u_raw;    // inverted foliation (x.omega outside the pinned disc)
  std::vector<double> u;        // glued phi u + (1 - phi) x.omega
  std::vector<double> a;        // lapse of the leaf through x
  std::vector<Vec3> Ncov;       // covariant unit conormal of the leaf through x
  bool has_leaf_data = false;
};

/// Samples the trace on grid. Leaf data (a, N) is optional since it needs a
/// geometry evaluation of every stored leaf.
PhaseField reconstruct(const Background& bg, const FoliationTrace& trace, const Grid3& grid, bool leaf_data);

/// Point evaluation of u_raw (and optionally a and N) from the trace.
struct PhaseSampler {
  PhaseSampler(const Background& bg, const FoliationTrace& trace, bool leaf_data);
  double u(const Vec3& x, double* a = nullptr, Vec3* Ncov = nullptr) const;

  const FoliationTrace& trace;
  bool leaf_data;
  std::vector<std::vector<double>> a_stored;
  std::vector<std::vector<Vec3>> N_stored;
};

struct ResidualStat {
  double max = 0.0;
  double l2 = 0.0;
};

struct StructureReport {
  ResidualStat gauss, codazzi, lapse_parabolic, frame, commutator;
  double dq = 0.0;
  double du = 0.0;
};

/// Probe scalar for the commutator identity with its gradient.
struct ProbeScalar {
  std::function<double(const Vec3&)> f;
  std::function<Vec3(const Vec3&)> grad;
  static ProbeScalar quadratic();
  static ProbeScalar gaussian(const Vec3& centre, double sigma);
};

/// Residuals of the Gauss, Codazzi, lapse, frame and commutator identities over
/// |q| <= r_eval on every probe triplet (max over probes).
StructureReport structure_residuals(const FoliationTrace& trace, const Background& bg,
                                    const ProbeScalar& probe = ProbeScalar::quadratic(), double r_eval = 2.0);
StructureReport structure_residuals(const ProbeTriplet& t, const Background& bg, const ProbeScalar& probe,
                                    double r_eval);

void write_structure_csv(const std::string& path, const std::vector<StructureReport>& reports);

/// Both sides of the coarea formula and of the first-variation formula.
struct CalculusReport {
  double coarea_bulk = 0.0;
  double coarea_leaves = 0.0;
  double coarea_mismatch = 0.0;    // relative
  double du_mismatch = 0.0;        // relative, with the lapse factor on the area variation
  double du_mismatch_literal = 0.0;  // relative, trace term without the lapse factor
  double du_step = 0.0;
};

CalculusReport calculus_checks(const Background& bg, const FoliationTrace& trace, const ProbeScalar& f,
                               double bulk_spacing);

/// max over |x| <= r of | |grad u|_g a - 1 |, with grad u by centred differences.
double eikonal_residual(const Background& bg, const PhaseField& field, double r = 1.0);

}  // namespace eikon
