#pragma once

#include "eikon/grid.hpp"

#include <array>
#include <memory>
#include <string>

namespace eikon {

enum class Family { Flat, Bump, Table };

Family parse_family(const std::string& name);
const char* family_name(Family f);

/// Computational cube [-L, L]^3 with uniform spacing.
struct GridSpec {
  double half_width = 3.0;
  double spacing = 0.1;
};

struct BackgroundParams {
  Family family = Family::Flat;
  double epsilon = 0.0;
  double support_radius = 1.0;
  /// Amplitude of the g-traceless extrinsic perturbation (bump family only).
  double extrinsic_amplitude = 0.0;
  GridSpec grid;
  std::string metric_table;     // table family
  std::string extrinsic_table;  // optional; k = 0 when empty
};

using Sym3Array = std::array<Mat3, 3>;

/// Metric with first and second coordinate derivatives at one point:
/// dg[k] = d_k g, ddg[k][l] = d_k d_l g.
struct MetricJet {
  Mat3 g = Mat3::Identity();
  Sym3Array dg{Mat3::Zero(), Mat3::Zero(), Mat3::Zero()};
  std::array<Sym3Array, 3> ddg{};
  MetricJet();
};

struct CurvatureSample {
  Sym3Array christoffel;  // christoffel[k](i, j) = Gamma^k_ij
  Mat3 ricci = Mat3::Zero();
  double scalar = 0.0;
};

class Background {
 public:
  Family family() const { return params_.family; }
  double epsilon() const { return params_.epsilon; }
  double support_radius() const { return params_.support_radius; }
  const GridSpec& grid() const { return params_.grid; }
  const BackgroundParams& params() const { return params_; }

  /// True when g = delta and k = 0 identically in a neighbourhood of x.
  bool flat_at(const Vec3& x) const;
  /// True for the Euclidean family (everything vanishes).
  bool is_flat() const;

  Mat3 metric(const Vec3& x) const;
  Mat3 extrinsic(const Vec3& x) const;

  /// Exact jet for closed-form families, finite differences for tables.
  MetricJet jet(const Vec3& x) const;
  /// Second-order centred differences of the metric with step dx.
  MetricJet fd_jet(const Vec3& x, double dx) const;
  /// Value and first derivatives only; cheaper than jet().
  void metric_and_gradient(const Vec3& x, Mat3& g, Sym3Array& dg) const;

  /// d_l k_ij by centred differences with step dx.
  Sym3Array extrinsic_gradient(const Vec3& x, double dx) const;

 private:
  friend Background make_background(const BackgroundParams& p);
  BackgroundParams params_;
  Mat3 shape_ = Mat3::Zero();
  Mat3 kshape_ = Mat3::Zero();
  std::shared_ptr<const Field3> gtable_;
  std::shared_ptr<const Field3> ktable_;

  Mat3 table_value(const Field3& t, const Vec3& x) const;
};

/// Validates the invariants (ellipticity, flat collar, maximal slicing) on the grid.
Background make_background(const BackgroundParams& p);
Background make_background(Family family, double epsilon, const GridSpec& grid = {});

/// Fixed symmetric shape matrix of the built-in bump perturbation.
Mat3 bump_shape();
/// Radial profile (1 - s)^6 in s = |x|^2/rho^2 (C^5, supported in s < 1) and its
/// first two s-derivatives.
void bump_profile(double s, double& psi, double& dpsi, double& d2psi);

Sym3Array christoffel(const Mat3& g, const Sym3Array& dg);
CurvatureSample curvature_from_jet(const MetricJet& jet);

/// Exact for closed-form families; table family uses its finite-difference jet.
CurvatureSample curvature(const Background& bg, const Vec3& x);
/// Forced finite-difference path; throws BoundaryStencil when x +- dx leaves the cube.
CurvatureSample curvature_fd(const Background& bg, const Vec3& x, double dx);

struct ConstraintResiduals {
  double momentum = 0.0;
  double hamiltonian = 0.0;
  double trace = 0.0;
};

/// Maxima over interior grid nodes of |div k|, |R - |k|^2 + (tr k)^2| and |tr k|.
ConstraintResiduals constraint_residuals(const Background& bg);

/// Write/read 6-component symmetric tensor tables (xx xy xz yy yz zz).
Field3 sample_metric_table(const Background& bg, const Grid3& grid);
Field3 sample_extrinsic_table(const Background& bg, const Grid3& grid);

inline Mat3 sym_from6(const double* c) {
  Mat3 m;
  m << c[0], c[1], c[2], c[1], c[3], c[4], c[2], c[4], c[5];
  return m;
}

}  // namespace eikon
