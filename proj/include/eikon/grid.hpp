#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace eikon {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

/// Uniform node-centred grid, x-fastest ordering. A 2D grid is a Grid3 with nz == 1.
struct Grid3 {
  int nx = 0;
  int ny = 0;
  int nz = 0;
  Vec3 origin = Vec3::Zero();
  double spacing = 1.0;

  /// Nodes at -L + i h, i = 0..n-1, with n = round(2L/h) + 1.
  static Grid3 cube(double half_width, double spacing);

  std::size_t size() const { return static_cast<std::size_t>(nx) * ny * nz; }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(nx) * (j + static_cast<std::size_t>(ny) * k);
  }
  Vec3 point(int i, int j, int k) const {
    return origin + spacing * Vec3(i, j, k);
  }
  bool contains(const Vec3& x, double margin = 0.0) const;
};

/// Multi-component scalar data on a Grid3 (component-fastest storage).
struct Field3 {
  Grid3 grid;
  int components = 1;
  std::vector<double> data;

  Field3() = default;
  Field3(const Grid3& g, int ncomp, double fill = 0.0)
      : grid(g), components(ncomp), data(g.size() * ncomp, fill) {}

  double& at(std::size_t node, int c = 0) { return data[node * components + c]; }
  double at(std::size_t node, int c = 0) const { return data[node * components + c]; }
  Vec3 vec(std::size_t node) const {
    return Vec3(data[node * components], data[node * components + 1], data[node * components + 2]);
  }
  void set_vec(std::size_t node, const Vec3& v) {
    for (int c = 0; c < 3; ++c) data[node * components + c] = v[c];
  }
};

/// ASCII grid file: header `DIMS nx ny nz ORIGIN ox oy oz SPACING h` followed by one
/// row per node (x-fastest) holding all components.
void write_grid_file(const std::string& path, const Field3& field, int precision = 17);
Field3 read_grid_file(const std::string& path);

/// Lagrange interpolation stencil along one axis.
struct Stencil1 {
  int start = 0;
  int npts = 4;
  std::array<double, 6> w{};
};

/// `pos` is the fractional node coordinate; npts is 4 (cubic) or 6 (quintic).
Stencil1 lagrange_stencil(double pos, int n_nodes, int npts = 4);

/// Tensor-product Lagrange interpolation of component c of a 3D field.
double interpolate(const Field3& f, const Vec3& x, int c = 0, int npts = 4);

/// Same stencil weights reused for several components.
struct Stencil3 {
  Stencil1 sx, sy, sz;
};
Stencil3 make_stencil(const Grid3& g, const Vec3& x, int npts = 4);
double apply(const Field3& f, const Stencil3& s, int c = 0);

}  // namespace eikon
