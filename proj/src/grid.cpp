#include "eikon/grid.hpp"

#include "eikon/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace eikon {

Grid3 Grid3::cube(double half_width, double spacing) {
  if (!(spacing > 0.0) || !(half_width > 0.0))
    throw Error(ErrorKind::InvalidConfig, "grid spacing and half width must be positive");
  const int n = static_cast<int>(std::lround(2.0 * half_width / spacing)) + 1;
  Grid3 g;
  g.nx = g.ny = g.nz = n;
  g.spacing = spacing;
  g.origin = Vec3::Constant(-0.5 * (n - 1) * spacing);
  return g;
}

bool Grid3::contains(const Vec3& x, double margin) const {
  const int n[3] = {nx, ny, nz};
  for (int d = 0; d < 3; ++d) {
    if (n[d] == 1) continue;
    const double lo = origin[d] + margin;
    const double hi = origin[d] + (n[d] - 1) * spacing - margin;
    if (x[d] < lo - 1e-12 || x[d] > hi + 1e-12) return false;
  }
  return true;
}

void write_grid_file(const std::string& path, const Field3& field, int precision) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path + " for writing");
  const Grid3& g = field.grid;
  out << std::setprecision(precision);
  out << "DIMS " << g.nx << ' ' << g.ny << ' ' << g.nz << " ORIGIN " << g.origin.x() << ' '
      << g.origin.y() << ' ' << g.origin.z() << " SPACING " << g.spacing << '\n';
  for (std::size_t n = 0; n < g.size(); ++n) {
    for (int c = 0; c < field.components; ++c) {
      if (c) out << ' ';
      out << field.at(n, c);
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path);
}

Field3 read_grid_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::string tag;
  Grid3 g;
  hs >> tag >> g.nx >> g.ny >> g.nz;
  if (tag != "DIMS") throw Error(ErrorKind::Io, path + ": expected DIMS header");
  hs >> tag >> g.origin.x() >> g.origin.y() >> g.origin.z();
  if (tag != "ORIGIN") throw Error(ErrorKind::Io, path + ": expected ORIGIN");
  hs >> tag >> g.spacing;
  if (tag != "SPACING" || !hs) throw Error(ErrorKind::Io, path + ": malformed header");
  if (g.nx < 1 || g.ny < 1 || g.nz < 1 || !(g.spacing > 0))
    throw Error(ErrorKind::Io, path + ": invalid dimensions");

  // Component count is taken from the first data row.
  std::string line;
  while (std::getline(in, line) && line.find_first_not_of(" \t\r") == std::string::npos) {
  }
  std::vector<double> first;
  {
    std::istringstream ls(line);
    double v;
    while (ls >> v) first.push_back(v);
  }
  if (first.empty()) throw Error(ErrorKind::Io, path + ": no data rows");
  Field3 f(g, static_cast<int>(first.size()));
  std::copy(first.begin(), first.end(), f.data.begin());
  std::size_t k = first.size();
  double v;
  while (k < f.data.size() && (in >> v)) f.data[k++] = v;
  if (k != f.data.size())
    throw Error(ErrorKind::Io, path + ": expected " + std::to_string(f.data.size()) + " values, got " +
                                   std::to_string(k));
  return f;
}

Stencil1 lagrange_stencil(double pos, int n_nodes, int npts) {
  Stencil1 s;
  if (n_nodes <= 1) {
    s.start = 0;
    s.npts = 1;
    s.w[0] = 1.0;
    return s;
  }
  npts = std::min(npts, n_nodes);
  s.npts = npts;
  int base = static_cast<int>(std::floor(pos)) - (npts / 2 - 1);
  base = std::clamp(base, 0, n_nodes - npts);
  s.start = base;
  for (int i = 0; i < npts; ++i) {
    double w = 1.0;
    const double xi = base + i;
    for (int m = 0; m < npts; ++m) {
      if (m == i) continue;
      w *= (pos - (base + m)) / (xi - (base + m));
    }
    s.w[i] = w;
  }
  return s;
}

Stencil3 make_stencil(const Grid3& g, const Vec3& x, int npts) {
  const Vec3 p = (x - g.origin) / g.spacing;
  return {lagrange_stencil(p.x(), g.nx, npts), lagrange_stencil(p.y(), g.ny, npts),
          lagrange_stencil(p.z(), g.nz, npts)};
}

double apply(const Field3& f, const Stencil3& s, int c) {
  const Grid3& g = f.grid;
  double acc = 0.0;
  for (int k = 0; k < s.sz.npts; ++k) {
    double ay = 0.0;
    for (int j = 0; j < s.sy.npts; ++j) {
      double ax = 0.0;
      const std::size_t row = g.index(s.sx.start, s.sy.start + j, s.sz.start + k);
      for (int i = 0; i < s.sx.npts; ++i) ax += s.sx.w[i] * f.at(row + i, c);
      ay += s.sy.w[j] * ax;
    }
    acc += s.sz.w[k] * ay;
  }
  return acc;
}

double interpolate(const Field3& f, const Vec3& x, int c, int npts) {
  return apply(f, make_stencil(f.grid, x, npts), c);
}

}  // namespace eikon
