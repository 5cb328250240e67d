#pragma once

// Triangulated disk with electrodes on its boundary.

#include <array>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "eitopt/common.hpp"

namespace eitopt {

// Angle normalized into [0, 2*pi).
inline double wrap_angle(double theta) {
  double t = std::fmod(theta, two_pi);
  if (t < 0.0) t += two_pi;
  if (t >= two_pi) t = 0.0;
  return t;
}

// Shortest angular distance, in [0, pi].
inline double angular_distance(double a, double b) {
  double d = std::abs(wrap_angle(a) - wrap_angle(b));
  return std::min(d, two_pi - d);
}

struct ElectrodeLayout {
  std::vector<double> centers;     // theta_c,l in radians
  double half_width = 0.12;        // w in radians
  std::vector<double> impedances;  // Z_l in Ohm

  static ElectrodeLayout equispaced(int m, double half_width, double impedance) {
    ElectrodeLayout layout;
    layout.half_width = half_width;
    for (int l = 0; l < m; ++l) layout.centers.push_back(two_pi * l / m);
    layout.impedances.assign(static_cast<std::size_t>(m), impedance);
    layout.validate();
    return layout;
  }

  std::size_t size() const { return centers.size(); }

  void validate() const {
    if (centers.empty()) throw ConfigError("electrode layout needs at least one electrode");
    if (impedances.size() != centers.size())
      throw ConfigError("electrode layout: one impedance per electrode required");
    for (double z : impedances)
      if (!(z > 0.0)) throw ConfigError("electrode layout: contact impedances must be positive");
    if (!(half_width >= 0.0) || half_width > pi)
      throw ConfigError("electrode layout: half width must lie in [0, pi]");
    // Closed arcs may touch at an endpoint but not overlap.
    const double slack = 1e-12;
    for (std::size_t a = 0; a < centers.size(); ++a)
      for (std::size_t b = a + 1; b < centers.size(); ++b)
        if (angular_distance(centers[a], centers[b]) < 2.0 * half_width - slack)
          throw ConfigError("electrode layout: electrode arcs overlap");
  }

  bool contains(std::size_t l, double theta) const {
    return angular_distance(theta, centers[l]) <= half_width;
  }
};

// Fraction of the boundary covered by electrodes: m * 2w / (2 pi).
inline double electrode_coverage(const ElectrodeLayout& layout) {
  return static_cast<double>(layout.size()) * 2.0 * layout.half_width / two_pi;
}

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct BoundaryEdge {
  int a = 0;  // vertex at theta_begin
  int b = 0;  // vertex at theta_end
  double theta_begin = 0.0;
  double theta_end = 0.0;  // theta_begin < theta_end <= 2 pi
  int electrode = -1;      // 0-based electrode index, -1 when untagged

  double midpoint() const { return 0.5 * (theta_begin + theta_end); }
  double span() const { return theta_end - theta_begin; }
};

struct DiskMesh {
  double radius = 0.0;
  int n_boundary = 0;
  std::vector<Point> vertices;
  std::vector<std::array<int, 3>> triangles;  // counterclockwise
  std::vector<BoundaryEdge> boundary_edges;   // closed loop, counterclockwise

  std::size_t n_vertices() const { return vertices.size(); }
  std::size_t n_triangles() const { return triangles.size(); }

  double signed_area(std::size_t e) const {
    const auto& t = triangles[e];
    const Point& p0 = vertices[t[0]];
    const Point& p1 = vertices[t[1]];
    const Point& p2 = vertices[t[2]];
    return 0.5 * ((p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y));
  }
  double area(std::size_t e) const { return signed_area(e); }

  Point centroid(std::size_t e) const {
    const auto& t = triangles[e];
    return {(vertices[t[0]].x + vertices[t[1]].x + vertices[t[2]].x) / 3.0,
            (vertices[t[0]].y + vertices[t[1]].y + vertices[t[2]].y) / 3.0};
  }

  std::vector<double> areas() const {
    std::vector<double> a(n_triangles());
    for (std::size_t e = 0; e < a.size(); ++e) a[e] = area(e);
    return a;
  }

  double total_area() const { return eitopt::sum(areas()); }
};

namespace detail {

inline double distance(const Point& p, const Point& q) { return std::hypot(p.x - q.x, p.y - q.y); }

// Triangulates the annulus between two concentric rings, both starting at
// angle 0 and ordered counterclockwise. Picks the shorter diagonal at each step.
inline void stitch_rings(const std::vector<Point>& v, int inner_base, int n_inner, int outer_base,
                         int n_outer, std::vector<std::array<int, 3>>& out) {
  int a = 0;
  int b = 0;
  auto inner = [&](int i) { return inner_base + (i % n_inner); };
  auto outer = [&](int i) { return outer_base + (i % n_outer); };
  while (a < n_inner || b < n_outer) {
    bool advance_inner;
    if (a == n_inner) {
      advance_inner = false;
    } else if (b == n_outer) {
      advance_inner = true;
    } else {
      const double d_inner = distance(v[outer(b)], v[inner(a + 1)]);
      const double d_outer = distance(v[inner(a)], v[outer(b + 1)]);
      advance_inner = d_inner < d_outer;
    }
    if (advance_inner) {
      out.push_back({inner(a), outer(b), inner(a + 1)});
      ++a;
    } else {
      out.push_back({inner(a), outer(b), outer(b + 1)});
      ++b;
    }
  }
}

}  // namespace detail

// Structured concentric-ring mesh. K = n_v / 4 rings; ring k sits at radius
// r_Q k / K and holds max(6, 4k) vertices, so the outer ring carries exactly
// n_v uniformly spaced boundary vertices.
inline DiskMesh build_disk_mesh(double radius, int n_v) {
  if (!(radius > 0.0)) throw ConfigError("disk radius must be positive");
  if (n_v < 12 || n_v % 4 != 0)
    throw ConfigError("boundary vertex count must be >= 12 and divisible by 4, got " +
                      std::to_string(n_v));
  DiskMesh mesh;
  mesh.radius = radius;
  mesh.n_boundary = n_v;

  const int rings = n_v / 4;
  mesh.vertices.push_back({0.0, 0.0});
  std::vector<int> base(rings + 1, 0);
  std::vector<int> count(rings + 1, 1);
  for (int k = 1; k <= rings; ++k) {
    base[k] = static_cast<int>(mesh.vertices.size());
    count[k] = std::max(6, (n_v * k) / rings);
    const double rk = (k == rings) ? radius : radius * k / rings;
    for (int j = 0; j < count[k]; ++j) {
      const double theta = two_pi * j / count[k];
      mesh.vertices.push_back({rk * std::cos(theta), rk * std::sin(theta)});
    }
  }

  for (int j = 0; j < count[1]; ++j)
    mesh.triangles.push_back({0, base[1] + j, base[1] + (j + 1) % count[1]});
  for (int k = 2; k <= rings; ++k)
    detail::stitch_rings(mesh.vertices, base[k - 1], count[k - 1], base[k], count[k],
                         mesh.triangles);

  const int b0 = base[rings];
  for (int j = 0; j < n_v; ++j) {
    BoundaryEdge edge;
    edge.a = b0 + j;
    edge.b = b0 + (j + 1) % n_v;
    edge.theta_begin = two_pi * j / n_v;
    edge.theta_end = (j + 1 == n_v) ? two_pi : two_pi * (j + 1) / n_v;
    mesh.boundary_edges.push_back(edge);
  }
  return mesh;
}

// Tags each boundary edge with the electrode whose arc contains its midpoint.
inline DiskMesh tag_electrodes(DiskMesh mesh, const ElectrodeLayout& layout) {
  for (auto& edge : mesh.boundary_edges) {
    edge.electrode = -1;
    for (std::size_t l = 0; l < layout.size(); ++l) {
      if (layout.contains(l, edge.midpoint())) {
        edge.electrode = static_cast<int>(l);
        break;
      }
    }
  }
  return mesh;
}

struct Inclusion {
  double x = 0.0;
  double y = 0.0;
  double r = 0.0;
  bool contains(const Point& p) const {
    return (p.x - x) * (p.x - x) + (p.y - y) * (p.y - y) <= r * r;
  }
};

struct PhantomSpec {
  double background = 0.2;       // sigma_h
  double inclusion_value = 0.4;  // sigma_c
  std::vector<Inclusion> inclusions;

  // Four-spot breast phantom on the r_Q = 0.1 disk.
  static PhantomSpec reference() {
    PhantomSpec spec;
    spec.inclusions = {{0.0, 0.05, 0.03},
                       {-0.075, -0.01, 0.0063},
                       {-0.015, -0.02, 0.0122},
                       {0.025, -0.055, 0.0235}};
    return spec;
  }

  void validate(double domain_radius) const {
    if (!(background > 0.0)) throw ConfigError("phantom background must be positive");
    if (inclusion_value < background)
      throw ConfigError("phantom inclusion value must not be below the background");
    for (const auto& inc : inclusions) {
      if (!(inc.r > 0.0)) throw ConfigError("phantom inclusion radius must be positive");
      if (std::hypot(inc.x, inc.y) >= domain_radius + inc.r)
        throw ConfigError("phantom inclusion does not intersect the domain");
    }
  }
};

// Element-centroid rasterization of a phantom onto P0.
inline ConductivityField rasterize_phantom(const DiskMesh& mesh, const PhantomSpec& spec,
                                           Bounds bounds = {}) {
  ConductivityField field;
  field.bounds = bounds;
  field.values.resize(mesh.n_triangles(), spec.background);
  for (std::size_t e = 0; e < mesh.n_triangles(); ++e) {
    const Point c = mesh.centroid(e);
    for (const auto& inc : spec.inclusions) {
      if (inc.contains(c)) {
        field.values[e] = spec.inclusion_value;
        break;
      }
    }
  }
  return field;
}

// Legacy ASCII VTK unstructured grid with one scalar per cell.
inline void write_vtk(std::ostream& os, const DiskMesh& mesh, std::span<const double> cell_values,
                      const std::string& name = "sigma") {
  if (cell_values.size() != mesh.n_triangles())
    throw Error("write_vtk: one value per triangle required");
  const auto old_precision = os.precision();
  os << std::setprecision(17);
  os << "# vtk DataFile Version 3.0\n";
  os << "eit-opt disk mesh\n";
  os << "ASCII\n";
  os << "DATASET UNSTRUCTURED_GRID\n";
  os << "POINTS " << mesh.n_vertices() << " double\n";
  for (const auto& p : mesh.vertices) os << p.x << ' ' << p.y << " 0\n";
  os << "CELLS " << mesh.n_triangles() << ' ' << 4 * mesh.n_triangles() << '\n';
  for (const auto& t : mesh.triangles) os << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  os << "CELL_TYPES " << mesh.n_triangles() << '\n';
  for (std::size_t e = 0; e < mesh.n_triangles(); ++e) os << "5\n";
  os << "CELL_DATA " << mesh.n_triangles() << '\n';
  os << "SCALARS " << name << " double 1\n";
  os << "LOOKUP_TABLE default\n";
  for (double v : cell_values) os << v << '\n';
  os.precision(old_precision);
}

}  // namespace eitopt
