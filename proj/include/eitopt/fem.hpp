#pragma once

// P1/P0 finite elements for the complete electrode model
//
//   div(sigma grad u) = 0                      in Q
//   sigma du/dn = chi_l (U_l - u) / Z_l        on dQ (summed over l)
//
// Boundary terms are integrated over the true circle: each boundary edge is
// parametrized by its polar angle, split at electrode arc endpoints, and
// integrated with two-point Gauss rules. Assembly and every electrode integral
// share this one quadrature, which keeps charge conservation exact.

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <span>
#include <sstream>
#include <vector>

#include "eitopt/common.hpp"
#include "eitopt/mesh.hpp"

namespace eitopt {

struct SmoothingConfig {
  double chi_eps = 0.0;      // boundary-condition smoothing width (radians); 0 = sharp
  double sobolev_ell = 0.0;  // gradient preconditioning length^2; 0 = L2 gradient

  void validate() const {
    if (!(chi_eps >= 0.0)) throw ConfigError("chi_eps must be >= 0");
    if (!(sobolev_ell >= 0.0)) throw ConfigError("sobolev_ell must be >= 0");
  }
};

// Electrode weight chi_{eps,l}(theta). eps = 0 gives the arc indicator with
// value 1/2 exactly at the endpoints.
inline double chi_weight(double theta, std::size_t l, const ElectrodeLayout& layout, double eps) {
  const double c = layout.centers[l];
  const double w = layout.half_width;
  // Shift by a period only when needed so that theta = c +- w stays exact.
  if (theta - c > pi) theta -= two_pi;
  else if (c - theta > pi) theta += two_pi;
  const double d = std::max((c - w) - theta, theta - (c + w));
  if (eps > 0.0) return 0.5 - 0.5 * std::tanh(d / eps);
  if (d < 0.0) return 1.0;
  if (d > 0.0) return 0.0;
  return 0.5;
}

struct CsrMatrix {
  int n = 0;
  std::vector<int> row_ptr;
  std::vector<int> cols;
  std::vector<double> values;

  void multiply(std::span<const double> x, std::span<double> y) const {
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int k = row_ptr[i]; k < row_ptr[i + 1]; ++k) s += values[k] * x[cols[k]];
      y[i] = s;
    }
  }

  std::vector<double> operator*(std::span<const double> x) const {
    std::vector<double> y(static_cast<std::size_t>(n));
    multiply(x, y);
    return y;
  }

  int index(int i, int j) const {
    auto first = cols.begin() + row_ptr[i];
    auto last = cols.begin() + row_ptr[i + 1];
    auto it = std::lower_bound(first, last, j);
    return (it != last && *it == j) ? static_cast<int>(it - cols.begin()) : -1;
  }

  double at(int i, int j) const {
    const int k = index(i, j);
    return k < 0 ? 0.0 : values[k];
  }

  std::vector<double> diagonal() const {
    std::vector<double> d(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) d[i] = at(i, i);
    return d;
  }
};

struct SparseSpdSystem {
  CsrMatrix matrix;
  std::vector<double> rhs;
};

// Nodal P1 field: potential u, adjoint psi or unit-voltage solution w^k.
struct PotentialField {
  std::vector<double> values;
  std::size_t size() const { return values.size(); }
};

struct CgOptions {
  double rel_tol = 1e-12;
  int max_iter_per_unknown = 20;
};

struct CgResult {
  std::vector<double> x;
  int iterations = 0;
  double residual = 0.0;  // true relative residual |b - A x| / |b|
};

// Jacobi-preconditioned conjugate gradients. The recursive residual is
// replaced by the true one whenever it claims convergence.
inline CgResult conjugate_gradient(const CsrMatrix& a, std::span<const double> b,
                                   const CgOptions& opt = {}) {
  const auto n = static_cast<std::size_t>(a.n);
  CgResult out;
  out.x.assign(n, 0.0);
  const double bnorm = norm2(b);
  if (bnorm == 0.0) return out;

  std::vector<double> inv_diag = a.diagonal();
  for (double& d : inv_diag) {
    if (!(d > 0.0)) throw SolverError("conjugate_gradient: non-positive diagonal", 0, 0.0);
    d = 1.0 / d;
  }
  std::vector<double> r(b.begin(), b.end()), z(n), p(n), q(n);
  const int max_iter = opt.max_iter_per_unknown * a.n;
  const double target = opt.rel_tol * bnorm;
  int it = 0;
  double rnorm = bnorm;

  for (int restart = 0; restart < 8 && it < max_iter; ++restart) {
    for (std::size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
    p = z;
    double rz = dot(r, z);
    while (it < max_iter && norm2(r) > target) {
      a.multiply(p, q);
      const double alpha = rz / dot(p, q);
      for (std::size_t i = 0; i < n; ++i) {
        out.x[i] += alpha * p[i];
        r[i] -= alpha * q[i];
      }
      for (std::size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
      const double rz_new = dot(r, z);
      const double beta = rz_new / rz;
      rz = rz_new;
      for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
      ++it;
    }
    a.multiply(out.x, q);
    for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - q[i];
    rnorm = norm2(r);
    if (rnorm <= target) break;
  }
  out.iterations = it;
  out.residual = rnorm / bnorm;
  if (rnorm > target) {
    std::ostringstream msg;
    msg << "conjugate_gradient did not converge: relative residual " << out.residual << " after "
        << it << " iterations";
    throw SolverError(msg.str(), it, out.residual);
  }
  return out;
}

inline PotentialField solve_spd(const SparseSpdSystem& system, const CgOptions& opt = {}) {
  return PotentialField{conjugate_gradient(system.matrix, system.rhs, opt).x};
}

struct BoundaryQuadPoint {
  int a = 0;  // edge vertices
  int b = 0;
  double phi_a = 0.0;
  double phi_b = 0.0;
  double weight = 0.0;  // r_Q * dtheta * Gauss weight
  double theta = 0.0;
};

namespace detail {

inline CsrMatrix build_pattern(const DiskMesh& mesh) {
  std::vector<std::set<int>> adj(mesh.n_vertices());
  for (const auto& t : mesh.triangles)
    for (int i : t)
      for (int j : t) adj[i].insert(j);
  CsrMatrix m;
  m.n = static_cast<int>(mesh.n_vertices());
  m.row_ptr.push_back(0);
  for (const auto& row : adj) {
    m.cols.insert(m.cols.end(), row.begin(), row.end());
    m.row_ptr.push_back(static_cast<int>(m.cols.size()));
  }
  m.values.assign(m.cols.size(), 0.0);
  return m;
}

// Two-point Gauss rule for the P1 trace on [t0, t1] within edge.
template <class Fn>
void gauss_on_arc(const BoundaryEdge& edge, double radius, double t0, double t1, Fn&& fn) {
  static const double g = 1.0 / std::sqrt(3.0);
  const double mid = 0.5 * (t0 + t1);
  const double half = 0.5 * (t1 - t0);
  for (double s : {-g, g}) {
    BoundaryQuadPoint q;
    q.a = edge.a;
    q.b = edge.b;
    q.theta = mid + s * half;
    const double t = (q.theta - edge.theta_begin) / edge.span();
    q.phi_a = 1.0 - t;
    q.phi_b = t;
    q.weight = radius * half;
    fn(q);
  }
}

}  // namespace detail

// Discretization of one (mesh, electrode layout, smoothing) setup. Everything
// that does not depend on sigma or on electrode data is precomputed here;
// instances are immutable and safe to share across threads.
class ForwardModel {
 public:
  ForwardModel(DiskMesh mesh, ElectrodeLayout layout, SmoothingConfig smoothing = {})
      : mesh_(tag_electrodes(std::move(mesh), layout)),
        layout_(std::move(layout)),
        smoothing_(smoothing) {
    layout_.validate();
    smoothing_.validate();
    pattern_ = detail::build_pattern(mesh_);
    build_elements();
    build_boundary();
  }

  const DiskMesh& mesh() const { return mesh_; }
  const ElectrodeLayout& layout() const { return layout_; }
  const SmoothingConfig& smoothing() const { return smoothing_; }
  std::size_t n_nodes() const { return mesh_.n_vertices(); }
  std::size_t n_elements() const { return mesh_.n_triangles(); }
  std::size_t n_electrodes() const { return layout_.size(); }

  std::span<const double> areas() const { return areas_; }
  const std::array<Point, 3>& shape_gradients(std::size_t e) const { return grads_[e]; }
  const CsrMatrix& pattern() const { return pattern_; }
  const std::vector<BoundaryQuadPoint>& boundary_quadrature() const { return quad_; }
  double chi_at(std::size_t q, std::size_t l) const { return chi_[q * n_electrodes() + l]; }

  // int chi_l phi_i ds for every node i.
  std::span<const double> electrode_load(std::size_t l) const {
    return {loads_.data() + l * n_nodes(), n_nodes()};
  }
  // int chi_l ds.
  double electrode_measure(std::size_t l) const { return measures_[l]; }
  double impedance(std::size_t l) const { return layout_.impedances[l]; }

  // Element-constant gradient of a nodal field.
  Point element_gradient(std::size_t e, std::span<const double> nodal) const {
    const auto& t = mesh_.triangles[e];
    Point g;
    for (int k = 0; k < 3; ++k) {
      g.x += nodal[t[k]] * grads_[e][k].x;
      g.y += nodal[t[k]] * grads_[e][k].y;
    }
    return g;
  }

  // sum_e sigma_e int grad phi_i . grad phi_j + sum_l (1/Z_l) int chi_l phi_i phi_j.
  CsrMatrix operator_matrix(std::span<const double> sigma) const {
    check_sigma(sigma);
    CsrMatrix m = pattern_;
    m.values = robin_;
    add_stiffness(sigma, m);
    return m;
  }

  // sum_l (data_l / Z_l) int chi_l phi_i ds.
  std::vector<double> electrode_rhs(std::span<const double> data) const {
    if (data.size() != n_electrodes()) throw Error("electrode data size does not match layout");
    std::vector<double> rhs(n_nodes(), 0.0);
    for (std::size_t l = 0; l < n_electrodes(); ++l) {
      const double c = data[l] / layout_.impedances[l];
      if (c == 0.0) continue;
      auto load = electrode_load(l);
      for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] += c * load[i];
    }
    return rhs;
  }

  CsrMatrix stiffness(std::span<const double> sigma) const {
    CsrMatrix m = pattern_;
    add_stiffness(sigma, m);
    return m;
  }

  // Consistent P1 mass matrix.
  CsrMatrix mass_matrix() const {
    CsrMatrix m = pattern_;
    for (std::size_t e = 0; e < n_elements(); ++e)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          m.values[slots_[e][3 * i + j]] += areas_[e] * (i == j ? 2.0 : 1.0) / 12.0;
    return m;
  }

  void check_sigma(std::span<const double> sigma) const {
    if (sigma.size() != n_elements()) throw Error("conductivity size does not match mesh");
    for (double s : sigma)
      if (!(s > 0.0)) throw SolverError("conductivity must be positive on every element", 0, 0.0);
  }

 private:
  void add_stiffness(std::span<const double> sigma, CsrMatrix& m) const {
    for (std::size_t e = 0; e < n_elements(); ++e)
      for (int k = 0; k < 9; ++k) m.values[slots_[e][k]] += sigma[e] * local_[e][k];
  }

  void build_elements() {
    const auto ne = n_elements();
    areas_.resize(ne);
    grads_.resize(ne);
    local_.resize(ne);
    slots_.resize(ne);
    for (std::size_t e = 0; e < ne; ++e) {
      const auto& t = mesh_.triangles[e];
      const Point& p0 = mesh_.vertices[t[0]];
      const Point& p1 = mesh_.vertices[t[1]];
      const Point& p2 = mesh_.vertices[t[2]];
      const double area = mesh_.area(e);
      if (!(area > 0.0)) throw Error("mesh has a degenerate or inverted triangle");
      areas_[e] = area;
      const double s = 1.0 / (2.0 * area);
      grads_[e] = {Point{(p1.y - p2.y) * s, (p2.x - p1.x) * s},
                   Point{(p2.y - p0.y) * s, (p0.x - p2.x) * s},
                   Point{(p0.y - p1.y) * s, (p1.x - p0.x) * s}};
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          local_[e][3 * i + j] =
              area * (grads_[e][i].x * grads_[e][j].x + grads_[e][i].y * grads_[e][j].y);
          slots_[e][3 * i + j] = pattern_.index(t[i], t[j]);
        }
    }
  }

  void build_boundary() {
    const auto m = n_electrodes();
    std::vector<double> breaks;
    for (std::size_t l = 0; l < m; ++l) {
      breaks.push_back(wrap_angle(layout_.centers[l] - layout_.half_width));
      breaks.push_back(wrap_angle(layout_.centers[l] + layout_.half_width));
    }
    for (const auto& edge : mesh_.boundary_edges) {
      std::vector<double> cuts{edge.theta_begin, edge.theta_end};
      for (double t : breaks)
        if (t > edge.theta_begin && t < edge.theta_end) cuts.push_back(t);
      std::sort(cuts.begin(), cuts.end());
      for (std::size_t k = 0; k + 1 < cuts.size(); ++k)
        if (cuts[k + 1] > cuts[k])
          detail::gauss_on_arc(edge, mesh_.radius, cuts[k], cuts[k + 1],
                               [&](const BoundaryQuadPoint& q) { quad_.push_back(q); });
    }

    chi_.resize(quad_.size() * m);
    loads_.assign(m * n_nodes(), 0.0);
    measures_.assign(m, 0.0);
    robin_.assign(pattern_.values.size(), 0.0);
    for (std::size_t q = 0; q < quad_.size(); ++q) {
      const auto& p = quad_[q];
      double coef = 0.0;
      for (std::size_t l = 0; l < m; ++l) {
        const double chi = chi_weight(p.theta, l, layout_, smoothing_.chi_eps);
        chi_[q * m + l] = chi;
        loads_[l * n_nodes() + p.a] += p.weight * chi * p.phi_a;
        loads_[l * n_nodes() + p.b] += p.weight * chi * p.phi_b;
        measures_[l] += p.weight * chi;
        coef += chi / layout_.impedances[l];
      }
      coef *= p.weight;
      robin_[pattern_.index(p.a, p.a)] += coef * p.phi_a * p.phi_a;
      robin_[pattern_.index(p.a, p.b)] += coef * p.phi_a * p.phi_b;
      robin_[pattern_.index(p.b, p.a)] += coef * p.phi_b * p.phi_a;
      robin_[pattern_.index(p.b, p.b)] += coef * p.phi_b * p.phi_b;
    }
  }

  DiskMesh mesh_;
  ElectrodeLayout layout_;
  SmoothingConfig smoothing_;
  CsrMatrix pattern_;
  std::vector<double> areas_;
  std::vector<std::array<Point, 3>> grads_;
  std::vector<std::array<double, 9>> local_;
  std::vector<std::array<int, 9>> slots_;
  std::vector<BoundaryQuadPoint> quad_;
  std::vector<double> chi_;
  std::vector<double> loads_;
  std::vector<double> measures_;
  std::vector<double> robin_;
};

// Operator matrix for one conductivity, reused across right-hand sides.
class StateOperator {
 public:
  StateOperator(const ForwardModel& model, std::span<const double> sigma)
      : model_(&model), matrix_(model.operator_matrix(sigma)) {}

  const CsrMatrix& matrix() const { return matrix_; }

  PotentialField solve_rhs(std::span<const double> rhs) const {
    return PotentialField{conjugate_gradient(matrix_, rhs).x};
  }
  PotentialField solve(std::span<const double> electrode_data) const {
    return solve_rhs(model_->electrode_rhs(electrode_data));
  }

 private:
  const ForwardModel* model_;
  CsrMatrix matrix_;
};

inline SparseSpdSystem assemble(const ForwardModel& model, const ConductivityField& sigma,
                                std::span<const double> electrode_data) {
  return {model.operator_matrix(sigma.values), model.electrode_rhs(electrode_data)};
}

inline PotentialField solve_state(const ForwardModel& model, const ConductivityField& sigma,
                                  const VoltageVector& u) {
  return solve_spd(assemble(model, sigma, u.span()));
}

// int chi_l f ds for a nodal field, using the assembly quadrature.
inline double electrode_integral(const ForwardModel& model, std::span<const double> field,
                                 std::size_t l) {
  return dot(model.electrode_load(l), field);
}
inline double electrode_integral(const ForwardModel& model, const PotentialField& field,
                                 std::size_t l) {
  return electrode_integral(model, field.values, l);
}
inline double electrode_integral(const ForwardModel& model, double constant, std::size_t l) {
  return constant * model.electrode_measure(l);
}

// Adjoint electrode data G_l = 2 int chi_l (u - U_l)/Z_l ds + 2 I_l.
inline std::vector<double> adjoint_data(const ForwardModel& model, const PotentialField& u,
                                        const VoltageVector& U, const CurrentPattern& I) {
  std::vector<double> g(model.n_electrodes());
  for (std::size_t l = 0; l < g.size(); ++l)
    g[l] = 2.0 * (electrode_integral(model, u, l) - U[l] * model.electrode_measure(l)) /
               model.impedance(l) +
           2.0 * I[l];
  return g;
}

// The operator is self-adjoint, so the adjoint reuses the state assembly
// with G substituted for the electrode voltages.
inline PotentialField solve_adjoint(const ForwardModel& model, const ConductivityField& sigma,
                                    const PotentialField& u, const VoltageVector& U,
                                    const CurrentPattern& I) {
  const auto g = adjoint_data(model, u, U, I);
  return solve_spd(assemble(model, sigma, g));
}

// w^k = u(.; sigma, e_k) for the 0-based electrode index k. e_k is not
// zero-sum; grounding is not imposed on the sensitivity fields.
inline PotentialField solve_unit_voltage(const ForwardModel& model,
                                         const ConductivityField& sigma, std::size_t k) {
  if (k >= model.n_electrodes()) throw Error("electrode index out of range");
  VoltageVector e(model.n_electrodes());
  e[k] = 1.0;
  return solve_state(model, sigma, e);
}

// Sharp-electrode assembly built directly from arc/edge intersections, without
// the chi-weighted quadrature. Used as an independent route for eps = 0.
inline SparseSpdSystem assemble_sharp_reference(const ForwardModel& model,
                                                const ConductivityField& sigma,
                                                std::span<const double> electrode_data) {
  const auto& mesh = model.mesh();
  const auto& layout = model.layout();
  SparseSpdSystem sys;
  sys.matrix = model.stiffness(sigma.values);
  sys.rhs.assign(model.n_nodes(), 0.0);
  for (std::size_t l = 0; l < layout.size(); ++l) {
    const double lo = layout.centers[l] - layout.half_width;
    const double hi = layout.centers[l] + layout.half_width;
    const double inv_z = 1.0 / layout.impedances[l];
    for (const auto& edge : mesh.boundary_edges) {
      for (double shift : {-two_pi, 0.0, two_pi}) {
        const double t0 = std::max(edge.theta_begin, lo + shift);
        const double t1 = std::min(edge.theta_end, hi + shift);
        if (!(t1 > t0)) continue;
        detail::gauss_on_arc(edge, mesh.radius, t0, t1, [&](const BoundaryQuadPoint& q) {
          const double c = q.weight * inv_z;
          auto& v = sys.matrix.values;
          v[sys.matrix.index(q.a, q.a)] += c * q.phi_a * q.phi_a;
          v[sys.matrix.index(q.a, q.b)] += c * q.phi_a * q.phi_b;
          v[sys.matrix.index(q.b, q.a)] += c * q.phi_b * q.phi_a;
          v[sys.matrix.index(q.b, q.b)] += c * q.phi_b * q.phi_b;
          sys.rhs[q.a] += electrode_data[l] * c * q.phi_a;
          sys.rhs[q.b] += electrode_data[l] * c * q.phi_b;
        });
      }
    }
  }
  return sys;
}

// Sobolev (H1) smoothing of a per-element field g:
//   (M + ell K) g_hat = M g   with homogeneous Neumann conditions,
// where M g is the P1 load of the P0 field and the nodal result is resampled
// to elements by vertex averaging. ell = 0 returns g unchanged.
inline std::vector<double> sobolev_smooth(const ForwardModel& model, std::span<const double> g,
                                          double ell) {
  if (!(ell >= 0.0)) throw Error("sobolev_smooth: ell must be >= 0");
  if (g.size() != model.n_elements()) throw Error("sobolev_smooth: field size mismatch");
  if (ell == 0.0) return {g.begin(), g.end()};
  const auto& mesh = model.mesh();
  auto areas = model.areas();
  std::vector<double> load(model.n_nodes(), 0.0);
  for (std::size_t e = 0; e < g.size(); ++e)
    for (int v : mesh.triangles[e]) load[v] += areas[e] * g[e] / 3.0;
  CsrMatrix a = model.mass_matrix();
  const CsrMatrix k = model.stiffness(std::vector<double>(model.n_elements(), 1.0));
  for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] += ell * k.values[i];
  const auto nodal = conjugate_gradient(a, load).x;
  std::vector<double> out(g.size());
  for (std::size_t e = 0; e < g.size(); ++e) {
    const auto& t = mesh.triangles[e];
    out[e] = (nodal[t[0]] + nodal[t[1]] + nodal[t[2]]) / 3.0;
  }
  return out;
}

}  // namespace eitopt
