#pragma once

// Adjoint-based gradients of the cost functionals and the kappa test.
//
// Sign convention: the returned pair is the gradient itself, so descent steps
// subtract it. The sigma component is a density (per unit area); pair it with
// element areas to get directional derivatives.

#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <vector>

#include "eitopt/common.hpp"
#include "eitopt/fem.hpp"
#include "eitopt/model.hpp"

namespace eitopt {

struct GradientPair {
  std::vector<double> d_sigma;  // per element
  std::vector<double> d_u;      // per electrode
};

struct Evaluation {
  CostBreakdown cost;
  GradientPair gradient;
};

// Cost and gradient in one pass. With_sigma = false skips the adjoint solves
// (Problem I iterates U only).
inline Evaluation evaluate(const ForwardModel& model, const Objective& obj,
                           const ConductivityField& sigma, const VoltageVector& U,
                           bool with_sigma = true) {
  const auto m = model.n_electrodes();
  const auto n = obj.pattern_count();
  const StateOperator op(model, sigma.values);

  std::vector<PotentialField> states(n);
  std::vector<CurrentPattern> currents(n);
  parallel_for(n, [&](std::size_t j) {
    const auto Uj = obj.voltages_for(U, j);
    states[j] = op.solve(Uj.span());
    currents[j] = electrode_currents(model, states[j], Uj);
  });

  Evaluation ev;
  ev.cost = detail::assemble_breakdown(obj, U, currents);

  // Boundary integrals of the unit-voltage fields, C(l, k) = int chi_l w^k ds.
  std::vector<double> c(m * m);
  parallel_for(m, [&](std::size_t k) {
    std::vector<double> rhs(model.electrode_load(k).begin(), model.electrode_load(k).end());
    for (double& v : rhs) v /= model.impedance(k);
    const auto w = op.solve_rhs(rhs);
    for (std::size_t l = 0; l < m; ++l) c[l * m + k] = electrode_integral(model, w, l);
  });

  ev.gradient.d_u.assign(m, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t theta = obj.problem == Problem::K ? (k + m - j) % m : k;
      double s = 0.0;
      for (std::size_t l = 0; l < m; ++l) {
        const double r = currents[j][l] - obj.data.currents[j][l];
        const double d = (l == theta ? model.electrode_measure(l) : 0.0) - c[l * m + theta];
        s += 2.0 * r * d / model.impedance(l);
      }
      ev.gradient.d_u[k] += s;
    }
  }
  if (obj.problem != Problem::I && obj.beta != 0.0)
    for (std::size_t k = 0; k < m; ++k)
      ev.gradient.d_u[k] += 2.0 * obj.beta * (U[k] - obj.data.u_star[k]);

  if (!with_sigma) return ev;

  std::vector<std::vector<double>> per_pattern(n);
  parallel_for(n, [&](std::size_t j) {
    std::vector<double> g(m);
    for (std::size_t l = 0; l < m; ++l) g[l] = -2.0 * (currents[j][l] - obj.data.currents[j][l]);
    const auto psi = op.solve(g);
    auto& out = per_pattern[j];
    out.resize(model.n_elements());
    for (std::size_t e = 0; e < out.size(); ++e) {
      const Point gu = model.element_gradient(e, states[j].values);
      const Point gp = model.element_gradient(e, psi.values);
      out[e] = -(gu.x * gp.x + gu.y * gp.y);
    }
  });
  ev.gradient.d_sigma.assign(model.n_elements(), 0.0);
  for (const auto& part : per_pattern)
    for (std::size_t e = 0; e < part.size(); ++e) ev.gradient.d_sigma[e] += part[e];
  return ev;
}

inline GradientPair grad_J(const ForwardModel& model, const ConductivityField& sigma,
                           const VoltageVector& U, const CurrentPattern& I,
                           const VoltageVector& u_star, double beta) {
  return evaluate(model, Objective::problem_J(I, u_star, beta), sigma, U).gradient;
}

inline GradientPair grad_K(const ForwardModel& model, const ConductivityField& sigma,
                           const VoltageVector& U, const MeasurementSet& data, double beta) {
  return evaluate(model, Objective::problem_K(data, beta), sigma, U).gradient;
}

// <J'_sigma, delta> as an area-weighted sum.
inline double sigma_pairing(const ForwardModel& model, std::span<const double> density,
                            std::span<const double> delta) {
  double s = 0.0;
  auto areas = model.areas();
  for (std::size_t e = 0; e < density.size(); ++e) s += density[e] * delta[e] * areas[e];
  return s;
}

struct KappaReport {
  std::vector<double> epsilons;  // strictly decreasing
  std::vector<double> kappas;
  int plateau_span = 0;  // longest run of consecutive samples with |kappa - 1| <= tolerance
  double tolerance = 1e-2;
  double best_deviation = INFINITY;  // min |kappa - 1|

  // Median |kappa - 1| over the longest plateau.
  double plateau_deviation() const {
    const auto [first, last] = plateau_range();
    if (first == last) return INFINITY;
    std::vector<double> d;
    for (std::size_t i = first; i < last; ++i) d.push_back(std::abs(kappas[i] - 1.0));
    std::sort(d.begin(), d.end());
    return d[d.size() / 2];
  }

  std::pair<std::size_t, std::size_t> plateau_range() const {
    std::size_t best_first = 0, best_len = 0, run_first = 0, run = 0;
    for (std::size_t i = 0; i < kappas.size(); ++i) {
      if (std::abs(kappas[i] - 1.0) <= tolerance) {
        if (run == 0) run_first = i;
        if (++run > best_len) {
          best_len = run;
          best_first = run_first;
        }
      } else {
        run = 0;
      }
    }
    return {best_first, best_first + best_len};
  }
};

// 10^hi, 10^(hi-1), ..., 10^lo.
inline std::vector<double> decade_epsilons(int hi = -1, int lo = -12) {
  std::vector<double> eps;
  for (int p = hi; p >= lo; --p) eps.push_back(std::pow(10.0, p));
  return eps;
}

inline KappaReport make_kappa_report(std::vector<double> epsilons, std::vector<double> kappas,
                                     double tolerance) {
  KappaReport rep;
  rep.epsilons = std::move(epsilons);
  rep.kappas = std::move(kappas);
  rep.tolerance = tolerance;
  for (double k : rep.kappas) rep.best_deviation = std::min(rep.best_deviation, std::abs(k - 1.0));
  const auto [first, last] = rep.plateau_range();
  rep.plateau_span = static_cast<int>(last - first);
  return rep;
}

// kappa(eps) = [f(eps) - f(0)] / (eps * directional).
inline KappaReport kappa_test(const std::function<double(double)>& cost_at, double cost0,
                              double directional, const std::vector<double>& epsilons,
                              double tolerance = 1e-2) {
  if (!(std::abs(directional) > 1e-300) || !std::isfinite(directional))
    throw ValidationError("kappa test: directional derivative is (near) zero");
  for (std::size_t i = 1; i < epsilons.size(); ++i)
    if (!(epsilons[i] < epsilons[i - 1]))
      throw ValidationError("kappa test: epsilons must be strictly decreasing");
  std::vector<double> kappas;
  for (double eps : epsilons) kappas.push_back((cost_at(eps) - cost0) / (eps * directional));
  return make_kappa_report(epsilons, std::move(kappas), tolerance);
}

// Kappa test of the sigma gradient along delta_sigma; gradient_scale lets a
// harness inject a corrupted gradient (e.g. -1).
inline KappaReport kappa_test_sigma(const ForwardModel& model, const Objective& obj,
                                    const ConductivityField& sigma, const VoltageVector& U,
                                    std::span<const double> delta_sigma,
                                    const std::vector<double>& epsilons,
                                    double tolerance = 1e-2, double gradient_scale = 1.0) {
  const auto ev = evaluate(model, obj, sigma, U);
  const double directional =
      gradient_scale * sigma_pairing(model, ev.gradient.d_sigma, delta_sigma);
  auto cost_at = [&](double eps) {
    ConductivityField s = sigma;
    for (std::size_t e = 0; e < s.values.size(); ++e) s.values[e] += eps * delta_sigma[e];
    return evaluate_cost(model, obj, s, U).total;
  };
  return kappa_test(cost_at, ev.cost.total, directional, epsilons, tolerance);
}

struct ElectrodeKappa {
  std::vector<double> kappa;  // NaN where flagged
  std::vector<bool> flagged;  // |d_U_l| below 1e-14
};

// Per-electrode kappa at a fixed eps, perturbing one voltage at a time.
inline ElectrodeKappa kappa_test_U(const ForwardModel& model, const Objective& obj,
                                   const ConductivityField& sigma, const VoltageVector& U,
                                   double eps, std::span<const double> delta_u = {}) {
  const auto ev = evaluate(model, obj, sigma, U, false);
  const auto m = U.size();
  ElectrodeKappa out;
  out.kappa.assign(m, std::nan(""));
  out.flagged.assign(m, false);
  for (std::size_t l = 0; l < m; ++l) {
    const double du = delta_u.empty() ? 1.0 : delta_u[l];
    const double denom = ev.gradient.d_u[l] * du;
    if (std::abs(ev.gradient.d_u[l]) < 1e-14) {
      out.flagged[l] = true;
      continue;
    }
    VoltageVector up = U;
    up[l] += eps * du;
    out.kappa[l] = (evaluate_cost(model, obj, sigma, up).total - ev.cost.total) / (eps * denom);
  }
  return out;
}

// Two columns (eps, kappa) followed by a summary comment line.
inline void write_kappa_report(std::ostream& os, const KappaReport& rep) {
  const auto p = os.precision();
  os << std::setprecision(17);
  for (std::size_t i = 0; i < rep.epsilons.size(); ++i)
    os << rep.epsilons[i] << ' ' << rep.kappas[i] << '\n';
  os << "# plateau_span " << rep.plateau_span << " tolerance " << rep.tolerance
     << " best_deviation " << rep.best_deviation << '\n';
  os.precision(p);
}

}  // namespace eitopt
