#pragma once

// The three-stage experiment, the beta sweep and the gradient validation
// suite, shared by the command-line tool and the acceptance harness.

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "eitopt/config.hpp"
#include "eitopt/fem.hpp"
#include "eitopt/gradient.hpp"
#include "eitopt/mesh.hpp"
#include "eitopt/model.hpp"
#include "eitopt/optimizer.hpp"
#include "eitopt/pca.hpp"

namespace eitopt {

struct Setup {
  ExperimentConfig cfg;
  ForwardModel model;
  ConductivityField sigma_true;
  ConductivityField sigma_ini;
  CurrentPattern currents;
  VoltageVector u_ini;
};

// n_v = 0 uses the configured mesh.
inline Setup make_setup(const ExperimentConfig& cfg, int n_v = 0, std::optional<double> chi_eps = {}) {
  cfg.validate();
  const int nv = n_v > 0 ? n_v : cfg.n_v;
  SmoothingConfig smoothing{chi_eps.value_or(cfg.opt.chi_eps), cfg.opt.sobolev_ell};
  ForwardModel model(build_disk_mesh(cfg.radius, nv), cfg.layout(), smoothing);
  auto truth = rasterize_phantom(model.mesh(), cfg.phantom, cfg.opt.bounds);
  ConductivityField ini{std::vector<double>(model.n_elements(), cfg.sigma_ini), cfg.opt.bounds};
  return Setup{cfg, std::move(model), std::move(truth), std::move(ini), cfg.current_pattern(),
               cfg.initial_voltages()};
}

inline OptConfig opt_config(const ExperimentConfig& cfg, double beta, bool use_pca) {
  OptConfig o = cfg.opt;
  o.beta = beta;
  o.use_pca = use_pca;
  o.r_opt = cfg.pca_r_opt / 100.0;
  return o;
}

struct Stage1Result {
  RunRecord run;
  VoltageVector u_star;
  CurrentPattern closed_loop;    // electrode currents at (sigma_true, U*)
  double max_current_error = 0;  // max_l |i_l - I_l|
};

// Problem I at the true conductivity, from the given start (default U_ini).
inline Stage1Result run_stage1(const Setup& s, std::optional<VoltageVector> start = {}) {
  DescentProblem p;
  p.model = &s.model;
  p.objective = Objective::problem_I(s.currents);
  p.space = ControlSpace::Voltage;
  p.sigma0 = s.sigma_true;
  p.u0 = start.value_or(s.u_ini);
  Stage1Result r;
  r.run = run_descent(p, opt_config(s.cfg, 0.0, false));
  r.u_star = r.run.U;
  r.closed_loop =
      electrode_currents(s.model, solve_state(s.model, s.sigma_true, r.u_star), r.u_star);
  for (std::size_t l = 0; l < r.closed_loop.size(); ++l)
    r.max_current_error = std::max(r.max_current_error, std::abs(r.closed_loop[l] - s.currents[l]));
  return r;
}

inline RealizationSet realizations_for(const Setup& s) {
  return generate_realizations(s.model.mesh(), s.cfg.pca_n_r, s.cfg.pca_seed,
                               s.cfg.phantom.background, s.cfg.phantom.inclusion_value);
}

inline PcaBasis build_pca(const Setup& s) {
  return build_basis(realizations_for(s), s.cfg.pca_r_opt / 100.0);
}

// Mean reconstructed sigma inside each true inclusion (largest first) and
// outside all of them, using element centroids and area weights.
struct DetectionReport {
  struct Spot {
    Inclusion inclusion;
    double mean = std::nan("");
    double margin = std::nan("");  // mean - outside_mean
  };
  std::vector<Spot> spots;
  double outside_mean = std::nan("");

  // True when the k largest inclusions all beat the outside mean by margin.
  bool detects_largest(std::size_t k, double margin) const {
    if (spots.size() < k) return false;
    for (std::size_t i = 0; i < k; ++i)
      if (!(spots[i].margin >= margin)) return false;
    return true;
  }
};

inline DetectionReport detect_inclusions(const DiskMesh& mesh, const PhantomSpec& phantom,
                                         std::span<const double> sigma) {
  DetectionReport rep;
  auto incs = phantom.inclusions;
  std::stable_sort(incs.begin(), incs.end(),
                   [](const Inclusion& a, const Inclusion& b) { return a.r > b.r; });
  std::vector<double> in_sum(incs.size(), 0.0), in_area(incs.size(), 0.0);
  double out_sum = 0.0, out_area = 0.0;
  for (std::size_t e = 0; e < mesh.n_triangles(); ++e) {
    const Point c = mesh.centroid(e);
    const double a = mesh.area(e);
    bool inside = false;
    for (std::size_t k = 0; k < incs.size(); ++k)
      if (incs[k].contains(c)) {
        in_sum[k] += a * sigma[e];
        in_area[k] += a;
        inside = true;
      }
    if (!inside) {
      out_sum += a * sigma[e];
      out_area += a;
    }
  }
  if (out_area > 0.0) rep.outside_mean = out_sum / out_area;
  for (std::size_t k = 0; k < incs.size(); ++k) {
    DetectionReport::Spot spot;
    spot.inclusion = incs[k];
    if (in_area[k] > 0.0) {
      spot.mean = in_sum[k] / in_area[k];
      spot.margin = spot.mean - rep.outside_mean;
    }
    rep.spots.push_back(spot);
  }
  return rep;
}

struct InversionResult {
  RunRecord run;
  SolutionNorms initial_norms;
  SolutionNorms final_norms;
  DetectionReport detection;
};

inline DescentProblem inversion_problem(const Setup& s, Objective objective,
                                        const VoltageVector& u_star, const PcaBasis* basis) {
  DescentProblem p;
  p.model = &s.model;
  p.objective = std::move(objective);
  p.space = basis ? ControlSpace::Reduced : ControlSpace::Physical;
  p.basis = basis;
  p.sigma0 = s.sigma_ini;
  p.u0 = s.u_ini;
  p.sigma_reference = s.sigma_true.values;
  p.u_reference = u_star;
  return p;
}

inline InversionResult finish_inversion(const Setup& s, RunRecord run, const VoltageVector& u_star) {
  InversionResult r;
  const auto areas = s.model.areas();
  r.initial_norms = solution_norms(areas, s.sigma_ini.values, s.sigma_true.values, s.u_ini, u_star);
  r.final_norms = solution_norms(areas, run.sigma.values, s.sigma_true.values, run.U, u_star);
  r.detection = detect_inclusions(s.model.mesh(), s.cfg.phantom, run.sigma.values);
  r.run = std::move(run);
  return r;
}

// Problem J with the single current pattern.
inline InversionResult run_stage2(const Setup& s, const VoltageVector& u_star, double beta,
                                  const PcaBasis* basis) {
  auto p = inversion_problem(s, Objective::problem_J(s.currents, u_star, beta), u_star, basis);
  return finish_inversion(s, run_descent(p, opt_config(s.cfg, beta, basis != nullptr)), u_star);
}

// Rotation data at the true conductivity. With data.n_v set, the data come
// from a different mesh than the one used for inversion.
inline MeasurementSet rotation_data(const Setup& s, const VoltageVector& u_star) {
  const int data_nv = s.cfg.data_n_v;
  if (data_nv <= 0 || data_nv == s.cfg.n_v) return synthesize_rotation_data(s.model, s.sigma_true, u_star);
  const Setup fine = make_setup(s.cfg, data_nv);
  auto data = synthesize_rotation_data(fine.model, fine.sigma_true, u_star);
  return data;
}

// Problem K on rotation data.
inline InversionResult run_stage3(const Setup& s, const MeasurementSet& data, double beta,
                                  const PcaBasis* basis) {
  auto p = inversion_problem(s, Objective::problem_K(data, beta), data.u_star, basis);
  return finish_inversion(s, run_descent(p, opt_config(s.cfg, beta, basis != nullptr)),
                          data.u_star);
}

inline std::vector<SweepRow> run_sweep(const Setup& s, const MeasurementSet& data,
                                       const PcaBasis* basis, const std::vector<double>& betas) {
  auto p = inversion_problem(s, Objective::problem_K(data, 0.0), data.u_star, basis);
  return sweep_beta(p, opt_config(s.cfg, 0.0, basis != nullptr), betas);
}

// --- validation suite ---

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct NamedKappa {
  std::string name;
  KappaReport report;
};

struct ValidationReport {
  std::vector<Check> checks;
  std::vector<NamedKappa> kappa_curves;
  std::vector<double> kappa_u;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
  }
  const Check* find(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }
};

struct ValidationOptions {
  double gradient_scale = 1.0;  // -1 flips the adjoint gradient (harness self-test)
  int min_plateau = 4;
  double kappa_tolerance = 1e-2;
};

namespace detail {

inline std::string describe(const KappaReport& r) {
  std::ostringstream os;
  os << "plateau " << r.plateau_span << " decades, median |kappa-1| " << r.plateau_deviation()
     << ", best " << r.best_deviation;
  return os.str();
}

inline VoltageVector random_voltages(SplitMix64& rng, std::size_t m) {
  VoltageVector u(m);
  for (double& v : u) v = 2.0 * rng.uniform() - 1.0;
  return project_U(u);
}

}  // namespace detail

// |kappa - 1| of a at the largest epsilon lying on the plateaus of both a and
// b (same epsilon grid); infinity when the plateaus do not overlap.
inline double leading_plateau_deviation(const KappaReport& a, const KappaReport& b) {
  const auto [a0, a1] = a.plateau_range();
  const auto [b0, b1] = b.plateau_range();
  const auto first = std::max(a0, b0);
  if (first >= std::min(a1, b1) || a.epsilons != b.epsilons) return INFINITY;
  return std::abs(a.kappas[first] - 1.0);
}

inline std::vector<double> direction_to_truth(const Setup& s) {
  std::vector<double> d(s.model.n_elements());
  for (std::size_t e = 0; e < d.size(); ++e) d[e] = s.sigma_true.values[e] - s.sigma_ini.values[e];
  return d;
}

inline KappaReport kappa_sigma_J(const Setup& s, const ValidationOptions& o) {
  const auto obj = Objective::problem_J(s.currents, s.u_ini, 0.0);
  return kappa_test_sigma(s.model, obj, s.sigma_ini, s.u_ini, direction_to_truth(s),
                          decade_epsilons(), o.kappa_tolerance, o.gradient_scale);
}

inline ValidationReport run_validation(const ExperimentConfig& cfg, const ValidationOptions& o = {}) {
  ValidationReport rep;
  auto add_kappa = [&](const std::string& name, const KappaReport& k) {
    rep.kappa_curves.push_back({name, k});
    rep.checks.push_back({name, k.plateau_span >= o.min_plateau, detail::describe(k)});
  };

  const Setup fine = make_setup(cfg);
  const Setup coarse = make_setup(cfg, cfg.coarse_n_v);

  const auto kj = kappa_sigma_J(fine, o);
  const auto kj_coarse = kappa_sigma_J(coarse, o);
  add_kappa("kappa-sigma-J", kj);
  add_kappa("kappa-sigma-J-coarse", kj_coarse);
  {
    // Deviations deep in the plateau are rounding noise; the truncation part
    // is compared at the largest epsilon on both plateaus.
    const double lead = leading_plateau_deviation(kj, kj_coarse);
    const double lead_coarse = leading_plateau_deviation(kj_coarse, kj);
    std::ostringstream os;
    os << "plateau " << kj_coarse.plateau_span << " -> " << kj.plateau_span
       << " decades, leading |kappa-1| " << lead_coarse << " -> " << lead;
    rep.checks.push_back({"kappa-refinement",
                          kj.plateau_span >= kj_coarse.plateau_span && lead <= lead_coarse,
                          os.str()});
  }

  const auto stage1 = run_stage1(fine);
  const auto data = synthesize_rotation_data(fine.model, fine.sigma_true, stage1.u_star);
  add_kappa("kappa-sigma-K",
            kappa_test_sigma(fine.model, Objective::problem_K(data, 0.0), fine.sigma_ini,
                             fine.u_ini, direction_to_truth(fine), decade_epsilons(),
                             o.kappa_tolerance, o.gradient_scale));

  const auto basis = build_pca(fine);
  {
    const auto xi0 = basis.to_reduced(fine.sigma_ini.values);
    auto dxi = basis.to_reduced(fine.sigma_true.values);
    for (std::size_t i = 0; i < dxi.size(); ++i) dxi[i] -= xi0[i];
    const auto obj = Objective::problem_J(fine.currents, fine.u_ini, 0.0);
    add_kappa("kappa-xi-J", kappa_test_xi(fine.model, obj, basis, xi0, fine.u_ini, dxi,
                                          decade_epsilons(), o.kappa_tolerance,
                                          o.gradient_scale));
  }

  {
    const auto obj = Objective::problem_J(fine.currents, fine.u_ini, 0.0);
    const auto ku = kappa_test_U(fine.model, obj, fine.sigma_ini, fine.u_ini, 1e-6);
    rep.kappa_u = ku.kappa;
    double worst = 0.0;
    bool ok = true;
    for (std::size_t l = 0; l < ku.kappa.size(); ++l) {
      if (ku.flagged[l] || !std::isfinite(ku.kappa[l])) ok = false;
      else worst = std::max(worst, std::abs(ku.kappa[l] - 1.0));
    }
    std::ostringstream os;
    os << "max |kappa(l)-1| " << worst;
    rep.checks.push_back({"kappa-U", ok && worst <= o.kappa_tolerance, os.str()});
  }

  {
    const auto m = fine.model.n_electrodes();
    std::vector<double> t(m * m);
    for (std::size_t k = 0; k < m; ++k) {
      VoltageVector e(m);
      e[k] = 1.0;
      const auto i = electrode_currents(fine.model, solve_unit_voltage(fine.model, fine.sigma_ini, k), e);
      for (std::size_t l = 0; l < m; ++l) t[l * m + k] = i[l];
    }
    double asym = 0.0;
    for (std::size_t l = 0; l < m; ++l)
      for (std::size_t k = 0; k < m; ++k) asym = std::max(asym, std::abs(t[l * m + k] - t[k * m + l]));
    std::ostringstream os;
    os << "max |T_lk - T_kl| " << asym;
    rep.checks.push_back({"reciprocity", asym <= 1e-8, os.str()});
  }

  {
    double worst = 0.0;
    for (std::size_t j = 0; j < data.currents.size(); ++j)
      worst = std::max(worst, std::abs(data.currents[j].total()) /
                                  std::max(data.currents[j].norm(), 1e-300));
    std::ostringstream os;
    os << "max relative total current " << worst;
    rep.checks.push_back({"conservation", worst <= 1e-8, os.str()});
  }

  {
    SplitMix64 rng(cfg.pca_seed ^ 0x5eedULL);
    std::vector<double> xi(basis.n_xi());
    for (double& v : xi) v = 2.0 * rng.uniform() - 1.0;
    const auto back = basis.to_reduced(basis.to_physical_raw(xi));
    double err = 0.0;
    for (std::size_t i = 0; i < xi.size(); ++i) err = std::max(err, std::abs(back[i] - xi[i]));
    std::ostringstream os;
    os << "n_xi " << basis.n_xi() << ", max roundtrip error " << err;
    rep.checks.push_back({"pca-roundtrip", basis.n_xi() > 0 && err <= 1e-10, os.str()});
  }

  {
    SplitMix64 rng(cfg.pca_seed ^ 0xc0ffeeULL);
    double worst = 0.0;
    const auto& model = fine.model;
    for (int trial = 0; trial < 10; ++trial) {
      const auto u1 = detail::random_voltages(rng, model.n_electrodes());
      const auto u2 = detail::random_voltages(rng, model.n_electrodes());
      const double a = rng.uniform();
      VoltageVector mix(u1.size());
      for (std::size_t l = 0; l < mix.size(); ++l) mix[l] = a * u1[l] + (1.0 - a) * u2[l];
      const double lhs = cost_I(model, fine.sigma_true, mix, fine.currents).total;
      const auto w1 = solve_state(model, fine.sigma_true, u1);
      const auto w2 = solve_state(model, fine.sigma_true, u2);
      double gap = 0.0;
      for (std::size_t l = 0; l < mix.size(); ++l) {
        const double d = ((u1[l] - u2[l]) * model.electrode_measure(l) -
                          electrode_integral(model, w1, l) + electrode_integral(model, w2, l)) /
                         model.impedance(l);
        gap += d * d;
      }
      const double rhs = a * cost_I(model, fine.sigma_true, u1, fine.currents).total +
                         (1.0 - a) * cost_I(model, fine.sigma_true, u2, fine.currents).total -
                         a * (1.0 - a) * gap;
      worst = std::max(worst, std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-300));
    }
    std::ostringstream os;
    os << "max relative defect " << worst;
    rep.checks.push_back({"convexity-identity", worst <= 1e-8, os.str()});
  }
  return rep;
}

}  // namespace eitopt
