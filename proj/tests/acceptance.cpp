// Acceptance harness: one PASS/FAIL line per criterion on the default
// configuration at n_v = 96. Exit status is nonzero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "eitopt/experiment.hpp"

using namespace eitopt;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool passed = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      passed = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void report(int n, const std::string& name, Verdict& v, double secs) {
  std::printf("%s criterion %d (%s):%s [%.1f s]\n", v.passed ? "PASS" : "FAIL", n, name.c_str(),
              v.detail.str().c_str(), secs);
  std::fflush(stdout);
  if (!v.passed) ++failures;
}

double relative_total(const CurrentPattern& i) { return std::abs(i.total()) / std::max(i.norm(), 1e-300); }

}  // namespace

int main() {
  const ExperimentConfig cfg;
  const Setup s = make_setup(cfg);
  std::vector<const RunRecord*> runs;

  // 1. gradient kappa tests
  const auto t1 = Clock::now();
  const auto validation = run_validation(cfg);
  {
    Verdict v;
    for (const char* name : {"kappa-sigma-J", "kappa-sigma-K", "kappa-xi-J", "kappa-sigma-J-coarse",
                             "kappa-refinement"}) {
      const auto* c = validation.find(name);
      v.detail << ' ' << name << " {" << c->detail << "}";
      v.require(c->passed, name);
    }
    const double secs = seconds_since(t1);
    v.require(secs <= 120.0, "runtime");
    report(1, "gradient kappa test", v, secs);
  }

  // 2. closed loop through the Table 1 currents
  const auto t2 = Clock::now();
  const auto stage1 = run_stage1(s);
  runs.push_back(&stage1.run);
  {
    Verdict v;
    const double secs = seconds_since(t2);
    v.detail << " max |i_l - I_l| " << stage1.max_current_error << " A, |sum i| "
             << std::abs(stage1.closed_loop.total()) << ", " << stage1.run.iterations()
             << " iterations (" << to_string(stage1.run.reason) << ")";
    v.require(stage1.max_current_error <= 1e-3, "current error");
    v.require(std::abs(stage1.closed_loop.total()) <= 1e-8, "conservation");
    v.require(stage1.u_star.is_zero_sum(), "grounding");
    v.require(secs <= 60.0, "runtime");
    report(2, "closed-loop currents", v, secs);
  }
  const auto& u_star = stage1.u_star;

  // 3. uniqueness of the current-to-voltage problem
  const auto t3 = Clock::now();
  SplitMix64 rng(0xacce97ULL);
  std::vector<Stage1Result> starts;
  for (int k = 0; k < 2; ++k) {
    VoltageVector u0(cfg.m);
    for (double& x : u0) x = 4.0 * rng.uniform() - 2.0;
    starts.push_back(run_stage1(s, project_U(u0)));
  }
  for (const auto& r : starts) runs.push_back(&r.run);
  {
    Verdict v;
    auto rel = [](const VoltageVector& a, const VoltageVector& b) {
      double d = 0.0;
      for (std::size_t l = 0; l < a.size(); ++l) d += (a[l] - b[l]) * (a[l] - b[l]);
      return std::sqrt(d) / b.norm();
    };
    const double r12 = rel(starts[0].u_star, starts[1].u_star);
    const double r1 = rel(starts[0].u_star, u_star);
    const auto* conv = validation.find("convexity-identity");
    v.detail << " |U1 - U2|/|U2| " << r12 << ", |U1 - U*|/|U*| " << r1 << ", identity {"
             << conv->detail << "}";
    v.require(r12 <= 1e-3 && r1 <= 1e-3, "random starts disagree");
    v.require(conv->passed, "convexity identity");
    report(3, "convexity and uniqueness", v, seconds_since(t3));
  }

  // 4. the generating solution is stationary
  const auto t4 = Clock::now();
  const auto data = synthesize_rotation_data(s.model, s.sigma_true, u_star);
  {
    Verdict v;
    struct Case {
      const char* name;
      Objective obj;
    };
    const Case cases[] = {{"J", Objective::problem_J(s.currents, u_star, 0.0)},
                          {"K", Objective::problem_K(data, 0.0)}};
    for (const auto& c : cases) {
      const auto at_truth = evaluate(s.model, c.obj, s.sigma_true, u_star);
      const double scale = evaluate_cost(s.model, c.obj, s.sigma_ini, s.u_ini).total;
      const double gs = max_abs(at_truth.gradient.d_sigma);
      const double gu = max_abs(at_truth.gradient.d_u);
      v.detail << ' ' << c.name << ": max|dsigma| " << gs << ", max|dU| " << gu << ", cost "
               << at_truth.cost.total << " (initial " << scale << ")";
      v.require(gs <= 1e-7 && gu <= 1e-7, std::string(c.name) + " gradient");
      v.require(at_truth.cost.total <= 1e-8 * scale, std::string(c.name) + " cost");
    }
    report(4, "stationarity at the generating solution", v, seconds_since(t4));
  }

  // 5. reciprocity, conservation and weak-form residual
  const auto t5 = Clock::now();
  {
    Verdict v;
    const auto* rec = validation.find("reciprocity");
    const auto* con = validation.find("conservation");
    double worst = relative_total(stage1.closed_loop);
    for (const auto& c : data.currents) worst = std::max(worst, relative_total(c));
    for (std::size_t k = 0; k < s.model.n_electrodes(); ++k) {
      VoltageVector e(s.model.n_electrodes());
      e[k] = 1.0;
      worst = std::max(worst, relative_total(electrode_currents(
                                  s.model, solve_unit_voltage(s.model, s.sigma_true, k), e)));
    }
    const auto u = solve_state(s.model, s.sigma_true, u_star);
    const auto ref = assemble_sharp_reference(s.model, s.sigma_true, u_star.span());
    const auto au = ref.matrix * std::span<const double>(u.values);
    SplitMix64 eta_rng(0xe7aULL);
    double residual = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> eta(s.model.n_nodes());
      for (double& x : eta) x = 2.0 * eta_rng.uniform() - 1.0;
      double r = 0.0;
      for (std::size_t i = 0; i < eta.size(); ++i) r += eta[i] * (au[i] - ref.rhs[i]);
      residual = std::max(residual, std::abs(r) / (norm2(eta) * norm2(ref.rhs)));
    }
    v.detail << " reciprocity {" << rec->detail << "}, conservation {" << con->detail
             << "}, max relative total current over all solves " << worst
             << ", weak residual " << residual;
    v.require(rec->passed, "reciprocity");
    v.require(con->passed && worst <= 1e-8, "conservation");
    v.require(residual <= 1e-9, "weak residual");
    report(5, "reciprocity and conservation", v, seconds_since(t5));
  }

  // 6. PCA suite
  const auto t6 = Clock::now();
  const auto set = realizations_for(s);
  const auto basis = build_basis(set, cfg.pca_r_opt / 100.0);
  {
    Verdict v;
    const auto& d = basis.directions();
    const Eigen::MatrixXd g = d.transpose() * d;
    const double ortho = (g - Eigen::MatrixXd::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff();

    SplitMix64 xi_rng(0x91ULL);
    std::vector<double> xi(basis.n_xi());
    for (double& x : xi) x = 2.0 * xi_rng.uniform() - 1.0;
    const auto back = basis.to_reduced(basis.to_physical_raw(xi));
    double roundtrip = 0.0;
    for (std::size_t i = 0; i < xi.size(); ++i) roundtrip = std::max(roundtrip, std::abs(back[i] - xi[i]));

    const auto curve = basis.variance_curve();
    bool monotone = std::abs(curve.back() - 1.0) <= 1e-12;
    for (std::size_t k = 1; k < curve.size(); ++k) monotone = monotone && curve[k] >= curve[k - 1];
    const auto k = basis.n_xi();
    const double r = cfg.pca_r_opt / 100.0;
    const bool minimal = k >= 1 && curve[k - 1] >= r && (k == 1 || curve[k - 2] < r);

    const auto again = realizations_for(s);
    std::ostringstream a, b;
    save_basis(a, basis);
    save_basis(b, build_basis(again, r));
    const bool deterministic = again.samples == set.samples && a.str() == b.str();

    v.detail << " n_xi " << k << " of rank " << basis.rank() << " (r_v " << curve[k - 1]
             << "), orthonormality " << ortho << ", roundtrip " << roundtrip
             << ", monotone " << monotone << ", minimal " << minimal << ", deterministic "
             << deterministic;
    v.require(ortho <= 1e-10, "orthonormality");
    v.require(roundtrip <= 1e-10, "roundtrip");
    v.require(monotone, "monotone");
    v.require(minimal, "minimality");
    v.require(deterministic, "determinism");
    report(6, "PCA", v, seconds_since(t6));
  }

  // 7. Stage 3 detection
  const auto t7 = Clock::now();
  const auto best = run_stage3(s, data, cfg.stage3_beta, &basis);
  const auto plain = run_stage3(s, data, 0.0, &basis);
  runs.push_back(&best.run);
  runs.push_back(&plain.run);
  {
    Verdict v;
    const auto& det = best.detection;
    v.detail << " patterns " << data.currents.size() * data.m() << ", n_xi " << basis.n_xi()
             << ", beta " << cfg.stage3_beta << ": " << best.run.iterations() << " iterations ("
             << to_string(best.run.reason) << "), outside mean " << det.outside_mean
             << ", margins " << det.spots[0].margin << " and " << det.spots[1].margin
             << ", N_sigma " << best.initial_norms.n_sigma << " -> " << best.final_norms.n_sigma
             << "; beta 0: N_sigma " << plain.final_norms.n_sigma;
    v.require(data.currents.size() * data.m() == 256, "rotation data size");
    v.require(det.detects_largest(2, 0.05), "detection margin");
    v.require(best.final_norms.n_sigma < best.initial_norms.n_sigma, "N_sigma did not decrease");
    v.require(plain.final_norms.n_sigma >= best.final_norms.n_sigma, "beta ordering");
    const double secs = seconds_since(t7);
    v.require(secs <= 1800.0, "runtime");
    report(7, "stage 3 detection", v, secs);
  }

  // 8. knob identities
  const auto t8 = Clock::now();
  {
    Verdict v;
    SplitMix64 g_rng(0x50b0ULL);
    std::vector<double> g(s.model.n_elements());
    for (double& x : g) x = 2.0 * g_rng.uniform() - 1.0;
    const bool identity = sobolev_smooth(s.model, g, 0.0) == g;

    const auto sys = assemble(s.model, s.sigma_true, u_star.span());
    const auto ref = assemble_sharp_reference(s.model, s.sigma_true, u_star.span());
    double entry = 0.0;
    for (std::size_t i = 0; i < sys.matrix.values.size(); ++i)
      entry = std::max(entry, std::abs(sys.matrix.values[i] - ref.matrix.values[i]));
    for (std::size_t i = 0; i < sys.rhs.size(); ++i)
      entry = std::max(entry, std::abs(sys.rhs[i] - ref.rhs[i]));

    const auto layout = cfg.layout();
    bool endpoints = true;
    for (double eps : {1e-3, 0.05, 0.3162})
      for (std::size_t l = 0; l < layout.size(); ++l)
        for (double sign : {-1.0, 1.0})
          endpoints = endpoints &&
                      chi_weight(layout.centers[l] + sign * layout.half_width, l, layout, eps) == 0.5;

    const auto areas = s.model.areas();
    const double total_area = sum(areas);
    double mean_shift = 0.0;
    for (double ell : {1e-5, 1e-4, 1e-3}) {
      const auto sm = sobolev_smooth(s.model, g, ell);
      mean_shift = std::max(mean_shift, std::abs(dot(areas, sm) - dot(areas, g)) / total_area);
    }
    v.detail << " ell=0 identity " << identity << ", sharp assembly max entry difference " << entry
             << ", chi endpoints exact " << endpoints << ", Sobolev mean shift " << mean_shift;
    v.require(identity, "sobolev identity");
    v.require(entry <= 1e-12, "sharp assembly");
    v.require(endpoints, "chi endpoint");
    v.require(mean_shift <= 1e-8, "mean preservation");
    report(8, "knob identities", v, seconds_since(t8));
  }

  // 9. projection invariants on every logged row of every run above
  const auto t9 = Clock::now();
  {
    Verdict v;
    double u_sum = 0.0;
    double rise = 0.0;
    std::size_t rows = 0;
    bool in_box = true;
    for (const auto* run : runs) {
      for (std::size_t i = 0; i < run->rows.size(); ++i) {
        const auto& r = run->rows[i];
        u_sum = std::max(u_sum, std::abs(r.u_sum));
        in_box = in_box && r.sigma_min >= cfg.opt.bounds.lower && r.sigma_max <= cfg.opt.bounds.upper;
        if (i > 0) rise = std::max(rise, r.cost - run->rows[i - 1].cost);
        ++rows;
      }
    }
    v.detail << ' ' << runs.size() << " runs, " << rows << " rows, max |sum U| " << u_sum
             << ", sigma in box " << in_box << ", max cost increase " << rise;
    // Mean subtraction leaves only rounding in the sum.
    v.require(u_sum <= 1e-13, "grounding");
    v.require(in_box, "box");
    v.require(rise <= 0.0, "monotone cost");
    report(9, "projection invariants", v, seconds_since(t9));
  }

  return failures == 0 ? 0 : 1;
}
